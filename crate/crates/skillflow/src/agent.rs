//! The peer agent: detect → lookup → request → integrate.
//!
//! An [`Agent`] owns skills, keeps a [`SkillRegister`] of who owns what,
//! counts its traffic, and can both acquire skills from peers
//! ([`Agent::skill_flow`]) and serve them ([`Agent::handle_incoming`]).
//! Skill detection, message classification, and request composition are
//! pluggable, with deterministic rule-based defaults.

use std::collections::{BTreeSet, HashSet};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use thiserror::Error;

use crate::cost::CostLedger;
use crate::protocol::{
    classify_message, compose_skill_request, error_code, ComposeError, Message, MessageClass,
    MessageClassifier, RequestComposer, RuleBasedClassifier, TemplateComposer,
};
use crate::skill::{AgentId, BodyKind, SkillDescriptor, SkillError, SkillRegister};
use crate::transport::{LoopbackNet, Transport, TransportError};

/// Monotone traffic and acquisition counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub messages_sent: u64,
    pub messages_received: u64,
    pub skills_acquired: u64,
    pub skills_served: u64,
}

/// Errors from agent operations.
#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no known owner for skill `{0}`")]
    SkillUnavailable(String),
    #[error("acquiring `{skill}` from {peer} failed: {source}")]
    Acquisition {
        skill: String,
        peer: AgentId,
        source: TransportError,
    },
    #[error("peer {peer} rejected `{skill}` ({code}): {detail}")]
    Refused {
        skill: String,
        peer: AgentId,
        code: String,
        detail: String,
    },
    #[error("bad transfer of `{skill}` from {peer}: {reason}")]
    BadTransfer {
        skill: String,
        peer: AgentId,
        reason: String,
    },
    #[error("skill `{0}` is not owned")]
    NotOwned(String),
    #[error("skill `{0}` is stored as opaque text and cannot be executed")]
    NotExecutable(String),
    #[error("remote execution of `{skill}` on {peer} failed: {reason}")]
    RemoteExecution {
        skill: String,
        peer: AgentId,
        reason: String,
    },
    #[error(transparent)]
    Register(#[from] SkillError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
}

/// Result of integrating a descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Integration {
    /// False when the identical skill was already owned (idempotent repeat).
    pub newly_owned: bool,
    /// False for opaque bodies: stored, never executable. Callers treating
    /// integration as "ready to run" should check this warning flag.
    pub executable: bool,
}

/// Maps a task prompt to the registered skills it needs.
pub trait SkillDetector {
    /// May return names outside the register; [`detect_skills`] clamps them.
    fn detect(&self, prompt: &str, register: &SkillRegister) -> Vec<String>;
}

/// Detected skills for `prompt`, clamped to registered names, deduplicated,
/// in register order. Total: unknown names from any detector are dropped, so
/// the result is always a subset of register keys.
pub fn detect_skills(
    prompt: &str,
    register: &SkillRegister,
    detector: &dyn SkillDetector,
) -> Vec<String> {
    let raw: HashSet<String> = detector.detect(prompt, register).into_iter().collect();
    register
        .names()
        .filter(|name| raw.contains(*name))
        .map(str::to_string)
        .collect()
}

/// Words too generic to identify a skill; filtered out of skill keywords.
const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "an", "and", "any", "are", "as", "at", "available", "be",
    "before", "best", "book", "books", "by", "can", "check", "checks", "could", "current", "do",
    "does", "find", "finds", "for", "from", "get", "gets", "give", "gives", "go", "going", "good",
    "has", "have", "he", "hello", "her", "here", "his", "how", "i", "if", "in", "info",
    "information", "into", "is", "it", "its", "let", "like", "list", "lists", "live", "local",
    "look", "looks", "make", "makes", "me", "meet", "meeting", "my", "near", "nearby", "new",
    "no", "not", "now", "of", "on", "or", "our", "out", "per", "place", "places", "plan",
    "please", "provide", "provides", "report", "reports", "return", "returns", "run", "schedule",
    "set", "she", "should", "show", "shows", "so", "some", "tell", "than", "that", "the",
    "their", "them", "then", "there", "they", "this", "time", "times", "to", "today", "tomorrow",
    "up", "us", "use", "want", "was", "we", "were", "what", "when", "where", "which", "who",
    "will", "with", "would", "you", "your",
];

fn tokenize(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// The default rule-based detector.
///
/// A skill's keywords are its name tokens (split on `_`) plus its
/// description's words, lowercased, minus a stopword list of generic English;
/// the full skill name is always a keyword. A skill matches when any keyword
/// appears as a whole token of the prompt. When one skill's matched keywords
/// are a strict subset of another's, the less specific skill is dropped —
/// "find fishing spots" names `get_fishing_spots`, not every skill that
/// mentions fishing.
#[derive(Debug, Clone)]
pub struct KeywordDetector {
    stopwords: HashSet<String>,
}

impl Default for KeywordDetector {
    fn default() -> Self {
        KeywordDetector {
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl KeywordDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_extra_stopwords(mut self, words: impl IntoIterator<Item = String>) -> Self {
        self.stopwords.extend(words.into_iter().map(|w| w.to_lowercase()));
        self
    }

    fn keywords(&self, name: &str, description: &str) -> BTreeSet<String> {
        let mut keywords: BTreeSet<String> = name
            .split('_')
            .map(str::to_lowercase)
            .filter(|t| !t.is_empty())
            .collect();
        keywords.extend(tokenize(description));
        keywords.retain(|w| !self.stopwords.contains(w));
        keywords.insert(name.to_lowercase());
        keywords
    }
}

impl SkillDetector for KeywordDetector {
    fn detect(&self, prompt: &str, register: &SkillRegister) -> Vec<String> {
        let prompt_tokens = tokenize(prompt);
        let mut candidates: Vec<(String, BTreeSet<String>)> = Vec::new();
        for (name, entry) in register.iter() {
            let matched: BTreeSet<String> = self
                .keywords(name, &entry.description)
                .intersection(&prompt_tokens)
                .cloned()
                .collect();
            if !matched.is_empty() {
                candidates.push((name.to_string(), matched));
            }
        }
        candidates
            .iter()
            .filter(|(_, matched)| {
                !candidates.iter().any(|(_, other)| {
                    matched.len() < other.len() && matched.is_subset(other)
                })
            })
            .map(|(name, _)| name.clone())
            .collect()
    }
}

/// An immutable snapshot of an agent, safe to pass between threads.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: AgentId,
    pub owned_skills: IndexMap<String, SkillDescriptor>,
    pub register: SkillRegister,
    pub ledger: CostLedger,
    pub counters: Counters,
}

/// A live peer agent.
pub struct Agent {
    id: AgentId,
    owned: IndexMap<String, SkillDescriptor>,
    register: SkillRegister,
    ledger: CostLedger,
    counters: Counters,
    detector: Box<dyn SkillDetector + Send>,
    classifier: Box<dyn MessageClassifier + Send>,
    composer: Box<dyn RequestComposer + Send>,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("id", &self.id)
            .field("owned", &self.owned.keys().collect::<Vec<_>>())
            .field("counters", &self.counters)
            .finish_non_exhaustive()
    }
}

impl Agent {
    pub fn new(id: AgentId) -> Self {
        Agent {
            id,
            owned: IndexMap::new(),
            register: SkillRegister::new(),
            ledger: CostLedger::new(),
            counters: Counters::default(),
            detector: Box::new(KeywordDetector::default()),
            classifier: Box::new(RuleBasedClassifier),
            composer: Box::new(TemplateComposer),
        }
    }

    pub fn with_detector(mut self, detector: Box<dyn SkillDetector + Send>) -> Self {
        self.detector = detector;
        self
    }

    pub fn with_classifier(mut self, classifier: Box<dyn MessageClassifier + Send>) -> Self {
        self.classifier = classifier;
        self
    }

    pub fn with_composer(mut self, composer: Box<dyn RequestComposer + Send>) -> Self {
        self.composer = composer;
        self
    }

    /// Replaces the register wholesale, e.g. when reloading from disk.
    pub fn with_register(mut self, register: SkillRegister) -> Self {
        self.register = register;
        self
    }

    pub fn id(&self) -> &AgentId {
        &self.id
    }

    pub fn owns(&self, skill: &str) -> bool {
        self.owned.contains_key(skill)
    }

    pub fn owned_names(&self) -> Vec<String> {
        self.owned.keys().cloned().collect()
    }

    pub fn descriptor(&self, skill: &str) -> Option<&SkillDescriptor> {
        self.owned.get(skill)
    }

    pub fn register(&self) -> &SkillRegister {
        &self.register
    }

    /// Register mutation is append-only by the register's own API, so the
    /// ownership invariants cannot be broken from here.
    pub fn register_mut(&mut self) -> &mut SkillRegister {
        &mut self.register
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut CostLedger {
        &mut self.ledger
    }

    pub fn snapshot(&self) -> AgentState {
        AgentState {
            id: self.id.clone(),
            owned_skills: self.owned.clone(),
            register: self.register.clone(),
            ledger: self.ledger.clone(),
            counters: self.counters,
        }
    }

    /// Detects the skills needed by `prompt` using this agent's detector.
    pub fn detect(&self, prompt: &str) -> Vec<String> {
        detect_skills(prompt, &self.register, self.detector.as_ref())
    }

    /// Stores `descriptor` in the owned set and records this agent as an
    /// owner. Idempotent for identical descriptors; a name collision with a
    /// different body is a conflict, never a silent replacement. Does not
    /// touch the network counters — callers acquiring over the network count
    /// the acquisition themselves.
    pub fn integrate_skill(&mut self, descriptor: SkillDescriptor) -> Result<Integration, AgentError> {
        let executable = descriptor.body_kind == BodyKind::ConstString;
        if let Some(existing) = self.owned.get(&descriptor.name) {
            if existing == &descriptor {
                return Ok(Integration {
                    newly_owned: false,
                    executable,
                });
            }
            return Err(AgentError::Register(SkillError::DigestConflict(
                descriptor.name.clone(),
            )));
        }
        self.register
            .record_descriptor(&descriptor, self.id.clone())?;
        self.owned.insert(descriptor.name.clone(), descriptor);
        Ok(Integration {
            newly_owned: true,
            executable,
        })
    }

    /// Runs an owned, executable skill: returns its constant body. Pure —
    /// no counters, no network.
    pub fn execute_skill(&self, skill: &str) -> Result<&str, AgentError> {
        let descriptor = self
            .owned
            .get(skill)
            .ok_or_else(|| AgentError::NotOwned(skill.to_string()))?;
        match descriptor.body_kind {
            BodyKind::ConstString => Ok(&descriptor.body),
            BodyKind::OpaqueText => Err(AgentError::NotExecutable(skill.to_string())),
        }
    }

    /// First register-listed owner of `skill` that is not this agent.
    fn pick_owner(&self, skill: &str) -> Result<AgentId, AgentError> {
        self.register
            .lookup(skill)
            .iter()
            .find(|owner| *owner != &self.id)
            .cloned()
            .ok_or_else(|| AgentError::SkillUnavailable(skill.to_string()))
    }

    /// Ensures every skill detected in `prompt` is owned, acquiring missing
    /// ones from their first registered owner; returns the detected set.
    ///
    /// Per missing skill: compose the request, open a connection, send a
    /// [`Message::SkillRequest`], await the [`Message::SkillTransfer`],
    /// integrate it, and acknowledge — two messages sent, one received, one
    /// skill acquired. Skills already owned cost no messages at all.
    pub fn skill_flow(
        &mut self,
        prompt: &str,
        transport: &dyn Transport,
    ) -> Result<Vec<String>, AgentError> {
        let detected = self.detect(prompt);
        for skill in &detected {
            if self.owned.contains_key(skill) {
                continue;
            }
            let owner = self.pick_owner(skill)?;
            let text =
                compose_skill_request(skill, &owner, &self.register, self.composer.as_ref())?;
            let acquisition = |source: TransportError| AgentError::Acquisition {
                skill: skill.clone(),
                peer: owner.clone(),
                source,
            };
            let mut conn = transport.connect(&owner).map_err(acquisition)?;
            conn.send(&Message::SkillRequest {
                skill: skill.clone(),
                requester: self.id.clone(),
                text,
            })
            .map_err(acquisition)?;
            self.counters.messages_sent += 1;
            let reply = conn.recv().map_err(acquisition)?;
            self.counters.messages_received += 1;
            match reply {
                Message::SkillTransfer { descriptor } => {
                    if descriptor.name != *skill {
                        return Err(AgentError::BadTransfer {
                            skill: skill.clone(),
                            peer: owner,
                            reason: format!("transfer carried `{}` instead", descriptor.name),
                        });
                    }
                    let integration = self.integrate_skill(descriptor)?;
                    if integration.newly_owned {
                        self.counters.skills_acquired += 1;
                    }
                    conn.send(&Message::Ack {
                        reference: skill.clone(),
                    })
                    .map_err(acquisition)?;
                    self.counters.messages_sent += 1;
                }
                Message::ProtocolError { code, detail } => {
                    return Err(AgentError::Refused {
                        skill: skill.clone(),
                        peer: owner,
                        code,
                        detail,
                    })
                }
                other => {
                    return Err(AgentError::BadTransfer {
                        skill: skill.clone(),
                        peer: owner,
                        reason: format!("unexpected `{}` reply", other.type_tag()),
                    })
                }
            }
        }
        Ok(detected)
    }

    /// Asks a skill's owner to run it remotely and returns the result text.
    /// This is the no-acquisition path: one exchange per call, every call.
    pub fn remote_execute(
        &mut self,
        skill: &str,
        transport: &dyn Transport,
    ) -> Result<String, AgentError> {
        let owner = self.pick_owner(skill)?;
        let failure = |reason: String| AgentError::RemoteExecution {
            skill: skill.to_string(),
            peer: owner.clone(),
            reason,
        };
        let mut conn = transport
            .connect(&owner)
            .map_err(|e| failure(e.to_string()))?;
        conn.send(&Message::TaskText {
            text: format!("Please run '{skill}' and reply with the result."),
        })
        .map_err(|e| failure(e.to_string()))?;
        self.counters.messages_sent += 1;
        let reply = conn.recv().map_err(|e| failure(e.to_string()))?;
        self.counters.messages_received += 1;
        match reply {
            Message::TaskText { text } => Ok(text),
            Message::ProtocolError { code, detail } => Err(failure(format!("{code}: {detail}"))),
            other => Err(failure(format!("unexpected `{}` reply", other.type_tag()))),
        }
    }

    /// Serves one incoming message, returning the response to send back (if
    /// any). Never panics on hostile input; unserviceable messages get a
    /// [`Message::ProtocolError`].
    pub fn handle_incoming(&mut self, message: Message) -> Option<Message> {
        self.counters.messages_received += 1;
        let response = match message {
            Message::SkillRequest {
                skill, requester, ..
            } => Some(self.serve_skill(&skill, Some(requester))),
            Message::SkillTransfer { descriptor } => {
                let name = descriptor.name.clone();
                Some(match self.integrate_skill(descriptor) {
                    Ok(integration) => {
                        if integration.newly_owned {
                            self.counters.skills_acquired += 1;
                        }
                        Message::Ack { reference: name }
                    }
                    Err(e) => Message::ProtocolError {
                        code: error_code::CONFLICT.to_string(),
                        detail: e.to_string(),
                    },
                })
            }
            Message::TaskText { text } => self.route_task_text(&text),
            Message::Ack { .. } | Message::ProtocolError { .. } => None,
        };
        if response.is_some() {
            self.counters.messages_sent += 1;
        }
        response
    }

    /// Transfer an owned skill (recording `requester` as a new owner when
    /// identified), or refuse with `not_owner`.
    fn serve_skill(&mut self, skill: &str, requester: Option<AgentId>) -> Message {
        match self.owned.get(skill) {
            Some(descriptor) => {
                let descriptor = descriptor.clone();
                if let Some(requester) = requester {
                    // Both-sides register update; our own entry always exists
                    // with this exact description, so this cannot conflict.
                    let _ = self
                        .register
                        .record(skill, &descriptor.description, requester);
                }
                self.counters.skills_served += 1;
                Message::SkillTransfer { descriptor }
            }
            None => Message::ProtocolError {
                code: error_code::NOT_OWNER.to_string(),
                detail: format!("{} does not own `{skill}`", self.id),
            },
        }
    }

    fn route_task_text(&mut self, text: &str) -> Option<Message> {
        let classification =
            classify_message(text, &self.register.summaries(), self.classifier.as_ref());
        match classification.class {
            MessageClass::AskingForCode => {
                let skill = self
                    .register
                    .names()
                    .find(|name| crate::protocol::contains_word(text, name))
                    .map(str::to_string);
                Some(match skill {
                    Some(skill) => self.serve_skill(&skill, None),
                    None => Message::ProtocolError {
                        code: error_code::UNSUPPORTED.to_string(),
                        detail: "no registered skill is named in the request".to_string(),
                    },
                })
            }
            MessageClass::IncomingCode => Some(match first_quoted_identifier(text) {
                Some(name) => {
                    let descriptor =
                        SkillDescriptor::opaque_text(name.clone(), "received as pasted code", text)
                            .expect("quoted identifier already validated");
                    match self.integrate_skill(descriptor) {
                        Ok(integration) => {
                            if integration.newly_owned {
                                self.counters.skills_acquired += 1;
                            }
                            Message::Ack { reference: name }
                        }
                        Err(e) => Message::ProtocolError {
                            code: error_code::CONFLICT.to_string(),
                            detail: e.to_string(),
                        },
                    }
                }
                None => Message::ProtocolError {
                    code: error_code::UNSUPPORTED.to_string(),
                    detail: "could not extract a skill name from the code".to_string(),
                },
            }),
            MessageClass::Continue => {
                // Application behavior: answer remote-run requests that name
                // an owned skill in quotes; stay silent on anything else.
                let name = first_quoted_identifier(text)?;
                Some(match self.execute_skill(&name) {
                    Ok(result) => Message::TaskText {
                        text: result.to_string(),
                    },
                    Err(AgentError::NotOwned(_)) => Message::ProtocolError {
                        code: error_code::NOT_OWNER.to_string(),
                        detail: format!("{} does not own `{name}`", self.id),
                    },
                    Err(e) => Message::ProtocolError {
                        code: error_code::UNSUPPORTED.to_string(),
                        detail: e.to_string(),
                    },
                })
            }
        }
    }

    /// Registers this agent as a serving peer on an in-process network.
    pub fn attach_to_loopback(agent: Arc<Mutex<Agent>>, net: &LoopbackNet) {
        let id = agent.lock().expect("agent lock poisoned").id().clone();
        net.register_handler(id, move |message| {
            agent
                .lock()
                .expect("agent lock poisoned")
                .handle_incoming(message)
        });
    }
}

/// The first span between two adjacent single quotes that is a valid
/// identifier: how skill names are picked out of free-form text like
/// "Please run 'get_weather' and reply with the result."
fn first_quoted_identifier(text: &str) -> Option<String> {
    let positions: Vec<usize> = text
        .char_indices()
        .filter(|(_, c)| *c == '\'')
        .map(|(i, _)| i)
        .collect();
    positions.windows(2).find_map(|pair| {
        let candidate = &text[pair[0] + 1..pair[1]];
        crate::skill::validate_identifier(candidate)
            .ok()
            .map(|_| candidate.to_string())
    })
}
