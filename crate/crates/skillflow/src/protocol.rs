//! Wire protocol: length-prefixed JSON frames, the message vocabulary,
//! incoming-message classification, and skill-request composition.
//!
//! A frame is a 32-bit big-endian payload length followed by exactly that
//! many bytes of UTF-8 JSON. Payloads are canonical: object fields are
//! written with `type` first and the remaining fields in alphabetical order,
//! so equal messages always serialize to identical bytes and golden-file
//! tests can be byte-exact.
//!
//! Classification and composition are pluggable behind the
//! [`MessageClassifier`] and [`RequestComposer`] traits with deterministic
//! rule-based defaults, keeping everything runnable offline; an external
//! adapter can be slotted in, and classification falls back to the rules
//! (with a warning flag) if that adapter fails.

use std::io::{self, Read};

use serde_json::Value;
use thiserror::Error;

use crate::skill::{validate_identifier, AgentId, BodyKind, SkillDescriptor, SkillRegister};

/// Maximum frame payload in bytes (16 MiB). Large enough for any skill body
/// in scope, small enough to stop a hostile length prefix from forcing a
/// giant allocation.
pub const MAX_FRAME_PAYLOAD: usize = 16 * 1024 * 1024;

/// Error codes carried by [`Message::ProtocolError`].
pub mod error_code {
    /// The peer sent bytes that did not decode to a message.
    pub const BAD_FRAME: &str = "bad_frame";
    /// A skill was requested from an agent that does not own it.
    pub const NOT_OWNER: &str = "not_owner";
    /// The message type is understood but not serviceable here.
    pub const UNSUPPORTED: &str = "unsupported";
    /// An incoming skill collides with an existing one under the same name.
    pub const CONFLICT: &str = "conflict";
}

/// Everything that travels between agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// Ask `requester`-side: please transfer `skill`. `text` carries the
    /// human-readable request sentence (see [`compose_skill_request`]).
    SkillRequest {
        skill: String,
        requester: AgentId,
        text: String,
    },
    /// The full skill in response to a request.
    SkillTransfer { descriptor: SkillDescriptor },
    /// Free-form task text; classified on receipt.
    TaskText { text: String },
    /// Acknowledges integration of the named skill.
    Ack { reference: String },
    /// An error reply; `code` is one of [`error_code`]'s constants.
    ProtocolError { code: String, detail: String },
}

impl Message {
    /// The wire value of the `type` field.
    pub fn type_tag(&self) -> &'static str {
        match self {
            Message::SkillRequest { .. } => "skill_request",
            Message::SkillTransfer { .. } => "skill_transfer",
            Message::TaskText { .. } => "task_text",
            Message::Ack { .. } => "ack",
            Message::ProtocolError { .. } => "protocol_error",
        }
    }
}

/// Errors while encoding a frame.
#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("payload of {len} bytes exceeds the {MAX_FRAME_PAYLOAD}-byte frame cap")]
    Oversize { len: usize },
    #[error("message field invalid: {0}")]
    InvalidField(String),
}

/// Errors while decoding bytes into a [`Message`]. Decoding is total: any
/// byte sequence yields a message or one of these, never a panic.
#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("input ended before the frame was complete (needed {needed} bytes, had {got})")]
    ShortRead { needed: usize, got: usize },
    #[error("declared payload of {len} bytes exceeds the {MAX_FRAME_PAYLOAD}-byte frame cap")]
    CapExceeded { len: usize },
    #[error("payload is not valid UTF-8")]
    InvalidUtf8,
    #[error("payload is not a JSON object: {0}")]
    BadJson(String),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` invalid: {reason}")]
    BadField { field: &'static str, reason: String },
    #[error("{extra} bytes of trailing data after the frame")]
    TrailingData { extra: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("serializing a string to JSON cannot fail")
}

/// Canonical JSON payload: `type` first, remaining fields alphabetical.
fn canonical_json(message: &Message) -> Result<String, EncodeError> {
    let check = |label: &str, value: &str| -> Result<(), EncodeError> {
        validate_identifier(value)
            .map_err(|_| EncodeError::InvalidField(format!("{label} `{value}`")))
    };
    Ok(match message {
        Message::SkillRequest {
            skill,
            requester,
            text,
        } => {
            check("skill", skill)?;
            format!(
                r#"{{"type":"skill_request","requester":{},"skill":{},"text":{}}}"#,
                json_str(requester.as_str()),
                json_str(skill),
                json_str(text)
            )
        }
        Message::SkillTransfer { descriptor } => {
            check("skill", &descriptor.name)?;
            format!(
                r#"{{"type":"skill_transfer","descriptor":{{"body":{},"body_kind":{},"description":{},"name":{}}}}}"#,
                json_str(&descriptor.body),
                json_str(descriptor.body_kind.as_str()),
                json_str(&descriptor.description),
                json_str(&descriptor.name)
            )
        }
        Message::TaskText { text } => {
            format!(r#"{{"type":"task_text","text":{}}}"#, json_str(text))
        }
        Message::Ack { reference } => {
            check("ref", reference)?;
            format!(r#"{{"type":"ack","ref":{}}}"#, json_str(reference))
        }
        Message::ProtocolError { code, detail } => format!(
            r#"{{"type":"protocol_error","code":{},"detail":{}}}"#,
            json_str(code),
            json_str(detail)
        ),
    })
}

/// Encodes one message as a length-prefixed frame.
pub fn encode_frame(message: &Message) -> Result<Vec<u8>, EncodeError> {
    let payload = canonical_json(message)?;
    let len = payload.len();
    if len > MAX_FRAME_PAYLOAD {
        return Err(EncodeError::Oversize { len });
    }
    let mut frame = Vec::with_capacity(4 + len);
    frame.extend_from_slice(&(len as u32).to_be_bytes());
    frame.extend_from_slice(payload.as_bytes());
    Ok(frame)
}

fn require_str<'v>(obj: &'v Value, field: &'static str) -> Result<&'v str, DecodeError> {
    match obj.get(field) {
        None => Err(DecodeError::MissingField(field)),
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(DecodeError::BadField {
            field,
            reason: format!("expected a string, got {other}"),
        }),
    }
}

fn require_identifier<'v>(obj: &'v Value, field: &'static str) -> Result<&'v str, DecodeError> {
    let s = require_str(obj, field)?;
    validate_identifier(s).map_err(|e| DecodeError::BadField {
        field,
        reason: e.to_string(),
    })?;
    Ok(s)
}

/// Decodes a JSON payload (without the length prefix) into a message.
///
/// Unknown extra fields are ignored so older peers can talk to newer ones;
/// the canonical encoder never produces any.
pub fn decode_payload(payload: &[u8]) -> Result<Message, DecodeError> {
    let text = std::str::from_utf8(payload).map_err(|_| DecodeError::InvalidUtf8)?;
    let value: Value =
        serde_json::from_str(text).map_err(|e| DecodeError::BadJson(e.to_string()))?;
    if !value.is_object() {
        return Err(DecodeError::BadJson(format!(
            "top level must be an object, got {value}"
        )));
    }
    let tag = require_str(&value, "type")?;
    match tag {
        "skill_request" => {
            let requester = require_identifier(&value, "requester")?;
            let requester = AgentId::new(requester).expect("validated above");
            let skill = require_identifier(&value, "skill")?.to_string();
            let text = require_str(&value, "text")?.to_string();
            Ok(Message::SkillRequest {
                skill,
                requester,
                text,
            })
        }
        "skill_transfer" => {
            let descriptor = match value.get("descriptor") {
                None => return Err(DecodeError::MissingField("descriptor")),
                Some(d) if d.is_object() => d,
                Some(other) => {
                    return Err(DecodeError::BadField {
                        field: "descriptor",
                        reason: format!("expected an object, got {other}"),
                    })
                }
            };
            let name = require_identifier(descriptor, "name")?;
            let description = require_str(descriptor, "description")?;
            let kind_str = require_str(descriptor, "body_kind")?;
            let body_kind = BodyKind::parse(kind_str).ok_or_else(|| DecodeError::BadField {
                field: "body_kind",
                reason: format!("unknown body kind `{kind_str}`"),
            })?;
            let body = require_str(descriptor, "body")?;
            let descriptor = SkillDescriptor::new(name, description, body_kind, body)
                .expect("name validated above");
            Ok(Message::SkillTransfer { descriptor })
        }
        "task_text" => Ok(Message::TaskText {
            text: require_str(&value, "text")?.to_string(),
        }),
        "ack" => Ok(Message::Ack {
            reference: require_identifier(&value, "ref")?.to_string(),
        }),
        "protocol_error" => Ok(Message::ProtocolError {
            code: require_str(&value, "code")?.to_string(),
            detail: require_str(&value, "detail")?.to_string(),
        }),
        other => Err(DecodeError::UnknownType(other.to_string())),
    }
}

/// Decodes exactly one frame from `bytes`; trailing bytes are an error.
/// Inverse of [`encode_frame`] on valid input.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, DecodeError> {
    if bytes.len() < 4 {
        return Err(DecodeError::ShortRead {
            needed: 4,
            got: bytes.len(),
        });
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_FRAME_PAYLOAD {
        return Err(DecodeError::CapExceeded { len });
    }
    let total = 4 + len;
    if bytes.len() < total {
        return Err(DecodeError::ShortRead {
            needed: total,
            got: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(DecodeError::TrailingData {
            extra: bytes.len() - total,
        });
    }
    decode_payload(&bytes[4..total])
}

/// Reads frames one at a time from a byte stream.
///
/// Each connection owns one reader (readers must not be shared). A payload
/// that fails to decode still consumes its frame, so the caller can reply
/// with a protocol error and keep the stream usable. Partial reads are
/// buffered across calls: a timeout (`WouldBlock`/`TimedOut`) surfaces as a
/// [`DecodeError::Io`] but loses nothing — the next `read_frame` resumes
/// exactly where the stream stalled, so poll loops over sockets with read
/// timeouts never corrupt framing.
#[derive(Debug)]
pub struct FrameReader<R: Read> {
    inner: R,
    state: FrameState,
}

#[derive(Debug)]
enum FrameState {
    Header { buf: [u8; 4], filled: usize },
    Payload { buf: Vec<u8>, filled: usize },
}

impl FrameState {
    fn fresh() -> Self {
        FrameState::Header {
            buf: [0u8; 4],
            filled: 0,
        }
    }
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        FrameReader {
            inner,
            state: FrameState::fresh(),
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }

    /// Reads the next frame. `Ok(None)` is a clean end-of-stream at a frame
    /// boundary; EOF inside a frame is a [`DecodeError::ShortRead`].
    pub fn read_frame(&mut self) -> Result<Option<Message>, DecodeError> {
        loop {
            match &mut self.state {
                FrameState::Header { buf, filled } => {
                    while *filled < 4 {
                        match self.inner.read(&mut buf[*filled..]) {
                            Ok(0) if *filled == 0 => return Ok(None),
                            Ok(0) => {
                                let got = *filled;
                                self.state = FrameState::fresh();
                                return Err(DecodeError::ShortRead { needed: 4, got });
                            }
                            Ok(n) => *filled += n,
                            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                            // Resumable: header bytes stay buffered.
                            Err(e) => return Err(e.into()),
                        }
                    }
                    let len = u32::from_be_bytes(*buf) as usize;
                    if len > MAX_FRAME_PAYLOAD {
                        self.state = FrameState::fresh();
                        return Err(DecodeError::CapExceeded { len });
                    }
                    self.state = FrameState::Payload {
                        buf: vec![0u8; len],
                        filled: 0,
                    };
                }
                FrameState::Payload { buf, filled } => {
                    while *filled < buf.len() {
                        match self.inner.read(&mut buf[*filled..]) {
                            Ok(0) => {
                                let (needed, got) = (buf.len(), *filled);
                                self.state = FrameState::fresh();
                                return Err(DecodeError::ShortRead { needed, got });
                            }
                            Ok(n) => *filled += n,
                            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                            // Resumable: payload bytes stay buffered.
                            Err(e) => return Err(e.into()),
                        }
                    }
                    let payload = std::mem::take(buf);
                    self.state = FrameState::fresh();
                    return decode_payload(&payload).map(Some);
                }
            }
        }
    }
}

/// The three-way routing decision for incoming text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageClass {
    /// The sender wants a skill transferred to them.
    AskingForCode,
    /// The text carries code to integrate.
    IncomingCode,
    /// Ordinary content; hand it to the application.
    Continue,
}

impl MessageClass {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageClass::AskingForCode => "asking_for_code",
            MessageClass::IncomingCode => "incoming_code",
            MessageClass::Continue => "continue",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "asking_for_code" => Some(MessageClass::AskingForCode),
            "incoming_code" => Some(MessageClass::IncomingCode),
            "continue" => Some(MessageClass::Continue),
            _ => None,
        }
    }
}

/// Failure of an external classifier or composer adapter.
#[derive(Debug, Error, PartialEq)]
#[error("adapter failure: {0}")]
pub struct AdapterError(pub String);

/// Pluggable three-way classifier. `known_skills` holds `(name, description)`
/// pairs from the local register.
pub trait MessageClassifier {
    fn classify(
        &self,
        text: &str,
        known_skills: &[(String, String)],
    ) -> Result<MessageClass, AdapterError>;
}

/// A classification plus whether the external adapter failed and the
/// rule-based fallback produced the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    pub class: MessageClass,
    pub fell_back: bool,
}

/// True when `needle` occurs in `haystack` delimited by non-word characters
/// (word characters are alphanumerics and `_`).
pub(crate) fn contains_word(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let mut start = 0;
    while let Some(pos) = haystack[start..].find(needle) {
        let begin = start + pos;
        let end = begin + needle.len();
        let left_ok = haystack[..begin].chars().next_back().is_none_or(|c| !is_word(c));
        let right_ok = haystack[end..].chars().next().is_none_or(|c| !is_word(c));
        if left_ok && right_ok {
            return true;
        }
        start = begin + 1;
    }
    false
}

/// The deterministic default classifier.
///
/// 1. Code markers win: a line opening with a function-definition keyword
///    (`def `, `fn `, `function `), or the text containing `(`, `)`, and the
///    standalone word `return`, classify as [`MessageClass::IncomingCode`].
///    `return` must be a whole word — prose like "(returns current weather)"
///    is not code.
/// 2. Otherwise, a known skill name appearing verbatim (word-delimited)
///    together with a request cue — `share`, `send`, `show`, `code for`, or
///    `give`, case-insensitive — is [`MessageClass::AskingForCode`].
/// 3. Everything else is [`MessageClass::Continue`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedClassifier;

const REQUEST_CUES: [&str; 5] = ["share", "send", "show", "code for", "give"];

impl RuleBasedClassifier {
    fn has_code_markers(text: &str) -> bool {
        let definition_line = text.lines().any(|line| {
            let trimmed = line.trim_start();
            trimmed.starts_with("def ")
                || trimmed.starts_with("fn ")
                || trimmed.starts_with("function ")
        });
        definition_line
            || (text.contains('(') && text.contains(')') && contains_word(text, "return"))
    }

    fn asks_for_known_skill(text: &str, known_skills: &[(String, String)]) -> bool {
        let lowered = text.to_lowercase();
        let has_cue = REQUEST_CUES.iter().any(|cue| lowered.contains(cue));
        has_cue
            && known_skills
                .iter()
                .any(|(name, _)| contains_word(text, name))
    }
}

impl MessageClassifier for RuleBasedClassifier {
    fn classify(
        &self,
        text: &str,
        known_skills: &[(String, String)],
    ) -> Result<MessageClass, AdapterError> {
        if Self::has_code_markers(text) {
            Ok(MessageClass::IncomingCode)
        } else if Self::asks_for_known_skill(text, known_skills) {
            Ok(MessageClass::AskingForCode)
        } else {
            Ok(MessageClass::Continue)
        }
    }
}

/// Classifies `text`, falling back to [`RuleBasedClassifier`] (and setting
/// `fell_back`) if the supplied classifier fails.
pub fn classify_message(
    text: &str,
    known_skills: &[(String, String)],
    classifier: &dyn MessageClassifier,
) -> Classification {
    match classifier.classify(text, known_skills) {
        Ok(class) => Classification {
            class,
            fell_back: false,
        },
        Err(_) => {
            let class = RuleBasedClassifier
                .classify(text, known_skills)
                .expect("rule-based classification is infallible");
            Classification {
                class,
                fell_back: true,
            }
        }
    }
}

/// Errors from [`compose_skill_request`].
#[derive(Debug, Error, PartialEq)]
pub enum ComposeError {
    #[error("skill `{0}` is not in the local register")]
    UnknownSkill(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

/// Pluggable request-sentence composer.
pub trait RequestComposer {
    fn compose(
        &self,
        skill: &str,
        owner: &AgentId,
        description: &str,
    ) -> Result<String, AdapterError>;
}

/// The deterministic default composer with a fixed polite template.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateComposer;

impl RequestComposer for TemplateComposer {
    fn compose(
        &self,
        skill: &str,
        owner: &AgentId,
        description: &str,
    ) -> Result<String, AdapterError> {
        Ok(format!(
            "Hello {owner}, could you please share the code for the skill '{skill}' ({description})?"
        ))
    }
}

/// Composes the request sentence for `skill` addressed to `owner`, taking
/// the description from the local register. The produced sentence contains
/// the skill name verbatim, so the default classifier routes it as
/// [`MessageClass::AskingForCode`].
pub fn compose_skill_request(
    skill: &str,
    owner: &AgentId,
    register: &SkillRegister,
    composer: &dyn RequestComposer,
) -> Result<String, ComposeError> {
    let entry = register
        .get(skill)
        .ok_or_else(|| ComposeError::UnknownSkill(skill.to_string()))?;
    Ok(composer.compose(skill, owner, &entry.description)?)
}
