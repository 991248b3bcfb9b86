//! The application benchmark: three calendar-domain agents on a loopback
//! network, template-generated tasks, a deterministic latency model driven
//! by real exchange counters, scripted schedule negotiation, and the
//! per-iteration statistical comparison of baseline vs. skill-sharing runs.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::agent::{detect_skills, Agent, AgentError, KeywordDetector};
use crate::rng::{stream_rng, StreamDomain};
use crate::skill::{AgentId, SkillDescriptor, SkillError, SkillRegister};
use crate::stats::{bh_fdr_adjust, mean_ci95, welch_t_test, StatsError};
use crate::transport::LoopbackNet;

/// Scheduling granularity: all negotiated slots live on a 30-minute grid.
pub const SLOT_MINUTES: u32 = 30;
/// Maximum proposals per negotiation before it fails.
pub const DEFAULT_NEGOTIATION_ROUNDS: u32 = 5;
const MINUTES_PER_DAY: u32 = 1440;

/// Errors from benchmark configuration, scheduling, and analysis.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid template set: {0}")]
    InvalidTemplate(String),
    #[error("template `{template}` references unknown skill `{skill}`")]
    UnknownSkill { template: String, skill: String },
    #[error("template `{template}` does not detect its declared skills: {detail}")]
    DetectionMismatch { template: String, detail: String },
    #[error("invalid time `{0}`: expected HH:MM on a {SLOT_MINUTES}-minute grid")]
    BadTime(String),
    #[error("calendar conflict for {owner}: {detail}")]
    CalendarConflict { owner: AgentId, detail: String },
    #[error("negotiation for `{title}` failed after {messages} message(s)")]
    NegotiationFailed { title: String, messages: u32 },
    #[error("invalid latency model: {0}")]
    InvalidLatency(String),
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
    #[error("mismatched run records: {0}")]
    MismatchedRuns(String),
    #[error("malformed benchmark CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("template file error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Minutes since the benchmark epoch (day 0, 00:00). Days chain at 1440.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Minutes(pub u32);

impl Minutes {
    /// Parses "HH:MM" as a time on day 0.
    pub fn parse_hhmm(text: &str) -> Result<Self, BenchError> {
        let bad = || BenchError::BadTime(text.to_string());
        let (h, m) = text.split_once(':').ok_or_else(bad)?;
        let hours: u32 = h.parse().map_err(|_| bad())?;
        let minutes: u32 = m.parse().map_err(|_| bad())?;
        if h.len() != 2 || m.len() != 2 || hours >= 24 || minutes >= 60 {
            return Err(bad());
        }
        Ok(Minutes(hours * 60 + minutes))
    }

    /// The same wall time shifted to `day`.
    pub fn on_day(self, day: u32) -> Minutes {
        Minutes(self.0 + day * MINUTES_PER_DAY)
    }
}

impl fmt::Display for Minutes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (day, rest) = (self.0 / MINUTES_PER_DAY, self.0 % MINUTES_PER_DAY);
        write!(f, "day {} {:02}:{:02}", day, rest / 60, rest % 60)
    }
}

/// A half-open scheduling window [start, end).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub start: Minutes,
    pub end: Minutes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalendarEvent {
    pub title: String,
    pub start: Minutes,
    pub end: Minutes,
}

/// One agent's calendar: non-overlapping events, kept sorted by start.
#[derive(Debug, Clone)]
pub struct Calendar {
    owner: AgentId,
    events: Vec<CalendarEvent>,
}

impl Calendar {
    pub fn new(owner: AgentId) -> Self {
        Calendar {
            owner,
            events: Vec::new(),
        }
    }

    pub fn owner(&self) -> &AgentId {
        &self.owner
    }

    pub fn events(&self) -> &[CalendarEvent] {
        &self.events
    }

    /// True when [start, end) overlaps no existing event.
    pub fn is_free(&self, start: Minutes, end: Minutes) -> bool {
        self.events.iter().all(|e| end <= e.start || e.end <= start)
    }

    /// Adds an event, rejecting overlaps — the no-double-booking invariant.
    pub fn add_event(
        &mut self,
        title: impl Into<String>,
        start: Minutes,
        end: Minutes,
    ) -> Result<(), BenchError> {
        if start >= end {
            return Err(BenchError::CalendarConflict {
                owner: self.owner.clone(),
                detail: format!("event `{}` ends before it starts", title.into()),
            });
        }
        if !self.is_free(start, end) {
            return Err(BenchError::CalendarConflict {
                owner: self.owner.clone(),
                detail: format!("slot {start}–{end} is already booked"),
            });
        }
        let event = CalendarEvent {
            title: title.into(),
            start,
            end,
        };
        let at = self.events.partition_point(|e| e.start < event.start);
        self.events.insert(at, event);
        Ok(())
    }

    /// Earliest free grid slot of `duration` minutes inside `window`
    /// starting at or after `not_before`. Slots are aligned to the window
    /// start in `duration` steps.
    pub fn earliest_free(
        &self,
        window: TimeWindow,
        duration: u32,
        not_before: Minutes,
    ) -> Option<Minutes> {
        let mut start = window.start;
        while start.0 + duration <= window.end.0 {
            let end = Minutes(start.0 + duration);
            if start >= not_before && self.is_free(start, end) {
                return Some(start);
            }
            start = Minutes(start.0 + duration);
        }
        None
    }
}

/// Outcome of a successful negotiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Negotiation {
    pub start: Minutes,
    pub end: Minutes,
    /// Total messages exchanged: proposals plus the final acceptance.
    pub messages: u32,
}

/// Scripted propose/counter/accept scheduling between two calendars.
///
/// The requestor proposes its earliest free grid slot in the window; the
/// receiver accepts if free (2 messages in the best case), otherwise
/// counters with its own earliest free slot at or after the proposal, and
/// the roles flip. Proposals never move backwards, so the script terminates;
/// after `max_rounds` proposals without acceptance (or when a proposer has
/// no free slot left) the negotiation fails. On success both calendars gain
/// the event.
pub fn negotiate_schedule(
    requestor: &mut Calendar,
    counterpart: &mut Calendar,
    window: TimeWindow,
    title: &str,
    max_rounds: u32,
) -> Result<Negotiation, BenchError> {
    let mut messages = 0u32;
    let mut cursor = window.start;
    let mut requestor_proposes = true;
    for _ in 0..max_rounds {
        let proposer: &Calendar = if requestor_proposes { requestor } else { counterpart };
        let Some(slot) = proposer.earliest_free(window, SLOT_MINUTES, cursor) else {
            return Err(BenchError::NegotiationFailed {
                title: title.to_string(),
                messages,
            });
        };
        messages += 1; // the proposal (or counter-proposal)
        let end = Minutes(slot.0 + SLOT_MINUTES);
        let receiver: &Calendar = if requestor_proposes { counterpart } else { requestor };
        if receiver.is_free(slot, end) {
            messages += 1; // the acceptance
            requestor.add_event(title, slot, end)?;
            counterpart.add_event(title, slot, end)?;
            return Ok(Negotiation {
                start: slot,
                end,
                messages,
            });
        }
        cursor = slot;
        requestor_proposes = !requestor_proposes;
    }
    Err(BenchError::NegotiationFailed {
        title: title.to_string(),
        messages,
    })
}

/// One calendar action a task performs: negotiate `title` into `window`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalendarAction {
    pub title: String,
    pub window: TimeWindow,
}

/// A generated benchmark task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchTask {
    pub id: u64,
    pub prompt: String,
    /// In register order; the prompt is validated to detect exactly this set.
    pub required_skills: Vec<String>,
    /// Whose calendar the actions are negotiated with.
    pub counterpart: AgentId,
    pub calendar_actions: Vec<CalendarAction>,
}

#[derive(Debug, Deserialize)]
struct RawTemplateSet {
    persons: Vec<String>,
    #[serde(rename = "templates")]
    templates: Vec<RawTemplate>,
}

#[derive(Debug, Deserialize)]
struct RawTemplate {
    prompt: String,
    skills: Vec<String>,
    title: String,
    window: [String; 2],
}

/// One task template: a prompt with a `{person}` slot, the skills the prompt
/// must detect, and the calendar action it performs.
#[derive(Debug, Clone)]
pub struct TaskTemplate {
    pub prompt: String,
    pub skills: Vec<String>,
    pub title: String,
    pub window: TimeWindow,
}

/// A parsed template configuration: person word list plus templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub persons: Vec<String>,
    pub templates: Vec<TaskTemplate>,
}

/// The built-in template set covering all seven standard skills.
const DEFAULT_TEMPLATES_TOML: &str = r#"
persons = ["Bob", "Mary", "Helen", "Alice", "Carol", "Dave", "Erin", "Frank"]

[[templates]]
prompt = "Schedule coffee with {person} where the traffic is light"
skills = ["get_traffic", "get_coffee_shops"]
title = "Coffee with {person}"
window = ["09:00", "12:00"]

[[templates]]
prompt = "Make a fishing reservation for {person} and check the weather"
skills = ["make_fishing_reservation", "get_weather"]
title = "Fishing with {person}"
window = ["06:00", "10:00"]

[[templates]]
prompt = "Find fishing spots for a trip with {person}"
skills = ["get_fishing_spots"]
title = "Fishing trip with {person}"
window = ["07:00", "11:00"]

[[templates]]
prompt = "Plan dinner with {person} and find restaurants nearby"
skills = ["get_restaurants"]
title = "Dinner with {person}"
window = ["18:00", "21:00"]

[[templates]]
prompt = "Make a restaurant reservation for dinner with {person}"
skills = ["make_restaurant_reservation"]
title = "Reserved dinner with {person}"
window = ["19:00", "22:00"]

[[templates]]
prompt = "Check the weather before meeting {person}"
skills = ["get_weather"]
title = "Meeting with {person}"
window = ["08:00", "10:00"]

[[templates]]
prompt = "Meet {person} for coffee and check the traffic"
skills = ["get_traffic", "get_coffee_shops"]
title = "Coffee run with {person}"
window = ["10:00", "13:00"]
"#;

impl TemplateSet {
    /// The built-in templates.
    pub fn standard() -> Self {
        TemplateSet::from_toml_str(DEFAULT_TEMPLATES_TOML)
            .expect("built-in template set is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, BenchError> {
        let raw: RawTemplateSet = toml::from_str(text)?;
        if raw.persons.is_empty() {
            return Err(BenchError::InvalidTemplate("no persons listed".into()));
        }
        if raw.templates.is_empty() {
            return Err(BenchError::InvalidTemplate("no templates listed".into()));
        }
        let templates = raw
            .templates
            .into_iter()
            .map(|t| {
                let start = Minutes::parse_hhmm(&t.window[0])?;
                let end = Minutes::parse_hhmm(&t.window[1])?;
                if start.0 + SLOT_MINUTES > end.0 {
                    return Err(BenchError::InvalidTemplate(format!(
                        "window of `{}` holds no {SLOT_MINUTES}-minute slot",
                        t.prompt
                    )));
                }
                Ok(TaskTemplate {
                    prompt: t.prompt,
                    skills: t.skills,
                    title: t.title,
                    window: TimeWindow { start, end },
                })
            })
            .collect::<Result<Vec<_>, BenchError>>()?;
        Ok(TemplateSet {
            persons: raw.persons,
            templates,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        TemplateSet::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Generates `n` tasks by cycling the templates, filling the `{person}`
/// slot from a seeded substream per task, and placing each task's calendar
/// window on its own day. Every template is validated against `register`:
/// its skills must exist, and its filled prompt must detect exactly its
/// declared skill set with the default detector — so benchmark runs measure
/// sharing, not detector surprises.
pub fn generate_tasks(
    templates: &TemplateSet,
    n: usize,
    seed: u64,
    register: &SkillRegister,
) -> Result<Vec<BenchTask>, BenchError> {
    if n == 0 {
        return Err(BenchError::InvalidConfig("n must be ≥ 1".into()));
    }
    let detector = KeywordDetector::default();
    let mut tasks = Vec::with_capacity(n);
    for i in 0..n {
        let template = &templates.templates[i % templates.templates.len()];
        for skill in &template.skills {
            if !register.contains(skill) {
                return Err(BenchError::UnknownSkill {
                    template: template.prompt.clone(),
                    skill: skill.clone(),
                });
            }
        }
        let mut rng = stream_rng(seed, StreamDomain::SlotFill, i as u64);
        let person = &templates.persons[rng.gen_range(0..templates.persons.len())];
        let prompt = template.prompt.replace("{person}", person);
        let title = template.title.replace("{person}", person);

        let detected = detect_skills(&prompt, register, &detector);
        let mut declared: Vec<&String> = template.skills.iter().collect();
        let mut found: Vec<&String> = detected.iter().collect();
        declared.sort();
        found.sort();
        if declared != found {
            return Err(BenchError::DetectionMismatch {
                template: template.prompt.clone(),
                detail: format!("declared {declared:?}, detected {found:?}"),
            });
        }

        let day = i as u32;
        tasks.push(BenchTask {
            id: i as u64,
            prompt,
            required_skills: detected,
            counterpart: AgentId::new(person.clone())?,
            calendar_actions: vec![CalendarAction {
                title,
                window: TimeWindow {
                    start: template.window.start.on_day(day),
                    end: template.window.end.on_day(day),
                },
            }],
        });
    }
    Ok(tasks)
}

/// (name, description, constant body, owner) for the seven standard skills.
const STANDARD_SKILLS: &[(&str, &str, &str, &str)] = &[
    ("get_fishing_spots", "finds fishing spots", "Lake Serene, north dock", "Provider1"),
    ("make_fishing_reservation", "books fishing reservations", "Fishing reservation confirmed", "Provider1"),
    ("get_weather", "returns current weather", "Sunny, 22C", "Provider1"),
    ("get_traffic", "reports traffic conditions", "Traffic is light", "Provider2"),
    ("get_restaurants", "finds restaurants", "Trattoria Roma, 5 stars", "Provider2"),
    ("make_restaurant_reservation", "books restaurant reservations", "Restaurant reservation confirmed", "Provider2"),
    ("get_coffee_shops", "finds coffee shops", "Blue Bottle on 3rd", "Provider2"),
];

/// The benchmark cast: a skill-less calendar assistant plus the two
/// providers, every register pre-seeded with all seven skills and their
/// owners (lookup is assumed synced; only skill bodies move at runtime).
pub fn standard_agents() -> Result<(Agent, Vec<Agent>), BenchError> {
    let mut provider1 = Agent::new(AgentId::new("Provider1")?);
    let mut provider2 = Agent::new(AgentId::new("Provider2")?);
    let mut calendar = Agent::new(AgentId::new("Calendar_Assistant")?);
    for &(name, description, body, owner) in STANDARD_SKILLS {
        let descriptor = SkillDescriptor::const_string(name, description, body)?;
        match owner {
            "Provider1" => provider1.integrate_skill(descriptor)?,
            _ => provider2.integrate_skill(descriptor)?,
        };
        let owner = AgentId::new(owner)?;
        for agent in [&mut provider1, &mut provider2, &mut calendar] {
            agent.register_mut().record(name, description, owner.clone())?;
        }
    }
    Ok((calendar, vec![provider1, provider2]))
}

/// Benchmark execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchMode {
    /// Never integrate: every skill use is a remote query.
    Baseline,
    /// Acquire on first need, execute locally afterwards.
    SkillFlow,
}

impl BenchMode {
    pub fn label(self) -> &'static str {
        match self {
            BenchMode::Baseline => "baseline",
            BenchMode::SkillFlow => "skillflow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "baseline" => Some(BenchMode::Baseline),
            "skillflow" => Some(BenchMode::SkillFlow),
            _ => None,
        }
    }
}

/// Deterministic latency accounting: elapsed time is modeled from real
/// exchange counters, not wall clock, so runs are reproducible. Each event
/// (remote exchange, local execution, negotiation message) costs its base
/// duration scaled by a uniform jitter factor in [1−jitter_frac, 1+jitter_frac],
/// standing in for the scheduling noise of a live deployment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub remote_call_ms: f64,
    pub local_exec_ms: f64,
    pub negotiation_round_ms: f64,
    pub jitter_frac: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            remote_call_ms: 200.0,
            local_exec_ms: 5.0,
            negotiation_round_ms: 50.0,
            jitter_frac: 0.05,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), BenchError> {
        for (label, v) in [
            ("remote_call_ms", self.remote_call_ms),
            ("local_exec_ms", self.local_exec_ms),
            ("negotiation_round_ms", self.negotiation_round_ms),
            ("jitter_frac", self.jitter_frac),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(BenchError::InvalidLatency(format!(
                    "{label} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.remote_call_ms < self.local_exec_ms {
            return Err(BenchError::InvalidLatency(
                "remote_call_ms must be ≥ local_exec_ms".into(),
            ));
        }
        if self.jitter_frac >= 1.0 {
            return Err(BenchError::InvalidLatency(
                "jitter_frac must be < 1".into(),
            ));
        }
        Ok(())
    }

    fn jittered(&self, base_ms: f64, rng: &mut impl Rng) -> f64 {
        base_ms * (1.0 + self.jitter_frac * (rng.gen::<f64>() * 2.0 - 1.0))
    }
}

/// One iteration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub task: u64,
    pub elapsed_ms: f64,
    pub skills_learned: u32,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskFailure {
    pub task: u64,
    pub reason: String,
}

/// One benchmark run: the per-iteration trace plus any recorded failures.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub mode: BenchMode,
    pub run: u64,
    /// Denominator of the skills-learned percentage.
    pub total_skills: u32,
    pub per_iteration: Vec<IterationRecord>,
    pub failures: Vec<TaskFailure>,
}

/// Runs the benchmark with the standard agent cast.
pub fn run_benchmark(
    mode: BenchMode,
    tasks: &[BenchTask],
    latency: &LatencyModel,
    runs: usize,
    seed: u64,
) -> Result<Vec<RunRecord>, BenchError> {
    run_benchmark_with(mode, tasks, latency, runs, seed, standard_agents)
}

/// Runs the benchmark with a custom agent cast factory (the first agent is
/// the requestor; the rest serve on the loopback network). Each run gets a
/// fresh cast, a fresh network, its own task order, and its own jitter
/// stream, all derived from `seed` and the run index.
pub fn run_benchmark_with(
    mode: BenchMode,
    tasks: &[BenchTask],
    latency: &LatencyModel,
    runs: usize,
    seed: u64,
    cast: impl Fn() -> Result<(Agent, Vec<Agent>), BenchError>,
) -> Result<Vec<RunRecord>, BenchError> {
    latency.validate()?;
    if tasks.is_empty() {
        return Err(BenchError::InvalidConfig("no tasks to run".into()));
    }
    if runs == 0 {
        return Err(BenchError::InvalidConfig("runs must be ≥ 1".into()));
    }
    (0..runs)
        .map(|run| run_once(mode, tasks, latency, seed, run as u64, &cast))
        .collect()
}

fn run_once(
    mode: BenchMode,
    tasks: &[BenchTask],
    latency: &LatencyModel,
    seed: u64,
    run: u64,
    cast: &impl Fn() -> Result<(Agent, Vec<Agent>), BenchError>,
) -> Result<RunRecord, BenchError> {
    let mut rng = stream_rng(seed, StreamDomain::BenchRun, run);

    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut rng);

    let (mut requestor, providers) = cast()?;
    let total_skills = requestor.register().len() as u32;
    let net = LoopbackNet::new();
    for provider in providers {
        Agent::attach_to_loopback(Arc::new(Mutex::new(provider)), &net);
    }

    // Counterpart calendars, pre-seeded with busy slots (in task-id order for
    // determinism): the leading 0–2 grid slots of each task's window may be
    // blocked, which is what makes negotiations counter-offer.
    let mut own_calendar = Calendar::new(requestor.id().clone());
    let mut counterparts: HashMap<AgentId, Calendar> = HashMap::new();
    for task in tasks {
        let calendar = counterparts
            .entry(task.counterpart.clone())
            .or_insert_with(|| Calendar::new(task.counterpart.clone()));
        for action in &task.calendar_actions {
            let roll: f64 = rng.gen();
            let blocked = if roll < 0.35 {
                1
            } else if roll < 0.55 {
                2
            } else {
                0
            };
            for k in 0..blocked {
                let start = Minutes(action.window.start.0 + k * SLOT_MINUTES);
                let end = Minutes(start.0 + SLOT_MINUTES);
                if calendar.is_free(start, end) {
                    calendar.add_event("Busy", start, end)?;
                }
            }
        }
    }

    let mut per_iteration = Vec::with_capacity(tasks.len());
    let mut failures = Vec::new();
    for &task_index in &order {
        let task = &tasks[task_index];
        let exchanges_before = net.exchange_count();
        let mut local_execs = 0u64;
        let mut failure: Option<String> = None;

        match mode {
            BenchMode::Baseline => {
                for skill in requestor.detect(&task.prompt) {
                    if let Err(e) = requestor.remote_execute(&skill, &net) {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            BenchMode::SkillFlow => match requestor.skill_flow(&task.prompt, &net) {
                Ok(detected) => {
                    for skill in &detected {
                        match requestor.execute_skill(skill) {
                            Ok(_) => local_execs += 1,
                            Err(e) => {
                                failure = Some(e.to_string());
                                break;
                            }
                        }
                    }
                }
                Err(e) => failure = Some(e.to_string()),
            },
        }
        let remote_exchanges = net.exchange_count() - exchanges_before;

        let mut negotiation_messages = 0u64;
        if failure.is_none() {
            for action in &task.calendar_actions {
                let counterpart = counterparts
                    .get_mut(&task.counterpart)
                    .expect("calendar created during pre-seeding");
                match negotiate_schedule(
                    &mut own_calendar,
                    counterpart,
                    action.window,
                    &action.title,
                    DEFAULT_NEGOTIATION_ROUNDS,
                ) {
                    Ok(agreed) => negotiation_messages += agreed.messages as u64,
                    Err(BenchError::NegotiationFailed { messages, .. }) => {
                        negotiation_messages += messages as u64;
                        failure = Some(format!(
                            "negotiation for `{}` failed",
                            action.title
                        ));
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let mut elapsed_ms = 0.0;
        for _ in 0..remote_exchanges {
            elapsed_ms += latency.jittered(latency.remote_call_ms, &mut rng);
        }
        for _ in 0..local_execs {
            elapsed_ms += latency.jittered(latency.local_exec_ms, &mut rng);
        }
        for _ in 0..negotiation_messages {
            elapsed_ms += latency.jittered(latency.negotiation_round_ms, &mut rng);
        }

        let failed = failure.is_some();
        if let Some(reason) = failure {
            failures.push(TaskFailure {
                task: task.id,
                reason,
            });
        }
        per_iteration.push(IterationRecord {
            task: task.id,
            elapsed_ms,
            skills_learned: requestor.counters().skills_acquired as u32,
            failed,
        });
    }

    Ok(RunRecord {
        mode,
        run,
        total_skills,
        per_iteration,
        failures,
    })
}

/// One row of the per-iteration statistical comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRow {
    pub iteration: u64,
    pub mean_baseline: f64,
    pub ci_baseline: f64,
    pub mean_skillflow: f64,
    pub ci_skillflow: f64,
    pub p: f64,
    pub q: f64,
}

/// Cumulative mean elapsed over completed tasks up to each iteration; `None`
/// where a run has no completed tasks yet.
fn cumulative_means(record: &RunRecord) -> Vec<Option<f64>> {
    let mut sum = 0.0;
    let mut count = 0u64;
    record
        .per_iteration
        .iter()
        .map(|it| {
            if !it.failed {
                sum += it.elapsed_ms;
                count += 1;
            }
            (count > 0).then(|| sum / count as f64)
        })
        .collect()
}

/// Per-iteration Welch comparison of cumulative mean time per task between
/// the modes, with BH-adjusted q-values over the iteration p-vector.
pub fn analyze_runs(
    baseline: &[RunRecord],
    skillflow: &[RunRecord],
) -> Result<Vec<AnalysisRow>, BenchError> {
    for (label, records, mode) in [
        ("baseline", baseline, BenchMode::Baseline),
        ("skillflow", skillflow, BenchMode::SkillFlow),
    ] {
        if records.len() < 2 {
            return Err(BenchError::MismatchedRuns(format!(
                "need ≥ 2 {label} runs, got {}",
                records.len()
            )));
        }
        if let Some(bad) = records.iter().find(|r| r.mode != mode) {
            return Err(BenchError::MismatchedRuns(format!(
                "{label} input contains a {} record",
                bad.mode.label()
            )));
        }
    }
    let iterations = baseline[0].per_iteration.len();
    if baseline
        .iter()
        .chain(skillflow)
        .any(|r| r.per_iteration.len() != iterations)
    {
        return Err(BenchError::MismatchedRuns(
            "records disagree on iteration count".into(),
        ));
    }

    let base_curves: Vec<_> = baseline.iter().map(cumulative_means).collect();
    let flow_curves: Vec<_> = skillflow.iter().map(cumulative_means).collect();
    let samples_at = |curves: &[Vec<Option<f64>>], i: usize| -> Vec<f64> {
        curves.iter().filter_map(|c| c[i]).collect()
    };

    let mut rows = Vec::with_capacity(iterations);
    let mut pvalues = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let base = samples_at(&base_curves, i);
        let flow = samples_at(&flow_curves, i);
        let (mean_baseline, ci_baseline) = mean_ci95(&base)?;
        let (mean_skillflow, ci_skillflow) = mean_ci95(&flow)?;
        let welch = welch_t_test(&base, &flow)?;
        pvalues.push(welch.p_value);
        rows.push(AnalysisRow {
            iteration: (i + 1) as u64,
            mean_baseline,
            ci_baseline,
            mean_skillflow,
            ci_skillflow,
            p: welch.p_value,
            q: f64::NAN, // filled below from the full p-vector
        });
    }
    let qvalues = bh_fdr_adjust(&pvalues)?;
    for (row, q) in rows.iter_mut().zip(qvalues) {
        row.q = q;
    }
    Ok(rows)
}

/// Writes run records as CSV. Failed iterations are recorded in the run's
/// failure list, not in the CSV (they are excluded from time averages).
/// Metadata carries the skills-learned denominator for exact read-back.
pub fn write_bench_csv(records: &[RunRecord], w: &mut impl Write) -> Result<(), BenchError> {
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.total_skills != first.total_skills) {
            return Err(BenchError::MismatchedRuns(
                "records disagree on total_skills".into(),
            ));
        }
        writeln!(w, "# total_skills={}", first.total_skills)?;
    }
    writeln!(w, "run,iteration,mode,elapsed_ms,skills_learned_pct")?;
    for record in records {
        for (pos, it) in record.per_iteration.iter().enumerate() {
            if it.failed {
                continue;
            }
            let pct = if record.total_skills == 0 {
                0.0
            } else {
                it.skills_learned as f64 * 100.0 / record.total_skills as f64
            };
            writeln!(
                w,
                "{},{},{},{:.6},{:.6}",
                record.run,
                pos + 1,
                record.mode.label(),
                it.elapsed_ms,
                pct
            )?;
        }
    }
    Ok(())
}

/// Reads records back from [`write_bench_csv`] output. Task ids and failed
/// iterations are not representable in the CSV, so reconstructed records
/// carry the iteration number as the task id and only completed iterations.
pub fn read_bench_csv(r: impl Read) -> Result<Vec<RunRecord>, BenchError> {
    let reader = BufReader::new(r);
    let mut total_skills: Option<u32> = None;
    let mut header_seen = false;
    // Keyed by (run, mode), in first-appearance order.
    let mut order: Vec<(u64, BenchMode)> = Vec::new();
    let mut groups: HashMap<(u64, BenchMode), Vec<IterationRecord>> = HashMap::new();

    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let at = line_no + 1;
        let bad = |reason: &str| BenchError::MalformedCsv {
            line: at,
            reason: reason.to_string(),
        };
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((key, value)) = meta.trim().split_once('=') {
                if key.trim() == "total_skills" {
                    total_skills =
                        Some(value.trim().parse().map_err(|_| bad("bad total_skills"))?);
                }
            }
            continue;
        }
        if !header_seen {
            if line != "run,iteration,mode,elapsed_ms,skills_learned_pct" {
                return Err(bad("unexpected header"));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let run: u64 = fields[0].parse().map_err(|_| bad("bad run"))?;
        let iteration: u64 = fields[1].parse().map_err(|_| bad("bad iteration"))?;
        let mode = BenchMode::parse(fields[2]).ok_or_else(|| bad("bad mode"))?;
        let elapsed_ms: f64 = fields[3].parse().map_err(|_| bad("bad elapsed_ms"))?;
        let pct: f64 = fields[4].parse().map_err(|_| bad("bad skills_learned_pct"))?;
        let total = total_skills.ok_or_else(|| bad("missing total_skills metadata"))?;
        let skills_learned = (pct * total as f64 / 100.0).round() as u32;
        let key = (run, mode);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(IterationRecord {
            task: iteration,
            elapsed_ms,
            skills_learned,
            failed: false,
        });
    }
    if !header_seen {
        return Err(BenchError::MalformedCsv {
            line: 0,
            reason: "missing header".to_string(),
        });
    }
    let total_skills = total_skills.unwrap_or(0);
    Ok(order
        .into_iter()
        .map(|key| {
            let per_iteration = groups.remove(&key).expect("group recorded");
            RunRecord {
                mode: key.1,
                run: key.0,
                total_skills,
                per_iteration,
                failures: Vec::new(),
            }
        })
        .collect())
}

/// Writes the analysis table. Means and intervals are fixed-point; p and q
/// are scientific to keep very small values meaningful.
pub fn write_analysis_csv(rows: &[AnalysisRow], w: &mut impl Write) -> io::Result<()> {
    writeln!(
        w,
        "iteration,mean_baseline,ci_baseline,mean_skillflow,ci_skillflow,p,q"
    )?;
    for row in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6e},{:.6e}",
            row.iteration,
            row.mean_baseline,
            row.ci_baseline,
            row.mean_skillflow,
            row.ci_skillflow,
            row.p,
            row.q
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    fn m(day: u32, hhmm: &str) -> Minutes {
        Minutes::parse_hhmm(hhmm).unwrap().on_day(day)
    }

    fn window(day: u32, start: &str, end: &str) -> TimeWindow {
        TimeWindow {
            start: m(day, start),
            end: m(day, end),
        }
    }

    #[test]
    fn minutes_parse_and_display() {
        assert_eq!(Minutes::parse_hhmm("09:00").unwrap(), Minutes(540));
        assert_eq!(Minutes::parse_hhmm("23:59").unwrap(), Minutes(1439));
        assert_eq!(Minutes(540).on_day(2), Minutes(3420));
        assert_eq!(m(1, "09:30").to_string(), "day 1 09:30");
        for bad in ["24:00", "09:60", "9:00", "09-00", "", "aa:bb"] {
            assert!(Minutes::parse_hhmm(bad).is_err(), "{bad} should not parse");
        }
    }

    #[test]
    fn calendar_rejects_overlaps_and_finds_slots() {
        let mut cal = Calendar::new(id("Bob"));
        cal.add_event("a", m(0, "09:00"), m(0, "09:30")).unwrap();
        cal.add_event("b", m(0, "10:00"), m(0, "10:30")).unwrap();
        assert!(cal.add_event("c", m(0, "09:15"), m(0, "09:45")).is_err());
        assert!(cal.add_event("c", m(0, "09:00"), m(0, "09:00")).is_err());
        // Touching events do not overlap.
        cal.add_event("c", m(0, "09:30"), m(0, "10:00")).unwrap();
        assert_eq!(cal.events().len(), 3);
        assert!(cal.events().windows(2).all(|w| w[0].end <= w[1].start));

        let w = window(0, "09:00", "12:00");
        assert_eq!(
            cal.earliest_free(w, SLOT_MINUTES, w.start),
            Some(m(0, "10:30"))
        );
        assert_eq!(
            cal.earliest_free(w, SLOT_MINUTES, m(0, "11:00")),
            Some(m(0, "11:00"))
        );
        // A fully booked window yields nothing.
        let tight = window(0, "09:00", "10:30");
        assert_eq!(cal.earliest_free(tight, SLOT_MINUTES, tight.start), None);
    }

    #[test]
    fn negotiation_accepts_counters_and_fails() {
        // Both free: first proposal accepted, 2 messages.
        let w = window(0, "09:00", "12:00");
        let mut a = Calendar::new(id("A"));
        let mut b = Calendar::new(id("B"));
        let agreed = negotiate_schedule(&mut a, &mut b, w, "Coffee", 5).unwrap();
        assert_eq!((agreed.start, agreed.messages), (m(0, "09:00"), 2));
        assert_eq!(a.events().len(), 1);
        assert_eq!(b.events(), a.events());

        // Counterpart busy at the first slot: one counter-offer, 3 messages.
        let mut a = Calendar::new(id("A"));
        let mut b = Calendar::new(id("B"));
        b.add_event("Busy", m(0, "09:00"), m(0, "09:30")).unwrap();
        let agreed = negotiate_schedule(&mut a, &mut b, w, "Coffee", 5).unwrap();
        assert_eq!((agreed.start, agreed.messages), (m(0, "09:30"), 3));

        // Interleaved busy patterns exhaust the round budget.
        let mut a = Calendar::new(id("A"));
        let mut b = Calendar::new(id("B"));
        for k in 0..6 {
            let start = Minutes(w.start.0 + k * SLOT_MINUTES);
            let end = Minutes(start.0 + SLOT_MINUTES);
            if k % 2 == 0 {
                b.add_event("Busy", start, end).unwrap();
            } else {
                a.add_event("Busy", start, end).unwrap();
            }
        }
        let err = negotiate_schedule(&mut a, &mut b, w, "Coffee", 5).unwrap_err();
        assert!(
            matches!(err, BenchError::NegotiationFailed { messages: 5, .. }),
            "got {err}"
        );

        // A proposer with no free slot fails immediately.
        let tight = window(0, "09:00", "09:30");
        let mut a = Calendar::new(id("A"));
        let mut b = Calendar::new(id("B"));
        a.add_event("Busy", m(0, "09:00"), m(0, "09:30")).unwrap();
        assert!(matches!(
            negotiate_schedule(&mut a, &mut b, tight, "Coffee", 5),
            Err(BenchError::NegotiationFailed { messages: 0, .. })
        ));
    }

    fn standard_register() -> SkillRegister {
        standard_agents().unwrap().0.register().clone()
    }

    #[test]
    fn standard_templates_generate_valid_covering_tasks() {
        let templates = TemplateSet::standard();
        assert_eq!(templates.templates.len(), 7);
        let register = standard_register();
        let tasks = generate_tasks(&templates, 20, 0, &register).unwrap();
        assert_eq!(tasks.len(), 20);

        // Determinism.
        let again = generate_tasks(&templates, 20, 0, &register).unwrap();
        assert_eq!(tasks, again);

        // Coverage: all seven skills are required somewhere.
        let mut union: Vec<&str> = tasks
            .iter()
            .flat_map(|t| t.required_skills.iter().map(String::as_str))
            .collect();
        union.sort();
        union.dedup();
        assert_eq!(union.len(), 7);

        // Every task has a calendar action on its own day.
        for task in &tasks {
            assert_eq!(task.calendar_actions.len(), 1);
            let w = task.calendar_actions[0].window;
            assert_eq!(w.start.0 / MINUTES_PER_DAY, task.id as u32);
            assert!(!task.prompt.contains("{person}"));
            assert!(task
                .prompt
                .contains(task.counterpart.as_str()));
        }
    }

    #[test]
    fn template_validation_catches_bad_sets() {
        let register = standard_register();
        let unknown = r#"
persons = ["Bob"]
[[templates]]
prompt = "Do the impossible for {person}"
skills = ["warp_drive"]
title = "Impossible with {person}"
window = ["09:00", "12:00"]
"#;
        let set = TemplateSet::from_toml_str(unknown).unwrap();
        assert!(matches!(
            generate_tasks(&set, 1, 0, &register),
            Err(BenchError::UnknownSkill { .. })
        ));

        // Prompt detects more than it declares.
        let mismatch = r#"
persons = ["Bob"]
[[templates]]
prompt = "Check the weather and the traffic with {person}"
skills = ["get_weather"]
title = "Weather with {person}"
window = ["09:00", "12:00"]
"#;
        let set = TemplateSet::from_toml_str(mismatch).unwrap();
        assert!(matches!(
            generate_tasks(&set, 1, 0, &register),
            Err(BenchError::DetectionMismatch { .. })
        ));

        let no_slot = r#"
persons = ["Bob"]
[[templates]]
prompt = "Check the weather with {person}"
skills = ["get_weather"]
title = "Weather with {person}"
window = ["09:00", "09:15"]
"#;
        assert!(matches!(
            TemplateSet::from_toml_str(no_slot),
            Err(BenchError::InvalidTemplate(_))
        ));
    }

    fn exact_latency() -> LatencyModel {
        LatencyModel {
            remote_call_ms: 200.0,
            local_exec_ms: 5.0,
            negotiation_round_ms: 0.0,
            jitter_frac: 0.0,
        }
    }

    fn standard_tasks() -> Vec<BenchTask> {
        generate_tasks(&TemplateSet::standard(), 20, 0, &standard_register()).unwrap()
    }

    #[test]
    fn baseline_pays_remote_calls_every_iteration() {
        let tasks = standard_tasks();
        let records =
            run_benchmark(BenchMode::Baseline, &tasks, &exact_latency(), 2, 0).unwrap();
        assert_eq!(records.len(), 2);
        for record in &records {
            assert!(record.failures.is_empty());
            assert_eq!(record.per_iteration.len(), 20);
            for it in &record.per_iteration {
                let required = tasks[it.task as usize].required_skills.len() as f64;
                assert_eq!(it.elapsed_ms, 200.0 * required, "task {}", it.task);
                assert_eq!(it.skills_learned, 0);
            }
        }
    }

    #[test]
    fn skillflow_amortizes_and_learns_everything_once() {
        let tasks = standard_tasks();
        let records =
            run_benchmark(BenchMode::SkillFlow, &tasks, &exact_latency(), 3, 0).unwrap();
        for record in &records {
            assert!(record.failures.is_empty());
            assert_eq!(record.total_skills, 7);
            let last = record.per_iteration.last().unwrap();
            assert_eq!(last.skills_learned, 7, "all skills acquired by the end");
            // Monotone learning curve.
            assert!(record
                .per_iteration
                .windows(2)
                .all(|w| w[0].skills_learned <= w[1].skills_learned));
            // Acquisition cost appears exactly once per skill: total elapsed
            // equals 7 remote exchanges plus one local exec per required
            // skill across all 20 tasks.
            let total: f64 = record.per_iteration.iter().map(|it| it.elapsed_ms).sum();
            let local_total: usize = record
                .per_iteration
                .iter()
                .map(|it| tasks[it.task as usize].required_skills.len())
                .sum();
            assert!((total - (7.0 * 200.0 + local_total as f64 * 5.0)).abs() < 1e-9);
            // Once a skill set is owned, repeat tasks cost local time only.
            let mut seen_all = false;
            for it in &record.per_iteration {
                if seen_all {
                    let required = tasks[it.task as usize].required_skills.len() as f64;
                    assert_eq!(it.elapsed_ms, 5.0 * required);
                }
                seen_all = it.skills_learned == 7;
            }
        }
    }

    #[test]
    fn skillflow_beats_baseline_on_final_cumulative_mean_every_run() {
        let tasks = standard_tasks();
        let latency = LatencyModel::default();
        let baseline = run_benchmark(BenchMode::Baseline, &tasks, &latency, 5, 0).unwrap();
        let skillflow = run_benchmark(BenchMode::SkillFlow, &tasks, &latency, 5, 0).unwrap();
        for (b, s) in baseline.iter().zip(&skillflow) {
            let bm = cumulative_means(b).last().unwrap().unwrap();
            let sm = cumulative_means(s).last().unwrap().unwrap();
            assert!(
                sm < bm,
                "run {}: skillflow {sm:.1} ms not below baseline {bm:.1} ms",
                b.run
            );
        }
    }

    #[test]
    fn benchmark_runs_are_deterministic() {
        let tasks = standard_tasks();
        let latency = LatencyModel::default();
        let a = run_benchmark(BenchMode::SkillFlow, &tasks, &latency, 2, 7).unwrap();
        let b = run_benchmark(BenchMode::SkillFlow, &tasks, &latency, 2, 7).unwrap();
        assert_eq!(a, b);
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        write_bench_csv(&a, &mut csv_a).unwrap();
        write_bench_csv(&b, &mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn unavailable_skills_mark_tasks_failed_but_runs_continue() {
        let tasks = standard_tasks();
        // A cast whose network lacks Provider1: its three skills are
        // unacquirable, so tasks needing them fail and are recorded.
        let cast = || {
            let (calendar, providers) = standard_agents()?;
            Ok((
                calendar,
                providers
                    .into_iter()
                    .filter(|p| p.id().as_str() != "Provider1")
                    .collect(),
            ))
        };
        let records =
            run_benchmark_with(BenchMode::SkillFlow, &tasks, &exact_latency(), 1, 0, cast)
                .unwrap();
        let record = &records[0];
        assert!(!record.failures.is_empty());
        assert_eq!(record.per_iteration.len(), 20, "failed tasks stay in the trace");
        let failed: Vec<u64> = record
            .per_iteration
            .iter()
            .filter(|it| it.failed)
            .map(|it| it.task)
            .collect();
        assert_eq!(failed.len(), record.failures.len());
        // Tasks that only need Provider2 skills still succeed.
        assert!(record.per_iteration.iter().any(|it| !it.failed));
        // Failed iterations never reach the CSV.
        let mut csv = Vec::new();
        write_bench_csv(&records, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(
            text.lines().count(),
            2 + record.per_iteration.iter().filter(|it| !it.failed).count()
        );
    }

    #[test]
    fn analysis_matches_the_degenerate_and_swap_contracts() {
        let tasks = standard_tasks();
        let latency = LatencyModel {
            jitter_frac: 0.0,
            ..LatencyModel::default()
        };
        // Identical synthetic records for both modes → every q is 1.
        let base = run_benchmark(BenchMode::Baseline, &tasks, &latency, 3, 0).unwrap();
        let mut fake_flow = base.clone();
        for r in &mut fake_flow {
            r.mode = BenchMode::SkillFlow;
        }
        let rows = analyze_runs(&base, &fake_flow).unwrap();
        assert_eq!(rows.len(), 20);
        assert!(rows.iter().all(|r| r.p == 1.0 && r.q == 1.0));

        // Mode swap preserves p and swaps the means.
        let latency = LatencyModel::default();
        let base = run_benchmark(BenchMode::Baseline, &tasks, &latency, 4, 0).unwrap();
        let flow = run_benchmark(BenchMode::SkillFlow, &tasks, &latency, 4, 0).unwrap();
        let rows = analyze_runs(&base, &flow).unwrap();
        let mut swapped_base = flow.clone();
        let mut swapped_flow = base.clone();
        for r in &mut swapped_base {
            r.mode = BenchMode::Baseline;
        }
        for r in &mut swapped_flow {
            r.mode = BenchMode::SkillFlow;
        }
        let swapped = analyze_runs(&swapped_base, &swapped_flow).unwrap();
        for (a, b) in rows.iter().zip(&swapped) {
            assert!((a.p - b.p).abs() < 1e-12);
            assert!((a.mean_baseline - b.mean_skillflow).abs() < 1e-12);
            assert!((a.mean_skillflow - b.mean_baseline).abs() < 1e-12);
        }

        // Guard rails.
        assert!(matches!(
            analyze_runs(&base[..1], &flow),
            Err(BenchError::MismatchedRuns(_))
        ));
        let mut truncated = flow.clone();
        truncated[0].per_iteration.pop();
        assert!(matches!(
            analyze_runs(&base, &truncated),
            Err(BenchError::MismatchedRuns(_))
        ));
        assert!(matches!(
            analyze_runs(&flow, &base),
            Err(BenchError::MismatchedRuns(_))
        ));
    }

    #[test]
    fn bench_csv_round_trips_for_analysis() {
        let tasks = standard_tasks();
        let latency = LatencyModel::default();
        let base = run_benchmark(BenchMode::Baseline, &tasks, &latency, 3, 1).unwrap();
        let mut csv = Vec::new();
        write_bench_csv(&base, &mut csv).unwrap();
        let back = read_bench_csv(&csv[..]).unwrap();
        assert_eq!(back.len(), base.len());
        for (orig, read) in base.iter().zip(&back) {
            assert_eq!(orig.run, read.run);
            assert_eq!(orig.mode, read.mode);
            assert_eq!(orig.total_skills, read.total_skills);
            assert_eq!(orig.per_iteration.len(), read.per_iteration.len());
            for (a, b) in orig.per_iteration.iter().zip(&read.per_iteration) {
                assert!((a.elapsed_ms - b.elapsed_ms).abs() < 1e-6);
                assert_eq!(a.skills_learned, b.skills_learned);
            }
        }
        assert!(matches!(
            read_bench_csv(&b"no header here"[..]),
            Err(BenchError::MalformedCsv { .. })
        ));
    }

    #[test]
    fn latency_model_validation() {
        assert!(LatencyModel::default().validate().is_ok());
        for bad in [
            LatencyModel {
                remote_call_ms: -1.0,
                ..LatencyModel::default()
            },
            LatencyModel {
                remote_call_ms: 1.0,
                local_exec_ms: 5.0,
                ..LatencyModel::default()
            },
            LatencyModel {
                jitter_frac: 1.5,
                ..LatencyModel::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
