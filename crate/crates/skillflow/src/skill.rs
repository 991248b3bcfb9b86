//! Skill descriptors, per-skill cost profiles, and the local skill register.
//!
//! A skill is a named, transferable piece of capability. Each skill carries a
//! cost profile with three channels — a one-time purchase price (`buy`), a
//! per-execution cost (`exec`), and a per-remote-call communication cost
//! (`comm`) — sampled from per-channel Gaussians clamped to a floor. Every
//! agent keeps a [`SkillRegister`]: its local map from skill name to a
//! descriptor summary and the peers known to own that skill.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Errors from skill construction, cost parameters, and register operations.
#[derive(Debug, Error)]
pub enum SkillError {
    /// Names and agent ids must be nonempty and contain no whitespace,
    /// control characters, or commas (commas separate owners on disk).
    #[error("invalid identifier `{0}`: must be nonempty with no whitespace, control characters, or commas")]
    InvalidIdentifier(String),
    #[error("skill `{0}` is already registered with a different description")]
    DescriptionConflict(String),
    #[error("skill `{0}` is already registered with a different body digest")]
    DigestConflict(String),
    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),
    #[error("parameter grid needs at least one mean value")]
    EmptyGrid,
    #[error("no mean triple from the given values sums to {0}")]
    EmptySimplex(f64),
    #[error("register file line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn validate_identifier(s: &str) -> Result<(), SkillError> {
    let ok = !s.is_empty()
        && !s
            .chars()
            .any(|c| c.is_whitespace() || c.is_control() || c == ',');
    if ok {
        Ok(())
    } else {
        Err(SkillError::InvalidIdentifier(s.to_string()))
    }
}

/// Identifies an agent on the network.
///
/// Identity is the id string alone; socket addresses live in peer tables
/// (see [`crate::transport::TcpTransport`]) so registers and wire messages
/// stay address-agnostic and survive peers moving between endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Result<Self, SkillError> {
        let id = id.into();
        validate_identifier(&id)?;
        Ok(AgentId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// How a skill body may be used after transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyKind {
    /// The body is a constant string returned verbatim by execution.
    ConstString,
    /// Free-form text (e.g. pasted code); stored but never executed.
    OpaqueText,
}

impl BodyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BodyKind::ConstString => "const_string",
            BodyKind::OpaqueText => "opaque_text",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "const_string" => Some(BodyKind::ConstString),
            "opaque_text" => Some(BodyKind::OpaqueText),
            _ => None,
        }
    }
}

/// A named, transferable skill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillDescriptor {
    pub name: String,
    pub description: String,
    pub body_kind: BodyKind,
    pub body: String,
}

impl SkillDescriptor {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        body_kind: BodyKind,
        body: impl Into<String>,
    ) -> Result<Self, SkillError> {
        let name = name.into();
        validate_identifier(&name)?;
        Ok(SkillDescriptor {
            name,
            description: description.into(),
            body_kind,
            body: body.into(),
        })
    }

    /// An executable skill whose body is returned verbatim on execution.
    pub fn const_string(
        name: impl Into<String>,
        description: impl Into<String>,
        body: impl Into<String>,
    ) -> Result<Self, SkillError> {
        Self::new(name, description, BodyKind::ConstString, body)
    }

    /// A non-executable skill holding free-form text.
    pub fn opaque_text(
        name: impl Into<String>,
        description: impl Into<String>,
        body: impl Into<String>,
    ) -> Result<Self, SkillError> {
        Self::new(name, description, BodyKind::OpaqueText, body)
    }

    /// Lowercase hex SHA-256 of the body; used to detect conflicting
    /// transfers of the same skill name.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.body.as_bytes());
        let out = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in out {
            use fmt::Write as _;
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

/// Sampled per-skill costs; every channel is nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostProfile {
    /// One-time purchase price paid on first acquisition (paid sharing only).
    pub buy: f64,
    /// Cost of one local execution.
    pub exec: f64,
    /// Cost of one remote communication (query or transfer).
    pub comm: f64,
}

impl CostProfile {
    pub fn new(buy: f64, exec: f64, comm: f64) -> Result<Self, SkillError> {
        for (label, v) in [("buy", buy), ("exec", exec), ("comm", comm)] {
            if !v.is_finite() || v < 0.0 {
                return Err(SkillError::InvalidParams(format!(
                    "{label} cost must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(CostProfile { buy, exec, comm })
    }
}

/// Gaussian parameters for sampling one [`CostProfile`].
///
/// Costs are drawn independently per channel as `max(N(mean, std), floor)`,
/// in the fixed order buy, exec, comm, from one generator per profile. With a
/// standard deviation of zero a channel is exactly `max(mean, floor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub mean_buy: f64,
    pub mean_exec: f64,
    pub mean_comm: f64,
    pub std_buy: f64,
    pub std_exec: f64,
    pub std_comm: f64,
    pub floor_buy: f64,
    pub floor_exec: f64,
    pub floor_comm: f64,
}

impl CostParams {
    /// Builds parameters from `(buy, exec, comm)` triples of means, standard
    /// deviations, and floors.
    pub fn new(means: [f64; 3], stds: [f64; 3], floors: [f64; 3]) -> Result<Self, SkillError> {
        let params = CostParams {
            mean_buy: means[0],
            mean_exec: means[1],
            mean_comm: means[2],
            std_buy: stds[0],
            std_exec: stds[1],
            std_comm: stds[2],
            floor_buy: floors[0],
            floor_exec: floors[1],
            floor_comm: floors[2],
        };
        params.validate()?;
        Ok(params)
    }

    pub fn means(&self) -> [f64; 3] {
        [self.mean_buy, self.mean_exec, self.mean_comm]
    }

    pub fn validate(&self) -> Result<(), SkillError> {
        let all = [
            ("mean_buy", self.mean_buy),
            ("mean_exec", self.mean_exec),
            ("mean_comm", self.mean_comm),
            ("std_buy", self.std_buy),
            ("std_exec", self.std_exec),
            ("std_comm", self.std_comm),
            ("floor_buy", self.floor_buy),
            ("floor_exec", self.floor_exec),
            ("floor_comm", self.floor_comm),
        ];
        for (label, v) in all {
            if !v.is_finite() {
                return Err(SkillError::InvalidParams(format!("{label} must be finite")));
            }
        }
        for (label, v) in [
            ("std_buy", self.std_buy),
            ("std_exec", self.std_exec),
            ("std_comm", self.std_comm),
            ("floor_buy", self.floor_buy),
            ("floor_exec", self.floor_exec),
            ("floor_comm", self.floor_comm),
        ] {
            if v < 0.0 {
                return Err(SkillError::InvalidParams(format!(
                    "{label} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Samples one cost profile: independent clamped Gaussians per channel in the
/// fixed order buy, exec, comm.
///
/// The Gaussian transform is the ziggurat sampler from `rand_distr`; paired
/// with a ChaCha substream per profile (see [`crate::rng`]) this makes every
/// profile a pure function of `(seed, skill index, params)`.
pub fn sample_cost_profile(params: &CostParams, rng: &mut impl Rng) -> CostProfile {
    debug_assert!(params.validate().is_ok());
    let mut draw = |mean: f64, std: f64, floor: f64| -> f64 {
        let normal = Normal::new(mean, std).expect("validated std is finite and nonnegative");
        normal.sample(rng).max(floor)
    };
    let buy = draw(params.mean_buy, params.std_buy, params.floor_buy);
    let exec = draw(params.mean_exec, params.std_exec, params.floor_exec);
    let comm = draw(params.mean_comm, params.std_comm, params.floor_comm);
    CostProfile { buy, exec, comm }
}

/// Enumerates the Cartesian grid of mean triples `(buy, exec, comm)` over
/// `mean_values`, all sharing `stds` and `floors`.
///
/// With `simplex_sum = Some(s)` only triples summing to `s` (within 1e-9) are
/// kept, preserving enumeration order: buy outermost, then exec, then comm.
pub fn build_parameter_grid(
    mean_values: &[f64],
    stds: [f64; 3],
    floors: [f64; 3],
    simplex_sum: Option<f64>,
) -> Result<Vec<CostParams>, SkillError> {
    if mean_values.is_empty() {
        return Err(SkillError::EmptyGrid);
    }
    let mut grid = Vec::new();
    for &buy in mean_values {
        for &exec in mean_values {
            for &comm in mean_values {
                if let Some(sum) = simplex_sum {
                    if (buy + exec + comm - sum).abs() > 1e-9 {
                        continue;
                    }
                }
                grid.push(CostParams::new([buy, exec, comm], stds, floors)?);
            }
        }
    }
    if grid.is_empty() {
        // Only reachable with a simplex constraint; the unconstrained product
        // of a nonempty value set is never empty.
        return Err(SkillError::EmptySimplex(simplex_sum.unwrap_or(f64::NAN)));
    }
    Ok(grid)
}

/// One register entry: a descriptor summary plus the known owners.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisterEntry {
    pub description: String,
    /// Known once a full descriptor has been seen; bare ownership
    /// announcements leave it unset.
    pub body_kind: Option<BodyKind>,
    /// SHA-256 of the body, when a full descriptor has been seen.
    pub body_digest: Option<String>,
    owners: Vec<AgentId>,
}

impl RegisterEntry {
    /// Owners in the order they were recorded, without duplicates.
    pub fn owners(&self) -> &[AgentId] {
        &self.owners
    }
}

/// An agent's local map from skill name to descriptor summary and owners.
///
/// Entries keep insertion order, so lookups and persistence are
/// deterministic. Every entry has at least one owner.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillRegister {
    entries: IndexMap<String, RegisterEntry>,
}

impl SkillRegister {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, skill: &str) -> bool {
        self.entries.contains_key(skill)
    }

    pub fn get(&self, skill: &str) -> Option<&RegisterEntry> {
        self.entries.get(skill)
    }

    /// Skill names in insertion order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RegisterEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// `(name, description)` pairs for classification.
    pub fn summaries(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .map(|(name, entry)| (name.clone(), entry.description.clone()))
            .collect()
    }

    /// Known owners of `skill` in recorded order; empty when unknown.
    pub fn lookup(&self, skill: &str) -> &[AgentId] {
        self.entries
            .get(skill)
            .map(|entry| entry.owners.as_slice())
            .unwrap_or(&[])
    }

    /// Records `owner` as an owner of `skill`.
    ///
    /// The description is set on first record and never silently overwritten:
    /// recording the same skill with a different description is a conflict.
    /// Recording an existing `(skill, owner)` pair is a no-op.
    pub fn record(
        &mut self,
        skill: &str,
        description: &str,
        owner: AgentId,
    ) -> Result<(), SkillError> {
        self.record_full(skill, description, owner, None, None)
    }

    /// Records ownership along with the descriptor's kind and body digest,
    /// conflicting when a different digest is already on file.
    pub fn record_descriptor(
        &mut self,
        descriptor: &SkillDescriptor,
        owner: AgentId,
    ) -> Result<(), SkillError> {
        self.record_full(
            &descriptor.name,
            &descriptor.description,
            owner,
            Some(descriptor.body_kind),
            Some(descriptor.digest()),
        )
    }

    fn record_full(
        &mut self,
        skill: &str,
        description: &str,
        owner: AgentId,
        body_kind: Option<BodyKind>,
        body_digest: Option<String>,
    ) -> Result<(), SkillError> {
        validate_identifier(skill)?;
        match self.entries.get_mut(skill) {
            Some(entry) => {
                if entry.description != description {
                    return Err(SkillError::DescriptionConflict(skill.to_string()));
                }
                if let (Some(old), Some(new)) = (&entry.body_digest, &body_digest) {
                    if old != new {
                        return Err(SkillError::DigestConflict(skill.to_string()));
                    }
                }
                if entry.body_digest.is_none() {
                    entry.body_digest = body_digest;
                }
                if entry.body_kind.is_none() {
                    entry.body_kind = body_kind;
                }
                if !entry.owners.contains(&owner) {
                    entry.owners.push(owner);
                }
                Ok(())
            }
            None => {
                self.entries.insert(
                    skill.to_string(),
                    RegisterEntry {
                        description: description.to_string(),
                        body_kind,
                        body_digest,
                        owners: vec![owner],
                    },
                );
                Ok(())
            }
        }
    }

    /// Writes the register as one tab-separated record per line:
    /// `name<TAB>description<TAB>body_kind<TAB>digest<TAB>owner,owner,...`
    /// with backslash-escaped separators inside the description. UTF-8, LF.
    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        for (name, entry) in &self.entries {
            let kind = entry.body_kind.map(BodyKind::as_str).unwrap_or("");
            let digest = entry.body_digest.as_deref().unwrap_or("");
            let owners: Vec<&str> = entry.owners.iter().map(AgentId::as_str).collect();
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                name,
                escape_field(&entry.description),
                kind,
                digest,
                owners.join(",")
            )?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, SkillError> {
        let mut register = SkillRegister::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(SkillError::MalformedRecord {
                    line: lineno,
                    reason: format!("expected 5 tab-separated fields, got {}", fields.len()),
                });
            }
            let name = fields[0];
            let description = unescape_field(fields[1]).map_err(|reason| {
                SkillError::MalformedRecord {
                    line: lineno,
                    reason,
                }
            })?;
            let body_kind = match fields[2] {
                "" => None,
                other => Some(BodyKind::parse(other).ok_or_else(|| {
                    SkillError::MalformedRecord {
                        line: lineno,
                        reason: format!("unknown body kind `{other}`"),
                    }
                })?),
            };
            let body_digest = match fields[3] {
                "" => None,
                other => Some(other.to_string()),
            };
            let mut owners = Vec::new();
            for owner in fields[4].split(',') {
                owners.push(AgentId::new(owner).map_err(|e| SkillError::MalformedRecord {
                    line: lineno,
                    reason: e.to_string(),
                })?);
            }
            if owners.is_empty() {
                return Err(SkillError::MalformedRecord {
                    line: lineno,
                    reason: "entry has no owners".to_string(),
                });
            }
            validate_identifier(name).map_err(|e| SkillError::MalformedRecord {
                line: lineno,
                reason: e.to_string(),
            })?;
            let first = owners.remove(0);
            register.record_full(name, &description, first, body_kind, body_digest)?;
            for owner in owners {
                register.record_full(name, &description, owner, None, None)?;
            }
        }
        Ok(register)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SkillError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SkillError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out
}

fn unescape_field(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("bad escape `\\{other}`")),
            None => return Err("dangling backslash".to_string()),
        }
    }
    Ok(out)
}
