//! Per-task cost accounting for the three execution scenarios.
//!
//! * **Baseline** — the requestor always delegates: it pays one communication
//!   round, the provider pays the return communication plus the execution.
//!   Nothing is ever acquired.
//! * **SkillFlow** — on first use the requestor asks for the skill itself
//!   (one communication) and runs it locally (one execution); the provider
//!   pays one communication to send it. Afterwards the requestor owns the
//!   skill and pays only executions.
//! * **SkillFlowPaid** — like SkillFlow, plus the one-time purchase price on
//!   first use.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::skill::CostProfile;

/// Errors from cost accounting and ledger persistence.
#[derive(Debug, Error)]
pub enum CostError {
    #[error("cost values must be finite and nonnegative: {0}")]
    InvalidCost(String),
    #[error("ledger is empty; no average to report")]
    EmptyLedger,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How task execution is organized between requestor and provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Always delegate to the provider; never acquire the skill.
    Baseline,
    /// Free skill sharing: acquire on first use, run locally afterwards.
    SkillFlow,
    /// Paid skill sharing: as SkillFlow plus the purchase price once.
    SkillFlowPaid,
}

impl Scenario {
    /// Whether the requestor ends up owning the skill after its first use.
    pub fn acquires(self) -> bool {
        !matches!(self, Scenario::Baseline)
    }

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::SkillFlow => "skillflow",
            Scenario::SkillFlowPaid => "skillflow_paid",
        }
    }
}

/// Whose costs are being aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Perspective {
    Requestor,
    Provider,
    /// Requestor and provider combined.
    System,
}

impl Perspective {
    pub fn label(self) -> &'static str {
        match self {
            Perspective::Requestor => "requestor",
            Perspective::Provider => "provider",
            Perspective::System => "system",
        }
    }
}

/// The cost of one task, split by party.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskCost {
    pub requestor: f64,
    pub provider: f64,
}

impl TaskCost {
    pub fn system(&self) -> f64 {
        self.requestor + self.provider
    }

    pub fn by(&self, perspective: Perspective) -> f64 {
        match perspective {
            Perspective::Requestor => self.requestor,
            Perspective::Provider => self.provider,
            Perspective::System => self.system(),
        }
    }
}

/// Cost of executing one task under `scenario`, given whether the requestor
/// already owns the skill.
///
/// Ownership only matters for the sharing scenarios; Baseline always
/// delegates. The caller is responsible for flipping its owned flag after a
/// first use in an acquiring scenario.
pub fn task_cost(scenario: Scenario, profile: &CostProfile, already_owned: bool) -> TaskCost {
    match scenario {
        Scenario::Baseline => TaskCost {
            requestor: profile.comm,
            provider: profile.comm + profile.exec,
        },
        Scenario::SkillFlow | Scenario::SkillFlowPaid if already_owned => TaskCost {
            requestor: profile.exec,
            provider: 0.0,
        },
        Scenario::SkillFlow => TaskCost {
            requestor: profile.comm + profile.exec,
            provider: profile.comm,
        },
        Scenario::SkillFlowPaid => TaskCost {
            requestor: profile.comm + profile.exec + profile.buy,
            provider: profile.comm,
        },
    }
}

/// When paid acquisition pays off for the requestor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Breakeven {
    /// Acquiring is no more expensive than delegating once the requestor has
    /// run this many tasks.
    AfterTasks(u64),
    /// Delegation stays cheaper forever (communication is no more expensive
    /// than local execution).
    Never,
}

/// Smallest task count `k ≥ 1` at which the requestor's cumulative cost under
/// paid acquisition (`comm + buy + k·exec`) is covered by what delegation
/// would have cost (`k·comm`).
///
/// Returns [`Breakeven::Never`] when `comm ≤ exec`: each delegated task then
/// costs the requestor no more than a local run, so the upfront transfer and
/// purchase are never recovered.
pub fn breakeven_task_count(profile: &CostProfile) -> Breakeven {
    let CostProfile { buy, exec, comm } = *profile;
    if comm <= exec {
        return Breakeven::Never;
    }
    let holds = |k: u64| -> bool {
        let k = k as f64;
        k * comm >= comm + buy + k * exec
    };
    // Closed form k = ceil((comm + buy) / (comm − exec)), then a local scan
    // to absorb floating-point edge effects at the boundary.
    let raw = (comm + buy) / (comm - exec);
    let mut k = raw.ceil().max(1.0) as u64;
    while k > 1 && holds(k - 1) {
        k -= 1;
    }
    while !holds(k) {
        k += 1;
    }
    Breakeven::AfterTasks(k)
}

/// One task's worth of cost, as recorded in a ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    /// Task label, e.g. `task_007` or a skill name.
    pub task: String,
    pub requestor_cost: f64,
    pub provider_cost: f64,
    /// Whether the requestor owns the skill after this task.
    pub owned_after: bool,
}

/// An append-only record of per-task costs with aggregate queries and a
/// CSV export.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostLedger {
    entries: Vec<LedgerEntry>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Appends one task's costs. Costs must be finite and nonnegative.
    pub fn record_task(
        &mut self,
        task: impl Into<String>,
        cost: TaskCost,
        owned_after: bool,
    ) -> Result<(), CostError> {
        for (label, v) in [("requestor", cost.requestor), ("provider", cost.provider)] {
            if !v.is_finite() || v < 0.0 {
                return Err(CostError::InvalidCost(format!("{label} cost {v}")));
            }
        }
        self.entries.push(LedgerEntry {
            task: task.into(),
            requestor_cost: cost.requestor,
            provider_cost: cost.provider,
            owned_after,
        });
        Ok(())
    }

    pub fn total_cost(&self, perspective: Perspective) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                TaskCost {
                    requestor: e.requestor_cost,
                    provider: e.provider_cost,
                }
                .by(perspective)
            })
            .sum()
    }

    /// Mean per-task cost from `perspective`; errors on an empty ledger.
    pub fn average_cost(&self, perspective: Perspective) -> Result<f64, CostError> {
        if self.entries.is_empty() {
            return Err(CostError::EmptyLedger);
        }
        Ok(self.total_cost(perspective) / self.entries.len() as f64)
    }

    /// Writes `task,requestor_cost,provider_cost,owned_after` rows with a
    /// header; floats carry six decimals, lines end in LF.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "task,requestor_cost,provider_cost,owned_after")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{:.6},{:.6},{}",
                e.task, e.requestor_cost, e.provider_cost, e.owned_after
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), CostError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}
