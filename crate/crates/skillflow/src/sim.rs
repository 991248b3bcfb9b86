//! Monte-Carlo cost simulations: single runs, multi-seed trajectory
//! comparisons, and the two parameter sweeps (cost simplex heatmap and
//! communication/execution ratio), with deterministic CSV export.

use std::io::{self, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cost::{task_cost, CostError, CostLedger, Perspective, Scenario};
use crate::rng::{stream_rng, StreamDomain};
use crate::skill::{build_parameter_grid, sample_cost_profile, CostParams, SkillError};
use crate::stats::{mean_ci95, StatsError};

/// Errors from simulation configuration and aggregation.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("at least {needed} seed(s) required, got {got}")]
    NotEnoughSeeds { needed: usize, got: usize },
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// How tasks pick their skill. Uniform is the only supported mode; the enum
/// leaves room for skewed arrival processes without changing the config
/// shape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TaskDistribution {
    #[default]
    Uniform,
}

/// Full description of one simulation run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub num_skills: usize,
    pub num_tasks: usize,
    pub scenario: Scenario,
    pub cost_params: CostParams,
    pub seed: u64,
    pub task_distribution: TaskDistribution,
}

impl SimConfig {
    pub fn new(
        num_skills: usize,
        num_tasks: usize,
        scenario: Scenario,
        cost_params: CostParams,
        seed: u64,
    ) -> Result<Self, SimError> {
        if num_skills == 0 {
            return Err(SimError::InvalidConfig("num_skills must be ≥ 1".into()));
        }
        if num_tasks == 0 {
            return Err(SimError::InvalidConfig("num_tasks must be ≥ 1".into()));
        }
        cost_params.validate()?;
        Ok(SimConfig {
            num_skills,
            num_tasks,
            scenario,
            cost_params,
            seed,
            task_distribution: TaskDistribution::Uniform,
        })
    }
}

/// Runs one seeded simulation and returns its per-task ledger.
///
/// Skill `i` gets its own cost profile from substream `i` of the seed, so a
/// config with more skills reproduces the earlier skills' profiles exactly.
/// Tasks then draw a skill uniformly from a separate task-sequence substream,
/// and each task is charged per the scenario with ownership tracked across
/// tasks. Fully deterministic given the config.
pub fn run_simulation(config: &SimConfig) -> Result<CostLedger, SimError> {
    config.cost_params.validate()?;
    let profiles: Vec<_> = (0..config.num_skills)
        .map(|i| {
            let mut rng = stream_rng(config.seed, StreamDomain::SkillProfile, i as u64);
            sample_cost_profile(&config.cost_params, &mut rng)
        })
        .collect();

    let mut task_rng = stream_rng(config.seed, StreamDomain::TaskSequence, 0);
    let mut owned = vec![false; config.num_skills];
    let mut ledger = CostLedger::new();
    for _ in 0..config.num_tasks {
        let idx = match config.task_distribution {
            TaskDistribution::Uniform => task_rng.gen_range(0..config.num_skills),
        };
        let cost = task_cost(config.scenario, &profiles[idx], owned[idx]);
        if config.scenario.acquires() {
            owned[idx] = true;
        }
        ledger.record_task(format!("skill_{idx:03}"), cost, owned[idx])?;
    }
    Ok(ledger)
}

/// Per-iteration cumulative average cost, one entry per task, for one
/// perspective.
pub fn cumulative_averages(ledger: &CostLedger, perspective: Perspective) -> Vec<f64> {
    let mut sum = 0.0;
    ledger
        .entries()
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            sum += match perspective {
                Perspective::Requestor => entry.requestor_cost,
                Perspective::Provider => entry.provider_cost,
                Perspective::System => entry.requestor_cost + entry.provider_cost,
            };
            sum / (i + 1) as f64
        })
        .collect()
}

/// One aggregated point of a trajectory comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub iteration: u64,
    pub scenario: Scenario,
    pub perspective: Perspective,
    pub mean: f64,
    pub ci95: f64,
}

const SCENARIOS: [Scenario; 3] = [Scenario::Baseline, Scenario::SkillFlow, Scenario::SkillFlowPaid];
const TRAJECTORY_PERSPECTIVES: [Perspective; 2] = [Perspective::Requestor, Perspective::System];

/// Runs all three scenarios over the same seeds and task streams and
/// aggregates the cumulative average cost per task at every iteration, for
/// the requestor and system perspectives.
///
/// Seeds share task streams across scenarios (same seed ⇒ same skill
/// sequence), which cancels arrival noise out of scenario differences. With
/// a single seed the ci95 column is 0 by the convention of [`mean_ci95`].
pub fn run_trajectory_comparison(
    cost_params: &CostParams,
    num_skills: usize,
    num_tasks: usize,
    seeds: &[u64],
) -> Result<Vec<TrajectoryRow>, SimError> {
    if seeds.is_empty() {
        return Err(SimError::NotEnoughSeeds { needed: 1, got: 0 });
    }
    // curves[scenario][perspective][seed][iteration]
    let mut curves =
        vec![vec![Vec::with_capacity(seeds.len()); TRAJECTORY_PERSPECTIVES.len()]; SCENARIOS.len()];
    for &seed in seeds {
        for (si, &scenario) in SCENARIOS.iter().enumerate() {
            let config =
                SimConfig::new(num_skills, num_tasks, scenario, *cost_params, seed)?;
            let ledger = run_simulation(&config)?;
            for (pi, &perspective) in TRAJECTORY_PERSPECTIVES.iter().enumerate() {
                curves[si][pi].push(cumulative_averages(&ledger, perspective));
            }
        }
    }

    let mut rows = Vec::with_capacity(num_tasks * SCENARIOS.len() * TRAJECTORY_PERSPECTIVES.len());
    for iteration in 1..=num_tasks {
        for (si, &scenario) in SCENARIOS.iter().enumerate() {
            for (pi, &perspective) in TRAJECTORY_PERSPECTIVES.iter().enumerate() {
                let samples: Vec<f64> = curves[si][pi]
                    .iter()
                    .map(|curve| curve[iteration - 1])
                    .collect();
                let (mean, ci95) = mean_ci95(&samples)?;
                rows.push(TrajectoryRow {
                    iteration: iteration as u64,
                    scenario,
                    perspective,
                    mean,
                    ci95,
                });
            }
        }
    }
    Ok(rows)
}

/// Cumulative Baseline-minus-SkillFlowPaid averages for one seed at the
/// given checkpoints, for requestor and system perspectives.
fn paid_diffs_at(
    cost_params: &CostParams,
    num_skills: usize,
    num_tasks: usize,
    seed: u64,
    checkpoints: &[u64],
) -> Result<Vec<(f64, f64)>, SimError> {
    let baseline = run_simulation(&SimConfig::new(
        num_skills,
        num_tasks,
        Scenario::Baseline,
        *cost_params,
        seed,
    )?)?;
    let paid = run_simulation(&SimConfig::new(
        num_skills,
        num_tasks,
        Scenario::SkillFlowPaid,
        *cost_params,
        seed,
    )?)?;
    let curves = [
        (
            cumulative_averages(&baseline, Perspective::Requestor),
            cumulative_averages(&paid, Perspective::Requestor),
        ),
        (
            cumulative_averages(&baseline, Perspective::System),
            cumulative_averages(&paid, Perspective::System),
        ),
    ];
    checkpoints
        .iter()
        .map(|&cp| {
            let i = cp as usize - 1;
            Ok((
                curves[0].0[i] - curves[0].1[i],
                curves[1].0[i] - curves[1].1[i],
            ))
        })
        .collect()
}

/// Configuration of the cost-simplex sweep.
#[derive(Debug, Clone)]
pub struct HeatmapConfig {
    /// Mean triples (μ_b, μ_e, μ_c) are positive integers summing to this.
    pub simplex_sum: f64,
    pub stds: [f64; 3],
    pub floors: [f64; 3],
    pub checkpoints: Vec<u64>,
    pub seeds: Vec<u64>,
    pub num_skills: usize,
    pub num_tasks: usize,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            simplex_sum: 20.0,
            stds: [10.0; 3],
            floors: [0.0, 1.0, 1.0],
            checkpoints: vec![20, 100, 400],
            seeds: (0..10).collect(),
            num_skills: 20,
            num_tasks: 400,
        }
    }
}

/// One aggregated heatmap cell: the advantage of paid sharing over the
/// baseline (positive means paid sharing is cheaper) at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRow {
    pub mu_b: f64,
    pub mu_e: f64,
    pub mu_c: f64,
    pub checkpoint: u64,
    pub mean_diff_requestor: f64,
    pub mean_diff_system: f64,
    /// 95% half-width of the requestor diff across seeds.
    pub ci95: f64,
    pub n_seeds: usize,
}

fn validate_sweep(
    checkpoints: &[u64],
    seeds: &[u64],
    num_tasks: usize,
) -> Result<(), SimError> {
    if seeds.is_empty() {
        return Err(SimError::NotEnoughSeeds { needed: 1, got: 0 });
    }
    if checkpoints.is_empty() {
        return Err(SimError::InvalidConfig("no checkpoints given".into()));
    }
    let max = *checkpoints.iter().max().expect("nonempty");
    if max as usize > num_tasks || checkpoints.contains(&0) {
        return Err(SimError::InvalidConfig(format!(
            "checkpoints must lie in 1..={num_tasks}"
        )));
    }
    Ok(())
}

/// Sweeps every integer mean triple on the cost simplex, measuring the
/// Baseline-minus-SkillFlowPaid cumulative average at each checkpoint,
/// averaged over seeds. Cells are independent and run in parallel; assembly
/// is in grid order (μ_b, then μ_e ascending), so output is deterministic.
pub fn run_heatmap_sweep(config: &HeatmapConfig) -> Result<Vec<HeatmapRow>, SimError> {
    run_heatmap_sweep_with_progress(config, |_, _| {})
}

/// [`run_heatmap_sweep`] with a completion callback, invoked once per grid
/// cell as `(cells_done, cells_total)`. Cells complete out of order under
/// parallel execution, but the callback always reports a running total.
pub fn run_heatmap_sweep_with_progress(
    config: &HeatmapConfig,
    progress: impl Fn(usize, usize) + Sync,
) -> Result<Vec<HeatmapRow>, SimError> {
    validate_sweep(&config.checkpoints, &config.seeds, config.num_tasks)?;
    if config.simplex_sum < 3.0 {
        return Err(SimError::InvalidConfig(
            "simplex_sum must be ≥ 3 for positive integer triples to exist".into(),
        ));
    }
    let max_mean = config.simplex_sum.ceil() as i64 - 2;
    let mean_values: Vec<f64> = (1..=max_mean).map(|v| v as f64).collect();
    let grid = build_parameter_grid(
        &mean_values,
        config.stds,
        config.floors,
        Some(config.simplex_sum),
    )?;
    let total = grid.len();
    let done = std::sync::atomic::AtomicUsize::new(0);

    let rows: Result<Vec<Vec<HeatmapRow>>, SimError> = grid
        .par_iter()
        .map(|params| {
            let per_seed: Result<Vec<_>, SimError> = config
                .seeds
                .iter()
                .map(|&seed| {
                    paid_diffs_at(
                        params,
                        config.num_skills,
                        config.num_tasks,
                        seed,
                        &config.checkpoints,
                    )
                })
                .collect();
            let per_seed = per_seed?;
            let [mu_b, mu_e, mu_c] = params.means();
            config
                .checkpoints
                .iter()
                .enumerate()
                .map(|(ci, &checkpoint)| {
                    let requestor: Vec<f64> = per_seed.iter().map(|d| d[ci].0).collect();
                    let system: Vec<f64> = per_seed.iter().map(|d| d[ci].1).collect();
                    let (mean_diff_requestor, ci95) = mean_ci95(&requestor)?;
                    let (mean_diff_system, _) = mean_ci95(&system)?;
                    Ok(HeatmapRow {
                        mu_b,
                        mu_e,
                        mu_c,
                        checkpoint,
                        mean_diff_requestor,
                        mean_diff_system,
                        ci95,
                        n_seeds: config.seeds.len(),
                    })
                })
                .collect::<Result<Vec<HeatmapRow>, SimError>>()
                .inspect(|_| {
                    let done = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
                    progress(done, total);
                })
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Configuration of the communication/execution ratio sweep.
#[derive(Debug, Clone)]
pub struct RatioConfig {
    /// Fixed mean buying cost.
    pub mu_b: f64,
    /// μ_e + μ_c is held at this total while the ratio varies, keeping the
    /// per-task cost scale comparable across ratios.
    pub mu_total: f64,
    pub ratios: Vec<f64>,
    pub stds: [f64; 3],
    pub floors: [f64; 3],
    pub checkpoints: Vec<u64>,
    pub seeds: Vec<u64>,
    pub num_skills: usize,
    pub num_tasks: usize,
}

impl Default for RatioConfig {
    fn default() -> Self {
        RatioConfig {
            mu_b: 4.0,
            mu_total: 16.0,
            ratios: vec![0.25, 0.5, 0.8, 1.0, 1.25, 2.0, 4.0],
            stds: [10.0; 3],
            floors: [0.0, 1.0, 1.0],
            checkpoints: vec![20, 100, 400],
            seeds: (0..10).collect(),
            num_skills: 20,
            num_tasks: 400,
        }
    }
}

/// One aggregated ratio-sweep point (requestor perspective).
#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub ratio: f64,
    pub checkpoint: u64,
    pub mean_diff: f64,
    pub ci95: f64,
}

/// For each communication-to-execution ratio r, sets μ_c/μ_e = r with
/// μ_e + μ_c = mu_total and measures the requestor-perspective
/// Baseline-minus-SkillFlowPaid average at each checkpoint across seeds.
pub fn run_ratio_sweep(config: &RatioConfig) -> Result<Vec<RatioRow>, SimError> {
    run_ratio_sweep_with_progress(config, |_, _| {})
}

/// [`run_ratio_sweep`] with a completion callback, invoked once per ratio as
/// `(ratios_done, ratios_total)`.
pub fn run_ratio_sweep_with_progress(
    config: &RatioConfig,
    progress: impl Fn(usize, usize) + Sync,
) -> Result<Vec<RatioRow>, SimError> {
    validate_sweep(&config.checkpoints, &config.seeds, config.num_tasks)?;
    if config.ratios.is_empty() {
        return Err(SimError::InvalidConfig("no ratios given".into()));
    }
    for &r in &config.ratios {
        if !(r.is_finite() && r > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "ratios must be positive and finite, got {r}"
            )));
        }
    }

    let total = config.ratios.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let rows: Result<Vec<Vec<RatioRow>>, SimError> = config
        .ratios
        .par_iter()
        .map(|&ratio| {
            let mu_e = config.mu_total / (1.0 + ratio);
            let mu_c = config.mu_total - mu_e;
            let params = CostParams::new([config.mu_b, mu_e, mu_c], config.stds, config.floors)?;
            let per_seed: Result<Vec<_>, SimError> = config
                .seeds
                .iter()
                .map(|&seed| {
                    paid_diffs_at(
                        &params,
                        config.num_skills,
                        config.num_tasks,
                        seed,
                        &config.checkpoints,
                    )
                })
                .collect();
            let per_seed = per_seed?;
            config
                .checkpoints
                .iter()
                .enumerate()
                .map(|(ci, &checkpoint)| {
                    let requestor: Vec<f64> = per_seed.iter().map(|d| d[ci].0).collect();
                    let (mean_diff, ci95) = mean_ci95(&requestor)?;
                    Ok(RatioRow {
                        ratio,
                        checkpoint,
                        mean_diff,
                        ci95,
                    })
                })
                .collect::<Result<Vec<RatioRow>, SimError>>()
                .inspect(|_| {
                    let done = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
                    progress(done, total);
                })
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

fn write_metadata(w: &mut impl Write, metadata: &[(&str, String)]) -> io::Result<()> {
    for (key, value) in metadata {
        writeln!(w, "# {key}={value}")?;
    }
    Ok(())
}

/// Writes trajectory rows as CSV (UTF-8, LF, 6-decimal fixed point), with
/// `# key=value` metadata comments before the header.
pub fn write_trajectory_csv(
    rows: &[TrajectoryRow],
    metadata: &[(&str, String)],
    w: &mut impl Write,
) -> io::Result<()> {
    write_metadata(w, metadata)?;
    writeln!(w, "iteration,scenario,perspective,mean,ci95")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6}",
            row.iteration,
            row.scenario.label(),
            row.perspective.label(),
            row.mean,
            row.ci95
        )?;
    }
    Ok(())
}

/// Writes heatmap rows as CSV with metadata comments.
pub fn write_heatmap_csv(
    rows: &[HeatmapRow],
    metadata: &[(&str, String)],
    w: &mut impl Write,
) -> io::Result<()> {
    write_metadata(w, metadata)?;
    writeln!(
        w,
        "mu_b,mu_e,mu_c,checkpoint,mean_diff_requestor,mean_diff_system,ci95,n_seeds"
    )?;
    for row in rows {
        writeln!(
            w,
            "{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{}",
            row.mu_b,
            row.mu_e,
            row.mu_c,
            row.checkpoint,
            row.mean_diff_requestor,
            row.mean_diff_system,
            row.ci95,
            row.n_seeds
        )?;
    }
    Ok(())
}

/// Writes ratio-sweep rows as CSV with metadata comments.
pub fn write_ratio_csv(
    rows: &[RatioRow],
    metadata: &[(&str, String)],
    w: &mut impl Write,
) -> io::Result<()> {
    write_metadata(w, metadata)?;
    writeln!(w, "ratio,checkpoint,mean_diff,ci95")?;
    for row in rows {
        writeln!(
            w,
            "{:.6},{},{:.6},{:.6}",
            row.ratio, row.checkpoint, row.mean_diff, row.ci95
        )?;
    }
    Ok(())
}

/// Convenience: save any of the sweep CSVs to a path.
pub fn save_csv(
    path: impl AsRef<Path>,
    write: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), SimError> {
    let mut file = std::fs::File::create(path)?;
    write(&mut file)?;
    file.flush()?;
    Ok(())
}
