//! `skillflow` — simulations, TCP nodes, and the scheduling benchmark from
//! one binary.
//!
//! Exit codes: 0 success, 2 usage or configuration errors, 3 peer connection
//! refused, 4 peer timeout, 1 anything else.

mod config;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use clap::{ArgAction, Args, Parser, Subcommand};
use thiserror::Error;

use skillflow::bench::{
    analyze_runs, generate_tasks, read_bench_csv, run_benchmark, standard_agents,
    write_analysis_csv, write_bench_csv, BenchError, BenchMode, LatencyModel, TemplateSet,
};
use skillflow::cost::{Perspective, Scenario};
use skillflow::node::{serve_with, NodeError, NodeOptions};
use skillflow::sim::{
    run_heatmap_sweep_with_progress, run_ratio_sweep_with_progress, run_trajectory_comparison,
    save_csv, write_heatmap_csv, write_ratio_csv, write_trajectory_csv, HeatmapConfig,
    RatioConfig, SimError,
};
use skillflow::skill::{AgentId, CostParams, SkillDescriptor, SkillError, SkillRegister};
use skillflow::transport::TcpTransport;
use skillflow::{Agent, AgentError};

use config::{ConfigError, FileConfig};

#[derive(Parser)]
#[command(
    name = "skillflow",
    version,
    about = "Peer-to-peer skill sharing: cost simulations, TCP nodes, and a scheduling benchmark"
)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cost simulations and parameter sweeps.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Serve an agent over TCP, or run a task against peers.
    #[command(subcommand)]
    Node(NodeCmd),
    /// The scheduling benchmark and its analysis.
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Subcommand)]
enum SimCmd {
    /// Compare the three scenarios over repeated tasks.
    Run(SimRunArgs),
    /// Sweep integer mean-cost triples summing to a fixed total.
    Sweep(SimSweepArgs),
    /// Sweep the communication-to-execution mean cost ratio.
    Ratio(SimRatioArgs),
}

#[derive(Args)]
struct SimRunArgs {
    /// Mean costs as `buy,exec,comm` (e.g. `14,2,4`).
    #[arg(long, value_name = "B,E,C")]
    mu: Option<String>,
    /// Standard deviations as `buy,exec,comm` [default: 0,0,0].
    #[arg(long, value_name = "B,E,C")]
    sigma: Option<String>,
    /// Cost floors as `buy,exec,comm` [default: 0,1,1].
    #[arg(long, value_name = "B,E,C")]
    delta: Option<String>,
    /// Number of distinct skills [default: 20].
    #[arg(long)]
    skills: Option<usize>,
    /// Number of tasks per run [default: 400].
    #[arg(long)]
    tasks: Option<usize>,
    /// Seed count; runs use seeds 0..N-1 [default: 10].
    #[arg(long, value_name = "N")]
    seeds: Option<usize>,
    /// Write the per-iteration trajectory table to this CSV path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimSweepArgs {
    /// Sum each (buy, exec, comm) integer mean triple must reach [default: 20].
    #[arg(long)]
    sum: Option<f64>,
    /// Seed count; each cell uses seeds 0..N-1 [default: 10].
    #[arg(long, value_name = "N")]
    seeds: Option<usize>,
    /// Number of distinct skills [default: 20].
    #[arg(long)]
    skills: Option<usize>,
    /// Number of tasks per run [default: 400].
    #[arg(long)]
    tasks: Option<usize>,
    /// Write the sweep table to this CSV path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimRatioArgs {
    /// Fixed mean buying cost [default: 4].
    #[arg(long = "mu-b")]
    mu_b: Option<f64>,
    /// Total μ_exec + μ_comm held constant across ratios [default: 16].
    #[arg(long = "mu-total")]
    mu_total: Option<f64>,
    /// Comma-separated μ_comm/μ_exec ratios [default: 0.25,0.5,0.8,1,1.25,2,4].
    #[arg(long, value_name = "R,R,...")]
    ratios: Option<String>,
    /// Seed count; each ratio uses seeds 0..N-1 [default: 10].
    #[arg(long, value_name = "N")]
    seeds: Option<usize>,
    /// Number of distinct skills [default: 20].
    #[arg(long)]
    skills: Option<usize>,
    /// Number of tasks per run [default: 400].
    #[arg(long)]
    tasks: Option<usize>,
    /// Write the ratio table to this CSV path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum NodeCmd {
    /// Serve an agent on a TCP socket until SIGINT/SIGTERM.
    Serve(NodeServeArgs),
    /// Run one task prompt against TCP peers, acquiring skills as needed.
    Task(NodeTaskArgs),
}

#[derive(Args)]
struct NodeServeArgs {
    /// Agent identifier.
    #[arg(long)]
    id: Option<String>,
    /// Listen address [default: 127.0.0.1:0].
    #[arg(long, value_name = "HOST:PORT")]
    listen: Option<String>,
    /// Register file: loaded at startup when present, persisted on shutdown.
    #[arg(long, value_name = "PATH")]
    register: Option<PathBuf>,
    /// A skill this node owns, as `name:description:body` (repeatable).
    #[arg(long = "skill", value_name = "NAME:DESC:BODY", action = ArgAction::Append)]
    skills: Vec<String>,
    /// Shutdown grace period for in-flight connections, in ms [default: 5000].
    #[arg(long)]
    grace_ms: Option<u64>,
}

#[derive(Args)]
struct NodeTaskArgs {
    /// Agent identifier [default: cli_requestor].
    #[arg(long)]
    id: Option<String>,
    /// A peer address as `Name=host:port` (repeatable).
    #[arg(long = "peer", value_name = "NAME=HOST:PORT", action = ArgAction::Append)]
    peers: Vec<String>,
    /// Register file listing known skills and their owners.
    #[arg(long, value_name = "PATH")]
    register: Option<PathBuf>,
    /// The task prompt.
    #[arg(long)]
    prompt: Option<String>,
    /// Per-connection timeout in ms [default: 1000].
    #[arg(long)]
    timeout_ms: Option<u64>,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Run both benchmark modes and write their CSV traces.
    Run(BenchRunArgs),
    /// Compare two benchmark CSVs iteration by iteration.
    Analyze(BenchAnalyzeArgs),
}

#[derive(Args)]
struct BenchRunArgs {
    /// Runs per mode [default: 20].
    #[arg(long)]
    runs: Option<usize>,
    /// Remote call latency in ms [default: 200].
    #[arg(long)]
    remote_ms: Option<f64>,
    /// Local execution latency in ms [default: 5].
    #[arg(long)]
    local_ms: Option<f64>,
    /// Per-message negotiation latency in ms [default: 50].
    #[arg(long)]
    negotiation_ms: Option<f64>,
    /// Uniform latency jitter fraction [default: 0.05].
    #[arg(long)]
    jitter: Option<f64>,
    /// Task template TOML file [default: built-in templates].
    #[arg(long, value_name = "PATH")]
    templates: Option<PathBuf>,
    /// Tasks per run [default: 20].
    #[arg(long)]
    tasks: Option<usize>,
    /// Root seed; run r uses its own substream of this seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for bench_baseline.csv and bench_skillflow.csv [default: .].
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchAnalyzeArgs {
    /// Baseline CSV from `bench run`.
    baseline: PathBuf,
    /// Skillflow CSV from `bench run`.
    skillflow: PathBuf,
    /// Output path for the analysis table [default: analysis.csv].
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    ConnectRefused(String),
    #[error("{0}")]
    Timeout(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Agent(AgentError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::ConnectRefused(_) => 3,
            CliError::Timeout(_) => 4,
            CliError::Sim(SimError::InvalidConfig(_) | SimError::NotEnoughSeeds { .. }) => 2,
            CliError::Bench(
                BenchError::InvalidTemplate(_)
                | BenchError::UnknownSkill { .. }
                | BenchError::DetectionMismatch { .. }
                | BenchError::BadTime(_)
                | BenchError::InvalidLatency(_)
                | BenchError::InvalidConfig(_)
                | BenchError::MismatchedRuns(_)
                | BenchError::MalformedCsv { .. }
                | BenchError::Toml(_),
            ) => 2,
            _ => 1,
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

fn bad_param(err: SkillError) -> CliError {
    usage(format!("invalid parameters: {err}"))
}

/// Classifies a failed task-flow step into the connection-aware exit codes.
fn task_error(err: AgentError) -> CliError {
    match &err {
        AgentError::Acquisition { source, .. } => {
            if source.is_connect_refused() {
                CliError::ConnectRefused(err.to_string())
            } else if source.is_timeout() {
                CliError::Timeout(err.to_string())
            } else {
                CliError::Agent(err)
            }
        }
        _ => CliError::Agent(err),
    }
}

static SHUTDOWN: AtomicBool = AtomicBool::new(false);

extern "C" fn on_shutdown_signal(_signal: libc::c_int) {
    SHUTDOWN.store(true, Ordering::SeqCst);
}

fn install_shutdown_handlers() {
    unsafe {
        libc::signal(libc::SIGINT, on_shutdown_signal as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_shutdown_signal as *const () as libc::sighandler_t);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(endpoint) = file.adapter_endpoint() {
        eprintln!(
            "note: adapter endpoint `{endpoint}` is configured; this build uses the \
             built-in rule-based classifier and composer"
        );
    }
    match cli.command {
        Command::Sim(SimCmd::Run(args)) => sim_run(args, &file),
        Command::Sim(SimCmd::Sweep(args)) => sim_sweep(args, &file),
        Command::Sim(SimCmd::Ratio(args)) => sim_ratio(args, &file),
        Command::Node(NodeCmd::Serve(args)) => node_serve(args, &file),
        Command::Node(NodeCmd::Task(args)) => node_task(args, &file),
        Command::Bench(BenchCmd::Run(args)) => bench_run(args, &file),
        Command::Bench(BenchCmd::Analyze(args)) => bench_analyze(args, &file),
    }
}

/// Parses `a,b,c` into a cost triple.
fn parse_triple(text: &str, flag: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(usage(format!(
            "--{flag} expects three comma-separated values, got `{text}`"
        )));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|_| usage(format!("--{flag}: `{part}` is not a number")))?;
    }
    Ok(out)
}

fn triple_from_config(values: &[f64], key: &str) -> Result<[f64; 3], CliError> {
    <[f64; 3]>::try_from(values)
        .map_err(|_| usage(format!("config sim.{key} must hold exactly three values")))
}

fn parse_f64_list(text: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| usage(format!("--{flag}: `{p}` is not a number")))
        })
        .collect()
}

fn seed_range(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

/// Keeps the default checkpoints that fit within `tasks`, always measuring
/// the final task.
fn fit_checkpoints(defaults: &[u64], tasks: usize) -> Vec<u64> {
    let tasks = tasks as u64;
    let mut checkpoints: Vec<u64> = defaults.iter().copied().filter(|&c| c <= tasks).collect();
    if checkpoints.last() != Some(&tasks) {
        checkpoints.push(tasks);
    }
    checkpoints
}

fn sim_run(args: SimRunArgs, file: &FileConfig) -> Result<(), CliError> {
    let mu = match (&args.mu, &file.sim.mu) {
        (Some(flag), _) => parse_triple(flag, "mu")?,
        (None, Some(cfg)) => triple_from_config(cfg, "mu")?,
        (None, None) => return Err(usage("missing required --mu (or config sim.mu)")),
    };
    let sigma = match (&args.sigma, &file.sim.sigma) {
        (Some(flag), _) => parse_triple(flag, "sigma")?,
        (None, Some(cfg)) => triple_from_config(cfg, "sigma")?,
        (None, None) => [0.0; 3],
    };
    let delta = match (&args.delta, &file.sim.delta) {
        (Some(flag), _) => parse_triple(flag, "delta")?,
        (None, Some(cfg)) => triple_from_config(cfg, "delta")?,
        (None, None) => [0.0, 1.0, 1.0],
    };
    let skills = args.skills.or(file.sim.skills).unwrap_or(20);
    let tasks = args.tasks.or(file.sim.tasks).unwrap_or(400);
    let n_seeds = args.seeds.or(file.sim.seeds).unwrap_or(10);
    let out = args
        .out
        .or_else(|| file.sim.out.clone().map(|p| file.resolve(p)));

    let params = CostParams::new(mu, sigma, delta).map_err(bad_param)?;
    let seeds = seed_range(n_seeds);
    println!(
        "sim run: mu=({},{},{}) sigma=({},{},{}) delta=({},{},{}) skills={} tasks={} seeds=0..{}",
        mu[0], mu[1], mu[2], sigma[0], sigma[1], sigma[2], delta[0], delta[1], delta[2],
        skills, tasks, n_seeds
    );
    let rows = run_trajectory_comparison(&params, skills, tasks, &seeds)?;

    if let Some(path) = &out {
        let metadata = [
            ("mu", format!("{},{},{}", mu[0], mu[1], mu[2])),
            ("sigma", format!("{},{},{}", sigma[0], sigma[1], sigma[2])),
            ("delta", format!("{},{},{}", delta[0], delta[1], delta[2])),
            ("skills", skills.to_string()),
            ("tasks", tasks.to_string()),
            ("seeds", n_seeds.to_string()),
        ];
        save_csv(path, |mut w| write_trajectory_csv(&rows, &metadata, &mut w))?;
        println!("wrote {}", path.display());
    }

    for perspective in [Perspective::Requestor, Perspective::System] {
        println!("final cumulative mean cost per task ({}):", perspective.label());
        for scenario in [Scenario::Baseline, Scenario::SkillFlow, Scenario::SkillFlowPaid] {
            let row = rows
                .iter()
                .find(|r| {
                    r.iteration == tasks as u64
                        && r.scenario == scenario
                        && r.perspective == perspective
                })
                .expect("trajectory covers every scenario and iteration");
            println!("  {:<14} {:>12.6} ± {:.6}", scenario.label(), row.mean, row.ci95);
        }
    }
    Ok(())
}

fn sim_sweep(args: SimSweepArgs, file: &FileConfig) -> Result<(), CliError> {
    let defaults = HeatmapConfig::default();
    let num_tasks = args.tasks.or(file.sim.tasks).unwrap_or(defaults.num_tasks);
    let config = HeatmapConfig {
        simplex_sum: args.sum.or(file.sim.sum).unwrap_or(defaults.simplex_sum),
        seeds: seed_range(
            args.seeds
                .or(file.sim.seeds)
                .unwrap_or(defaults.seeds.len()),
        ),
        num_skills: args.skills.or(file.sim.skills).unwrap_or(defaults.num_skills),
        num_tasks,
        checkpoints: fit_checkpoints(&defaults.checkpoints, num_tasks),
        ..defaults
    };
    let out = args
        .out
        .or_else(|| file.sim.out.clone().map(|p| file.resolve(p)));

    println!(
        "sim sweep: sum={} skills={} tasks={} seeds=0..{} checkpoints={:?}",
        config.simplex_sum,
        config.num_skills,
        config.num_tasks,
        config.seeds.len(),
        config.checkpoints
    );
    let rows = run_heatmap_sweep_with_progress(&config, |done, total| {
        eprintln!("sweep cell {done}/{total}");
    })?;

    let cells = rows.len() / config.checkpoints.len();
    println!("{} cells x {} checkpoints = {} rows", cells, config.checkpoints.len(), rows.len());
    for &checkpoint in &config.checkpoints {
        let positive = rows
            .iter()
            .filter(|r| r.checkpoint == checkpoint && r.mean_diff_requestor > 0.0)
            .count();
        println!(
            "checkpoint {:>4}: {:>3}/{} cells save the requestor money",
            checkpoint, positive, cells
        );
    }
    if let Some(path) = &out {
        let metadata = [
            ("sum", config.simplex_sum.to_string()),
            ("skills", config.num_skills.to_string()),
            ("tasks", config.num_tasks.to_string()),
            ("seeds", config.seeds.len().to_string()),
        ];
        save_csv(path, |mut w| write_heatmap_csv(&rows, &metadata, &mut w))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn sim_ratio(args: SimRatioArgs, file: &FileConfig) -> Result<(), CliError> {
    let defaults = RatioConfig::default();
    let ratios = match (&args.ratios, &file.sim.ratios) {
        (Some(flag), _) => parse_f64_list(flag, "ratios")?,
        (None, Some(cfg)) => cfg.clone(),
        (None, None) => defaults.ratios.clone(),
    };
    let num_tasks = args.tasks.or(file.sim.tasks).unwrap_or(defaults.num_tasks);
    let config = RatioConfig {
        mu_b: args.mu_b.or(file.sim.mu_b).unwrap_or(defaults.mu_b),
        mu_total: args
            .mu_total
            .or(file.sim.mu_total)
            .unwrap_or(defaults.mu_total),
        ratios,
        seeds: seed_range(
            args.seeds
                .or(file.sim.seeds)
                .unwrap_or(defaults.seeds.len()),
        ),
        num_skills: args.skills.or(file.sim.skills).unwrap_or(defaults.num_skills),
        num_tasks,
        checkpoints: fit_checkpoints(&defaults.checkpoints, num_tasks),
        ..defaults
    };
    let out = args
        .out
        .or_else(|| file.sim.out.clone().map(|p| file.resolve(p)));

    println!(
        "sim ratio: mu_b={} mu_total={} ratios={:?} skills={} tasks={} seeds=0..{}",
        config.mu_b,
        config.mu_total,
        config.ratios,
        config.num_skills,
        config.num_tasks,
        config.seeds.len()
    );
    let rows = run_ratio_sweep_with_progress(&config, |done, total| {
        eprintln!("ratio cell {done}/{total}");
    })?;

    let last = *config.checkpoints.last().expect("checkpoints nonempty");
    println!("requestor saving (baseline − paid sharing) at task {last}:");
    for row in rows.iter().filter(|r| r.checkpoint == last) {
        println!(
            "  ratio {:>6.2}: {:>10.4} ± {:.4} ({})",
            row.ratio,
            row.mean_diff,
            row.ci95,
            if row.mean_diff > 0.0 { "saves" } else { "costs" }
        );
    }
    if let Some(path) = &out {
        let metadata = [
            ("mu_b", config.mu_b.to_string()),
            ("mu_total", config.mu_total.to_string()),
            ("skills", config.num_skills.to_string()),
            ("tasks", config.num_tasks.to_string()),
            ("seeds", config.seeds.len().to_string()),
        ];
        save_csv(path, |mut w| write_ratio_csv(&rows, &metadata, &mut w))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Parses a `name:description:body` skill definition.
fn parse_skill_arg(arg: &str) -> Result<SkillDescriptor, CliError> {
    let mut parts = arg.splitn(3, ':');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(name), Some(description), Some(body)) => {
            SkillDescriptor::const_string(name, description, body).map_err(bad_param)
        }
        _ => Err(usage(format!(
            "--skill expects `name:description:body`, got `{arg}`"
        ))),
    }
}

fn node_serve(args: NodeServeArgs, file: &FileConfig) -> Result<(), CliError> {
    let id_text = args
        .id
        .or_else(|| file.node.id.clone())
        .ok_or_else(|| usage("missing required --id (or config node.id)"))?;
    let listen = args
        .listen
        .or_else(|| file.node.listen.clone())
        .unwrap_or_else(|| "127.0.0.1:0".to_string());
    let register_path = args
        .register
        .or_else(|| file.node.register.clone().map(|p| file.resolve(p)));
    let skill_args = if args.skills.is_empty() {
        file.node.skills.clone().unwrap_or_default()
    } else {
        args.skills
    };
    let grace = args
        .grace_ms
        .or(file.node.grace_ms)
        .map(Duration::from_millis);

    let id = AgentId::new(id_text).map_err(bad_param)?;
    let mut agent = Agent::new(id.clone());
    if let Some(path) = &register_path {
        if path.exists() {
            let register = SkillRegister::load(path).map_err(bad_param)?;
            println!("loaded register with {} skill(s) from {}", register.len(), path.display());
            agent = agent.with_register(register);
        }
    }
    for arg in &skill_args {
        let descriptor = parse_skill_arg(arg)?;
        agent.integrate_skill(descriptor).map_err(CliError::Agent)?;
    }
    println!("agent {} owns {} skill(s)", id, agent.owned_names().len());

    install_shutdown_handlers();
    let handle = serve_with(
        agent,
        listen.as_str(),
        NodeOptions {
            register_path: register_path.clone(),
            grace,
        },
    )?;
    println!("listening on {}", handle.local_addr());
    std::io::stdout().flush()?;

    while !SHUTDOWN.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(50));
    }
    eprintln!("shutdown signal received; draining connections");
    let agent = handle.join()?;
    let counters = agent.counters();
    println!(
        "served {} skill transfer(s); {} message(s) in, {} out",
        counters.skills_served, counters.messages_received, counters.messages_sent
    );
    if let Some(path) = &register_path {
        println!("register saved to {}", path.display());
    }
    Ok(())
}

fn node_task(args: NodeTaskArgs, file: &FileConfig) -> Result<(), CliError> {
    let id_text = args
        .id
        .or_else(|| file.node.id.clone())
        .unwrap_or_else(|| "cli_requestor".to_string());
    let prompt = args
        .prompt
        .ok_or_else(|| usage("missing required --prompt"))?;
    let peers = if args.peers.is_empty() {
        file.node.peers.clone().unwrap_or_default()
    } else {
        args.peers
    };
    if peers.is_empty() {
        return Err(usage("at least one --peer NAME=HOST:PORT is required"));
    }
    let register_path = args
        .register
        .or_else(|| file.node.register.clone().map(|p| file.resolve(p)));
    let timeout = Duration::from_millis(args.timeout_ms.or(file.node.timeout_ms).unwrap_or(1000));

    let id = AgentId::new(id_text).map_err(bad_param)?;
    let mut agent = Agent::new(id);
    if let Some(path) = &register_path {
        let register = SkillRegister::load(path).map_err(bad_param)?;
        agent = agent.with_register(register);
    }

    let mut transport = TcpTransport::new().with_timeout(Some(timeout));
    for peer in &peers {
        let (name, addr) = peer
            .split_once('=')
            .ok_or_else(|| usage(format!("--peer expects `NAME=HOST:PORT`, got `{peer}`")))?;
        let peer_id = AgentId::new(name).map_err(bad_param)?;
        transport
            .add_peer(peer_id, addr)
            .map_err(|e| usage(format!("cannot resolve peer `{peer}`: {e}")))?;
    }

    let detected = agent.detect(&prompt);
    if detected.is_empty() {
        println!("no registered skills detected in the prompt; nothing to do");
        return Ok(());
    }
    println!("detected skill(s): {}", detected.join(", "));

    let acquired_before = agent.counters().skills_acquired;
    agent.skill_flow(&prompt, &transport).map_err(task_error)?;
    let acquired = agent.counters().skills_acquired - acquired_before;
    println!("acquired {acquired} new skill(s)");

    for skill in &detected {
        match agent.execute_skill(skill) {
            Ok(output) => println!("{skill}: {output}"),
            Err(err) => println!("{skill}: not executable locally ({err})"),
        }
    }
    let counters = agent.counters();
    println!(
        "messages: {} sent, {} received",
        counters.messages_sent, counters.messages_received
    );
    Ok(())
}

fn bench_run(args: BenchRunArgs, file: &FileConfig) -> Result<(), CliError> {
    let defaults = LatencyModel::default();
    let latency = LatencyModel {
        remote_call_ms: args
            .remote_ms
            .or(file.bench.remote_ms)
            .unwrap_or(defaults.remote_call_ms),
        local_exec_ms: args
            .local_ms
            .or(file.bench.local_ms)
            .unwrap_or(defaults.local_exec_ms),
        negotiation_round_ms: args
            .negotiation_ms
            .or(file.bench.negotiation_ms)
            .unwrap_or(defaults.negotiation_round_ms),
        jitter_frac: args.jitter.or(file.bench.jitter).unwrap_or(defaults.jitter_frac),
    };
    let runs = args.runs.or(file.bench.runs).unwrap_or(20);
    let n_tasks = args.tasks.or(file.bench.tasks).unwrap_or(20);
    let seed = args.seed.or(file.bench.seed).unwrap_or(0);
    let templates_path = args
        .templates
        .or_else(|| file.bench.templates.clone().map(|p| file.resolve(p)));
    let out_dir = args
        .out_dir
        .or_else(|| file.bench.out_dir.clone().map(|p| file.resolve(p)))
        .unwrap_or_else(|| PathBuf::from("."));

    let templates = match &templates_path {
        Some(path) => TemplateSet::load(path)?,
        None => TemplateSet::standard(),
    };
    let (calendar, _) = standard_agents()?;
    let tasks = generate_tasks(&templates, n_tasks, seed, calendar.register())?;
    std::fs::create_dir_all(&out_dir)?;

    println!(
        "bench run: {} run(s) x {} task(s), seed {}, remote {} ms, local {} ms, \
         negotiation {} ms, jitter {}",
        runs, n_tasks, seed, latency.remote_call_ms, latency.local_exec_ms,
        latency.negotiation_round_ms, latency.jitter_frac
    );

    let mut finals = Vec::new();
    for mode in [BenchMode::Baseline, BenchMode::SkillFlow] {
        let records = run_benchmark(mode, &tasks, &latency, runs, seed)?;
        let path = out_dir.join(format!("bench_{}.csv", mode.label()));
        let mut out = std::fs::File::create(&path)?;
        write_bench_csv(&records, &mut out)?;
        out.flush()?;

        let failures: usize = records.iter().map(|r| r.failures.len()).sum();
        let mut final_means = Vec::new();
        for record in &records {
            let completed: Vec<f64> = record
                .per_iteration
                .iter()
                .filter(|it| !it.failed)
                .map(|it| it.elapsed_ms)
                .collect();
            if !completed.is_empty() {
                final_means.push(completed.iter().sum::<f64>() / completed.len() as f64);
            }
        }
        let mean = final_means.iter().sum::<f64>() / final_means.len().max(1) as f64;
        finals.push(mean);
        println!(
            "  {:<9} final mean {:>8.2} ms/task over {} run(s), {} failed task(s) -> {}",
            mode.label(),
            mean,
            records.len(),
            failures,
            path.display()
        );
    }
    if finals.len() == 2 && finals[0] > 0.0 {
        println!(
            "skillflow is {:.1}% below baseline on final cumulative mean",
            (finals[0] - finals[1]) / finals[0] * 100.0
        );
    }
    Ok(())
}

fn bench_analyze(args: BenchAnalyzeArgs, file: &FileConfig) -> Result<(), CliError> {
    let out = args
        .out
        .or_else(|| file.bench.out_dir.clone().map(|p| file.resolve(p).join("analysis.csv")))
        .unwrap_or_else(|| PathBuf::from("analysis.csv"));

    let baseline = read_bench_csv(std::fs::File::open(&args.baseline)?)?;
    let skillflow = read_bench_csv(std::fs::File::open(&args.skillflow)?)?;
    let rows = analyze_runs(&baseline, &skillflow)?;

    let mut out_file = std::fs::File::create(&out)?;
    write_analysis_csv(&rows, &mut out_file)?;
    out_file.flush()?;
    println!("wrote {} ({} iterations)", out.display(), rows.len());

    let significant_from = rows
        .iter()
        .position(|r| rows.iter().skip(r.iteration as usize - 1).all(|s| s.q < 0.05))
        .map(|i| i + 1);
    match significant_from {
        Some(from) => println!("q < 0.05 from iteration {from} onwards"),
        None => println!("q < 0.05 never holds through the final iteration"),
    }
    if let Some(last) = rows.last() {
        let saving = if last.mean_baseline > 0.0 {
            (last.mean_baseline - last.mean_skillflow) / last.mean_baseline * 100.0
        } else {
            0.0
        };
        println!(
            "final iteration: baseline {:.2} ms, skillflow {:.2} ms ({:.1}% saving), q={:.3e}",
            last.mean_baseline, last.mean_skillflow, saving, last.q
        );
    }
    Ok(())
}
