//! SkillFlow: peer-to-peer skill sharing for task agents.
//!
//! Agents on a network each hold a set of executable skills and a local
//! register of who owns what. When a task needs a skill an agent does not
//! have, the agent requests the skill's code from a known owner over a small
//! length-prefixed JSON protocol, integrates it, and executes it locally from
//! then on — paying a one-time transfer (and optionally purchase) cost in
//! exchange for cheaper repeat executions.
//!
//! The crate provides:
//!
//! - [`skill`] — skill descriptors, per-skill cost profiles, Gaussian cost
//!   sampling with per-channel floors, and the persistent skill register.
//! - [`cost`] — the three accounting scenarios (baseline remote queries,
//!   free sharing, paid sharing), per-task ledgers, and breakeven analytics.
//! - [`stats`] — small-sample statistics: Student-t confidence intervals,
//!   Welch's t-test, and Benjamini–Hochberg FDR adjustment.
//! - [`sim`] — repeated-task cost simulations, the cost-triangle sweep, the
//!   communication/execution ratio sweep, and their CSV exports.
//! - [`protocol`] — the wire codec, message types, rule-based message
//!   classification, and skill-request composition.
//! - [`agent`] — the peer runtime: detection, acquisition, integration,
//!   execution, and request serving.
//! - [`transport`] — TCP and in-process loopback transports with identical
//!   framing semantics.
//! - [`node`] — a threaded TCP node that serves an agent on a socket.
//! - [`bench`] — a desk-scale scheduling benchmark over the loopback
//!   transport with a deterministic latency model and statistical analysis.
//!
//! All randomness flows through seeded, documented substreams ([`rng`]), so
//! every simulation, sweep, and benchmark run is reproducible byte for byte.

pub mod agent;
pub mod bench;
pub mod cost;
pub mod node;
pub mod protocol;
pub mod rng;
pub mod sim;
pub mod skill;
pub mod stats;
pub mod transport;

pub use agent::{
    detect_skills, Agent, AgentError, AgentState, Counters, Integration, KeywordDetector,
    SkillDetector,
};
pub use bench::{
    analyze_runs, generate_tasks, negotiate_schedule, read_bench_csv, run_benchmark,
    run_benchmark_with, standard_agents, write_analysis_csv, write_bench_csv, AnalysisRow,
    BenchError, BenchMode, BenchTask, Calendar, CalendarAction, CalendarEvent, IterationRecord,
    LatencyModel, Minutes, Negotiation, RunRecord, TaskFailure, TaskTemplate, TemplateSet,
    TimeWindow, DEFAULT_NEGOTIATION_ROUNDS, SLOT_MINUTES,
};
pub use cost::{
    breakeven_task_count, task_cost, Breakeven, CostError, CostLedger, LedgerEntry, Perspective,
    Scenario, TaskCost,
};
pub use node::{serve, serve_with, NodeError, NodeHandle, NodeOptions};
pub use protocol::{
    classify_message, compose_skill_request, decode_frame, encode_frame, AdapterError,
    Classification, ComposeError, DecodeError, EncodeError, FrameReader, Message, MessageClass,
    MessageClassifier, RequestComposer, RuleBasedClassifier, TemplateComposer, MAX_FRAME_PAYLOAD,
};
pub use rng::{stream_rng, stream_seed, StreamDomain};
pub use sim::{
    cumulative_averages, run_heatmap_sweep, run_heatmap_sweep_with_progress, run_ratio_sweep,
    run_ratio_sweep_with_progress, run_simulation, run_trajectory_comparison, write_heatmap_csv,
    write_ratio_csv, write_trajectory_csv, HeatmapConfig, HeatmapRow, RatioConfig, RatioRow,
    SimConfig, SimError, TaskDistribution, TrajectoryRow,
};
pub use skill::{
    build_parameter_grid, sample_cost_profile, AgentId, BodyKind, CostParams, CostProfile,
    RegisterEntry, SkillDescriptor, SkillError, SkillRegister,
};
pub use stats::{bh_fdr_adjust, mean_ci95, welch_t_test, StatsError, WelchTest};
pub use transport::{Connection, LoopbackNet, TcpTransport, Transport, TransportError};
