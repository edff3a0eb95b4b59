//! Weak-for-strong workflow optimization.
//!
//! A weak meta-agent (a chat backend, real or scripted) designs executable
//! workflow programs that drive a strong executor model. The engine runs the
//! programs in a supervised sandbox process, scores them on a private
//! validation split, shows public-split failures back to the meta-agent, and
//! iterates. In collect mode it samples several candidates per iteration,
//! assigns piecewise rewards, and exports reward-weighted regression data.
//!
//! Module map:
//!
//! - [`domain`]: value types shared by everything else.
//! - [`text`]: fenced code block scanning used by parsers and helpers.
//! - [`gateway`]: prompt rendering, response parsing and chat backends.
//! - [`sandbox`]: the runtime supervisor, IPC protocol, helper services and
//!   the self-correction loop.
//! - [`eval`]: datasets, metrics and feedback assembly.
//! - [`rlao`]: rewards, best-of-m selection, trajectory assembly and export.
//! - [`rwr`]: a toy reward-weighted regression trainer.
//! - [`engine`]: state transitions and the top-level optimization run.
//! - [`report`]: run reports and curve data.

pub mod config;
pub mod domain;
pub mod engine;
pub mod eval;
pub mod gateway;
pub mod report;
pub mod rlao;
pub mod rwr;
pub mod sandbox;
pub mod text;
pub mod util;

pub use config::{CliConfig, RunConfig};
pub use domain::{
    AgentAction, CaseStudy, ExecStats, Feedback, HistoryEntry, Metric, OptimizationState,
    ProgramOrigin, Provenance, Sample, Split, TaskFamily, TaskSpec, Trajectory, TrajectoryStep,
    WorkflowProgram,
};
