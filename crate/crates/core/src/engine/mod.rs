//! The optimization loop: state transitions, the run driver, run
//! directories and replay.

mod mdp;
mod run;
pub mod session;

pub use mdp::{init_state, reset_window, transition, TransitionError};
pub use run::{run_optimization, EngineError, Mode, RunArtifacts, Toolkit};
pub use session::{replay_run, ReplayOutcome, Session, SessionError};
