//! Workflow execution: the runtime supervisor, its wire protocol, the helper
//! API and the self-correction loop.

mod correct;
pub mod extract;
mod helpers;
mod host;
pub mod nested;
pub mod policy;
pub mod process;
pub mod protocol;
pub mod scripted;

pub use correct::{error_report_text, probe_and_correct, CorrectError, CorrectionReport};
pub use helpers::{
    compose_system, parse_json_object, HelperCallRecord, HelperContext, HelperFailure, HelperOutcome,
    HelperService, LiveHelpers, ReplayHelpers, HELPER_NAMES,
};
pub use host::{Limits, Outcome, SandboxHost, WorkflowResult, GRACE};
pub use nested::{NestedError, NestedSandbox, TestVerdict};
pub use protocol::ErrorReport;
