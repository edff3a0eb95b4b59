//! Supervises one workflow invocation in a runtime process.

use std::io::BufReader;
use std::process::Child;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::domain::{validate_answer_dict, ExecStats, Sample, TaskSpec, WorkflowProgram};
use crate::util::derive_seed;

use super::helpers::{HelperCallRecord, HelperContext, HelperService};
use super::process::{capture, kill_group, sandboxed_command, STDERR_CAP};
use super::protocol::{
    parse_runtime_frame, read_frame, reply_err, reply_ok, run_workflow_frame, write_frame, ErrorReport,
    FrameError, RuntimeFrame,
};

/// Extra time allowed past the budget before an invocation must be gone.
pub const GRACE: Duration = Duration::from_secs(2);

const TRACE_CAP: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub workflow_timeout: Duration,
    pub max_helper_calls: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { workflow_timeout: Duration::from_secs(120), max_helper_calls: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Answer {
        /// The coerced "answer" value.
        answer: String,
        result: Map<String, Value>,
    },
    Error(ErrorReport),
}

impl Outcome {
    fn error(kind: &str, message: impl Into<String>) -> Self {
        Outcome::Error(ErrorReport { kind: kind.into(), message: message.into(), trace: String::new() })
    }

    pub fn answer(&self) -> Option<&str> {
        match self {
            Outcome::Answer { answer, .. } => Some(answer),
            Outcome::Error(_) => None,
        }
    }

    pub fn error_report(&self) -> Option<&ErrorReport> {
        match self {
            Outcome::Error(e) => Some(e),
            Outcome::Answer { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowResult {
    pub invocation_id: String,
    pub outcome: Outcome,
    pub helper_calls: Vec<HelperCallRecord>,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policy_flags: Vec<String>,
}

impl WorkflowResult {
    /// Executor usage of this invocation.
    pub fn exec_stats(&self) -> ExecStats {
        let mut s = ExecStats { wall_ms: self.wall_ms, ..Default::default() };
        for c in &self.helper_calls {
            s.calls += c.api_calls;
            s.tokens_in += c.tokens_in;
            s.tokens_out += c.tokens_out;
        }
        s
    }

    /// The result without wall-clock fields, for reproducibility checks.
    pub fn timeless(&self) -> WorkflowResult {
        let mut r = self.clone();
        r.wall_ms = 0;
        for c in &mut r.helper_calls {
            c.latency_ms = 0;
        }
        r
    }
}

/// How to launch the runtime process.
#[derive(Debug, Clone)]
pub struct SandboxHost {
    pub command: Vec<String>,
    pub isolate_network: bool,
    /// Base seed; each invocation gets one derived from its id.
    pub seed: u64,
    pub limits: Limits,
}

enum Event {
    Frame(Vec<u8>),
    Bad(FrameError),
    Eof,
}

fn tail(text: &str, cap: usize) -> String {
    let n = text.chars().count();
    text.chars().skip(n.saturating_sub(cap)).collect()
}

impl SandboxHost {
    /// Runs `program` on one sample. Never fails: every problem becomes an
    /// error outcome.
    pub fn execute(
        &self,
        invocation_id: &str,
        program: &WorkflowProgram,
        task: &TaskSpec,
        sample: &Sample,
        helpers: &dyn HelperService,
    ) -> WorkflowResult {
        let start = Instant::now();
        let policy_flags = super::policy::scan(program.source());
        if !policy_flags.is_empty() {
            tracing::warn!(invocation = invocation_id, flags = ?policy_flags, "workflow matches unsafe patterns");
        }
        let mut helper_calls = Vec::new();
        let outcome = self.supervise(invocation_id, program, task, sample, helpers, &mut helper_calls, start);
        WorkflowResult {
            invocation_id: invocation_id.to_string(),
            outcome,
            helper_calls,
            wall_ms: start.elapsed().as_millis() as u64,
            policy_flags,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn supervise(
        &self,
        invocation_id: &str,
        program: &WorkflowProgram,
        task: &TaskSpec,
        sample: &Sample,
        helpers: &dyn HelperService,
        records: &mut Vec<HelperCallRecord>,
        start: Instant,
    ) -> Outcome {
        let scratch = match tempfile::tempdir() {
            Ok(d) => d,
            Err(e) => return Outcome::error("SandboxUnavailable", format!("cannot create scratch dir: {e}")),
        };
        let seed = derive_seed(self.seed, invocation_id);
        let mut argv = self.command.clone();
        argv.extend([
            "--scratch".to_string(),
            scratch.path().to_string_lossy().into_owned(),
            "--seed".to_string(),
            seed.to_string(),
        ]);
        let mut child = match sandboxed_command(&argv, scratch.path(), self.isolate_network).and_then(|mut c| c.spawn()) {
            Ok(c) => c,
            Err(e) => return Outcome::error("SandboxUnavailable", format!("cannot start runtime {:?}: {e}", self.command)),
        };
        let stderr = capture(child.stderr.take().expect("piped stderr"), STDERR_CAP);
        let outcome = self.converse(&mut child, invocation_id, program, task, sample, helpers, records, start);
        kill_group(&mut child);
        let stderr = stderr.join().unwrap_or_default();
        match outcome {
            Outcome::Error(mut e) if e.kind == "RuntimeCrashed" && e.trace.is_empty() => {
                e.trace = tail(stderr.trim(), TRACE_CAP);
                Outcome::Error(e)
            }
            other => other,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn converse(
        &self,
        child: &mut Child,
        invocation_id: &str,
        program: &WorkflowProgram,
        task: &TaskSpec,
        sample: &Sample,
        helpers: &dyn HelperService,
        records: &mut Vec<HelperCallRecord>,
        start: Instant,
    ) -> Outcome {
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let event = match read_frame(&mut reader) {
                    Ok(Some(bytes)) => Event::Frame(bytes),
                    Ok(None) => Event::Eof,
                    Err(e) => Event::Bad(e),
                };
                let last = !matches!(event, Event::Frame(_));
                if tx.send(event).is_err() || last {
                    break;
                }
            }
        });

        let entry_point = if program.declares_entry_point() { task.entry_point.as_deref() } else { None };
        let run_id = format!("{invocation_id}/run");
        let first = run_workflow_frame(&run_id, program.source(), &sample.input, entry_point);
        if let Err(e) = write_frame(&mut stdin, &first) {
            return Outcome::error("RuntimeCrashed", format!("could not send the workflow: {e}"));
        }
        let deadline = start + self.limits.workflow_timeout;
        let timeout = || {
            Outcome::error(
                "Timeout",
                format!("workflow exceeded {} ms", self.limits.workflow_timeout.as_millis()),
            )
        };
        let mut seq = 0u64;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let event = match rx.recv_timeout(remaining) {
                Ok(ev) => ev,
                Err(RecvTimeoutError::Timeout) => return timeout(),
                Err(RecvTimeoutError::Disconnected) => Event::Eof,
            };
            let bytes = match event {
                Event::Frame(b) => b,
                Event::Bad(e) => return Outcome::error("ProtocolError", e.to_string()),
                Event::Eof => {
                    let status = child.wait().map(|s| s.to_string()).unwrap_or_else(|e| e.to_string());
                    return Outcome::error("RuntimeCrashed", format!("runtime exited ({status}) without a done frame"));
                }
            };
            match parse_runtime_frame(&bytes) {
                Err(e) => return Outcome::error("ProtocolError", e.to_string()),
                Ok(RuntimeFrame::Done { id, outcome }) => {
                    if id != Value::String(run_id.clone()) {
                        return Outcome::error("ProtocolError", format!("done frame for unknown id {id}"));
                    }
                    // Frames after done are never served: the group is killed next.
                    return match outcome {
                        Err(mut report) => {
                            report.trace = tail(&report.trace, TRACE_CAP);
                            Outcome::Error(report)
                        }
                        Ok(result) => match validate_answer_dict(&result) {
                            Ok(answer) => Outcome::Answer {
                                answer,
                                result: result.as_object().cloned().unwrap_or_default(),
                            },
                            Err(e) => Outcome::error("ContractViolation", format!("{}: {e}", e.kind())),
                        },
                    };
                }
                Ok(RuntimeFrame::Helper { id, name, args }) => {
                    let reply = if records.len() >= self.limits.max_helper_calls {
                        reply_err(
                            &id,
                            "HelperBudgetExceeded",
                            &format!("more than {} helper calls in one invocation", self.limits.max_helper_calls),
                        )
                    } else {
                        let ctx = HelperContext { invocation_id, seq, task, sample };
                        let t0 = Instant::now();
                        let out = helpers.call(&ctx, &name, &args);
                        let reply = match &out.result {
                            Ok(v) => reply_ok(&id, v.clone()),
                            Err(f) => reply_err(&id, &f.kind, &f.message),
                        };
                        records.push(HelperCallRecord {
                            invocation_id: invocation_id.to_string(),
                            seq,
                            method: name,
                            request: args,
                            response: out.response_payload(),
                            latency_ms: t0.elapsed().as_millis() as u64,
                            tokens_in: out.tokens_in,
                            tokens_out: out.tokens_out,
                            api_calls: out.api_calls,
                        });
                        seq += 1;
                        reply
                    };
                    if Instant::now() >= deadline {
                        return timeout();
                    }
                    if let Err(FrameError::TooLarge) = write_frame(&mut stdin, &reply) {
                        let too_big = reply_err(&id, "ReplyTooLarge", "helper result exceeds the frame limit");
                        let _ = write_frame(&mut stdin, &too_big);
                    }
                }
            }
        }
    }
}
