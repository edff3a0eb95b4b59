//! Short-lived python processes for `execute_code` and unit tests.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use thiserror::Error;

use super::process::{capture, kill_group, sandboxed_command, STDERR_CAP};

const DRIVER: &str = r#"
import sys, json, io, socket
def _deny(*a, **k):
    raise PermissionError("network access is disabled in the sandbox")
socket.socket = _deny
socket.create_connection = _deny
try:
    import resource
    resource.setrlimit(resource.RLIMIT_AS, (2 << 30, 2 << 30))
except Exception:
    pass
req = json.loads(sys.stdin.read())
real_out = sys.stdout
def emit(obj):
    real_out.write("\n" + json.dumps(obj) + "\n")
    real_out.flush()
def fail(e):
    emit({"ok": False, "kind": type(e).__name__, "message": str(e)})
    sys.exit(0)
sys.stdout = io.StringIO()
ns = {"__name__": "__sandbox__"}
try:
    exec(compile(req["code"], "<solution>", "exec"), ns)
except BaseException as e:
    fail(e)
if req["mode"] == "solution":
    f = ns.get("solution")
    if not callable(f):
        emit({"ok": False, "kind": "MissingSolutionFunction", "message": "code does not define solution()"})
        sys.exit(0)
    try:
        v = f()
    except BaseException as e:
        fail(e)
    try:
        emit({"ok": True, "value": json.loads(json.dumps(v, allow_nan=False))})
    except (TypeError, ValueError):
        emit({"ok": True, "value": repr(v)})
else:
    try:
        exec(compile(req["test"], "<test>", "exec"), ns)
        chk = ns.get("check")
        ep = req.get("entry_point")
        if callable(chk) and ep and ep in ns:
            chk(ns[ep])
    except BaseException as e:
        fail(e)
    emit({"ok": True})
"#;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NestedError {
    #[error("code does not define solution()")]
    MissingSolutionFunction,
    #[error("code exceeded {0} ms")]
    NestedTimeout(u64),
    #[error("{kind}: {message}")]
    Raised { kind: String, message: String },
    #[error("nested sandbox unavailable: {0}")]
    Unavailable(String),
}

impl NestedError {
    pub fn kind(&self) -> &str {
        match self {
            NestedError::MissingSolutionFunction => "MissingSolutionFunction",
            NestedError::NestedTimeout(_) => "NestedTimeout",
            NestedError::Raised { kind, .. } => kind,
            NestedError::Unavailable(_) => "SandboxUnavailable",
        }
    }

    pub fn message(&self) -> String {
        match self {
            NestedError::Raised { message, .. } => message.clone(),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestVerdict {
    pub passed: bool,
    /// Empty when the test passed.
    pub feedback: String,
}

#[derive(Debug, Clone)]
pub struct NestedSandbox {
    pub python: String,
    pub timeout: Duration,
    pub isolate_network: bool,
    /// Parent for per-run scratch dirs; the system temp dir when `None`.
    pub scratch_root: Option<PathBuf>,
}

impl NestedSandbox {
    pub fn new(python: impl Into<String>, timeout: Duration) -> Self {
        Self { python: python.into(), timeout, isolate_network: true, scratch_root: None }
    }

    /// Runs `code` and returns the JSON form of `solution()`'s return value
    /// (its `repr` when not JSON-representable).
    pub fn run_solution(&self, code: &str) -> Result<Value, NestedError> {
        let reply = self.run(&json!({"mode": "solution", "code": code}))?;
        Ok(reply.get("value").cloned().unwrap_or(Value::Null))
    }

    /// Runs one test script against `code`. A test may be plain assertions
    /// or define `check(candidate)`, which is called with `entry_point`.
    pub fn run_test(&self, code: &str, test: &str, entry_point: &str) -> Result<TestVerdict, NestedError> {
        let req = json!({"mode": "test", "code": code, "test": test, "entry_point": entry_point});
        match self.run(&req) {
            Ok(_) => Ok(TestVerdict { passed: true, feedback: String::new() }),
            Err(NestedError::Unavailable(e)) => Err(NestedError::Unavailable(e)),
            Err(e) => Ok(TestVerdict {
                passed: false,
                feedback: format!("Failed test:\n{}\nError: {}: {}", test.trim_end(), e.kind(), e.message()),
            }),
        }
    }

    /// Runs tests in order, stopping at the first failure.
    pub fn run_tests(&self, code: &str, tests: &[String], entry_point: &str) -> Result<TestVerdict, NestedError> {
        for test in tests {
            let v = self.run_test(code, test, entry_point)?;
            if !v.passed {
                return Ok(v);
            }
        }
        Ok(TestVerdict { passed: true, feedback: String::new() })
    }

    fn run(&self, request: &Value) -> Result<Value, NestedError> {
        let unavailable = |e: std::io::Error| NestedError::Unavailable(e.to_string());
        let scratch = match &self.scratch_root {
            Some(root) => tempfile::tempdir_in(root),
            None => tempfile::tempdir(),
        }
        .map_err(unavailable)?;
        let argv = vec![self.python.clone(), "-I".into(), "-c".into(), DRIVER.into()];
        let mut child = sandboxed_command(&argv, scratch.path(), self.isolate_network)
            .map_err(unavailable)?
            .spawn()
            .map_err(unavailable)?;
        let stdout = capture(child.stdout.take().expect("piped stdout"), STDERR_CAP);
        let stderr = capture(child.stderr.take().expect("piped stderr"), STDERR_CAP);
        let mut stdin = child.stdin.take().expect("piped stdin");
        let payload = request.to_string();
        // A write error means the interpreter died early; its stderr says why.
        std::thread::spawn(move || {
            let _ = stdin.write_all(payload.as_bytes());
        });
        let deadline = Instant::now() + self.timeout;
        let timed_out = loop {
            match child.try_wait() {
                Ok(Some(_)) => break false,
                Ok(None) if Instant::now() >= deadline => break true,
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => {
                    kill_group(&mut child);
                    return Err(unavailable(e));
                }
            }
        };
        kill_group(&mut child);
        if timed_out {
            return Err(NestedError::NestedTimeout(self.timeout.as_millis() as u64));
        }
        let out = stdout.join().unwrap_or_default();
        let err = stderr.join().unwrap_or_default();
        let reply: Value = out
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .and_then(|l| serde_json::from_str(l).ok())
            .ok_or_else(|| {
                NestedError::Unavailable(format!("no verdict from interpreter; stderr: {}", err.trim()))
            })?;
        if reply["ok"] == Value::Bool(true) {
            return Ok(reply);
        }
        let kind = reply["kind"].as_str().unwrap_or("Exception").to_string();
        if kind == "MissingSolutionFunction" {
            return Err(NestedError::MissingSolutionFunction);
        }
        let message = reply["message"].as_str().unwrap_or_default().to_string();
        Err(NestedError::Raised { kind, message })
    }
}
