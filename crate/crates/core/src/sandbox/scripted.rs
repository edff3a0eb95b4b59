//! A runtime that speaks the IPC protocol but, instead of executing the
//! workflow source, follows `#@` directive lines embedded in it. Used to
//! exercise the host end to end without an interpreter.
//!
//! Directives, one per line, run top to bottom:
//!
//! | directive | effect |
//! |---|---|
//! | `#@ answer <text>` | finish with `{"answer": text}` |
//! | `#@ answers <json object>` | finish with the answer keyed by the task input, else the `default` |
//! | `#@ default <text>` | fallback for `answers` |
//! | `#@ result <json>` | finish with an arbitrary result value |
//! | `#@ raise <Kind> <message>` | finish with an error report |
//! | `#@ helper <name> <json args>` | call a helper; a failed call finishes with its error |
//! | `#@ try_helper <name> <json args>` | call a helper; failures are stored, not raised |
//! | `#@ answer_last [json pointer]` | finish with the last helper result (or a field of it) |
//! | `#@ sleep <ms>` / `#@ loop` | stall for a while / forever |
//! | `#@ spawn_sleeper` | start a child process that outlives the runtime |
//! | `#@ garbage` | write a non-JSON line |
//! | `#@ emit_after_done` | send one more helper request after the done frame |
//! | `#@ exit <code>` | exit without a done frame |
//!
//! Strings inside helper args may use `{task}`, `{entry_point}`, `{last}` and
//! `{last:/json/pointer}` placeholders.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Value};

use super::protocol::{read_frame, write_frame};

struct Session<'a, R, W> {
    input: &'a mut R,
    output: &'a mut W,
    run_id: Value,
    task: String,
    entry_point: String,
    last: Value,
    next_id: u64,
    /// Replies that arrived for requests other than the one awaited.
    stash: HashMap<String, Value>,
}

enum Finish {
    Result(Value),
    Error(String, String),
    Exit(i32),
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{(task|entry_point|last)(?::([^}]*))?\}").expect("valid regex"))
}

fn as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl<R: BufRead, W: Write> Session<'_, R, W> {
    fn substitute(&self, v: &Value) -> Value {
        match v {
            Value::String(s) => Value::String(
                placeholder_re()
                    .replace_all(s, |c: &regex::Captures<'_>| match &c[1] {
                        "task" => self.task.clone(),
                        "entry_point" => self.entry_point.clone(),
                        _ => match c.get(2) {
                            Some(ptr) => self.last.pointer(ptr.as_str()).map(as_text).unwrap_or_default(),
                            None => as_text(&self.last),
                        },
                    })
                    .into_owned(),
            ),
            Value::Array(items) => Value::Array(items.iter().map(|i| self.substitute(i)).collect()),
            Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), self.substitute(v))).collect()),
            other => other.clone(),
        }
    }

    fn send(&mut self, frame: &Value) -> bool {
        write_frame(self.output, frame).is_ok()
    }

    /// Sends a helper request and waits for the reply with the same id.
    fn call(&mut self, name: &str, args: Value) -> Result<Value, (String, String)> {
        let id = format!("h{}", self.next_id);
        self.next_id += 1;
        let frame = json!({"id": id, "method": "helper", "params": {"name": name, "args": args}});
        if !self.send(&frame) {
            return Err(("ChannelClosed".into(), "host closed the channel".into()));
        }
        let reply = loop {
            if let Some(r) = self.stash.remove(&id) {
                break r;
            }
            let bytes = match read_frame(self.input) {
                Ok(Some(b)) => b,
                _ => return Err(("ChannelClosed".into(), "host closed the channel".into())),
            };
            let Ok(v) = serde_json::from_slice::<Value>(&bytes) else {
                return Err(("ProtocolError".into(), "unparseable reply".into()));
            };
            let rid = v.get("id").map(as_text).unwrap_or_default();
            self.stash.insert(rid, v);
        };
        if reply["ok"] == Value::Bool(true) {
            Ok(reply.get("result").cloned().unwrap_or(Value::Null))
        } else {
            let e = &reply["error"];
            Err((
                e["kind"].as_str().unwrap_or("Error").to_string(),
                e["message"].as_str().unwrap_or_default().to_string(),
            ))
        }
    }

    fn run(&mut self, source: &str) -> (Finish, bool) {
        let mut default: Option<String> = None;
        let mut after_done = false;
        for line in source.lines() {
            let Some(directive) = line.trim().strip_prefix("#@") else { continue };
            let directive = directive.trim();
            let (word, rest) = directive.split_once(char::is_whitespace).unwrap_or((directive, ""));
            let rest = rest.trim();
            match word {
                "default" => default = Some(rest.to_string()),
                "emit_after_done" => after_done = true,
                "answer" => return (Finish::Result(json!({"answer": rest})), after_done),
                "answers" => {
                    let table: HashMap<String, String> = match serde_json::from_str(rest) {
                        Ok(t) => t,
                        Err(e) => return (Finish::Error("ValueError".into(), e.to_string()), after_done),
                    };
                    return match table.get(&self.task).cloned().or(default) {
                        Some(a) => (Finish::Result(json!({"answer": a})), after_done),
                        None => (Finish::Error("KeyError".into(), self.task.clone()), after_done),
                    };
                }
                "result" => {
                    return match serde_json::from_str(rest) {
                        Ok(v) => (Finish::Result(v), after_done),
                        Err(e) => (Finish::Error("ValueError".into(), e.to_string()), after_done),
                    }
                }
                "raise" => {
                    let (kind, msg) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                    return (Finish::Error(kind.to_string(), msg.trim().to_string()), after_done);
                }
                "helper" | "try_helper" => {
                    let (name, raw) = rest.split_once(char::is_whitespace).unwrap_or((rest, "{}"));
                    let args = match serde_json::from_str::<Value>(raw) {
                        Ok(a) => self.substitute(&a),
                        Err(e) => return (Finish::Error("ValueError".into(), e.to_string()), after_done),
                    };
                    match self.call(name, args) {
                        Ok(v) => self.last = v,
                        Err((kind, msg)) if kind == "ChannelClosed" => {
                            eprintln!("{kind}: {msg}");
                            return (Finish::Exit(3), false);
                        }
                        Err((kind, msg)) if word == "helper" => return (Finish::Error(kind, msg), after_done),
                        Err((kind, msg)) => self.last = json!({"error": {"kind": kind, "message": msg}}),
                    }
                }
                "answer_last" => {
                    let v = if rest.is_empty() { Some(&self.last) } else { self.last.pointer(rest) };
                    return match v {
                        Some(v) => (Finish::Result(json!({"answer": as_text(v)})), after_done),
                        None => (Finish::Error("KeyError".into(), rest.to_string()), after_done),
                    };
                }
                "sleep" => std::thread::sleep(std::time::Duration::from_millis(rest.parse().unwrap_or(0))),
                "loop" => loop {
                    std::thread::sleep(std::time::Duration::from_millis(50));
                },
                "spawn_sleeper" => {
                    let _ = std::process::Command::new("sleep").arg("30").spawn();
                }
                "garbage" => {
                    let _ = self.output.write_all(b"this is not json\n");
                    let _ = self.output.flush();
                }
                "exit" => return (Finish::Exit(rest.parse().unwrap_or(1)), false),
                other => {
                    return (Finish::Error("UnknownDirective".into(), other.to_string()), after_done);
                }
            }
        }
        (Finish::Error("NoResult".into(), "workflow returned None".into()), after_done)
    }
}

/// Runs one invocation over the given streams; returns the exit code.
pub fn serve(input: &mut impl BufRead, output: &mut impl Write) -> i32 {
    let first = match read_frame(input) {
        Ok(Some(b)) => b,
        _ => return 2,
    };
    let Ok(frame) = serde_json::from_slice::<Value>(&first) else { return 2 };
    if frame["method"] != "run_workflow" {
        return 2;
    }
    let params = &frame["params"];
    let mut session = Session {
        input,
        output,
        run_id: frame["id"].clone(),
        task: params["task"].as_str().unwrap_or_default().to_string(),
        entry_point: params["entry_point"].as_str().unwrap_or_default().to_string(),
        last: Value::Null,
        next_id: 0,
        stash: HashMap::new(),
    };
    let source = params["source"].as_str().unwrap_or_default().to_string();
    let (finish, after_done) = session.run(&source);
    let done = match finish {
        Finish::Exit(code) => return code,
        Finish::Result(v) => json!({"id": session.run_id, "method": "done", "params": {"result": v}}),
        Finish::Error(kind, message) => json!({
            "id": session.run_id,
            "method": "done",
            "params": {"error": {"kind": kind, "message": message, "trace": "  File \"<workflow>\", in workflow"}}
        }),
    };
    if !session.send(&done) {
        return 3;
    }
    if after_done {
        let late = json!({"id": "late", "method": "helper", "params": {"name": "call_llm", "args": {"messages": []}}});
        session.send(&late);
        // Wait for the host to reject or kill us.
        let _ = read_frame(session.input);
    }
    0
}
