//! Helper API served to running workflows.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::domain::{Sample, TaskSpec};
use crate::gateway::{ChatBackend, Message, MessageList, Role};
use crate::text::fence_code;

use super::extract::{extract_answer_str, extract_code_block};
use super::nested::NestedSandbox;

pub const HELPER_NAMES: &[&str] = &[
    "call_llm",
    "call_json_format_llm",
    "execute_code",
    "extract_answer_str",
    "extract_code_block",
    "test_on_public_test",
];

/// What a helper sees of the invocation it serves.
#[derive(Debug, Clone, Copy)]
pub struct HelperContext<'a> {
    pub invocation_id: &'a str,
    pub seq: u64,
    pub task: &'a TaskSpec,
    pub sample: &'a Sample,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelperFailure {
    pub kind: String,
    pub message: String,
}

impl HelperFailure {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self { kind: kind.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelperOutcome {
    pub result: Result<Value, HelperFailure>,
    pub tokens_in: u64,
    pub tokens_out: u64,
    /// Executor API requests made while serving the call.
    pub api_calls: u64,
}

impl HelperOutcome {
    fn local(result: Result<Value, HelperFailure>) -> Self {
        Self { result, tokens_in: 0, tokens_out: 0, api_calls: 0 }
    }

    /// The reply payload as logged: `{"ok": true, "result"}` or
    /// `{"ok": false, "error": {"kind", "message"}}`.
    pub fn response_payload(&self) -> Value {
        match &self.result {
            Ok(v) => json!({"ok": true, "result": v}),
            Err(f) => json!({"ok": false, "error": {"kind": f.kind, "message": f.message}}),
        }
    }
}

/// One served helper call, as written to `helper_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelperCallRecord {
    pub invocation_id: String,
    pub seq: u64,
    pub method: String,
    pub request: Value,
    pub response: Value,
    pub latency_ms: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub api_calls: u64,
}

pub trait HelperService: Send + Sync {
    fn call(&self, ctx: &HelperContext<'_>, name: &str, args: &Value) -> HelperOutcome;
}

/// Live helpers: executor calls go to the strong model, code runs in the
/// nested sandbox.
pub struct LiveHelpers {
    executor: Arc<dyn ChatBackend>,
    nested: NestedSandbox,
}

struct Meter {
    tokens_in: u64,
    tokens_out: u64,
    api_calls: u64,
}

impl Meter {
    fn new() -> Self {
        Self { tokens_in: 0, tokens_out: 0, api_calls: 0 }
    }

    fn finish(self, result: Result<Value, HelperFailure>) -> HelperOutcome {
        HelperOutcome { result, tokens_in: self.tokens_in, tokens_out: self.tokens_out, api_calls: self.api_calls }
    }
}

fn invalid(message: impl Into<String>) -> HelperFailure {
    HelperFailure::new("InvalidArgument", message)
}

fn arg_str<'a>(args: &'a Value, key: &str) -> Result<Option<&'a str>, HelperFailure> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(invalid(format!("`{key}` must be a string, got {other}"))),
    }
}

fn required_str<'a>(args: &'a Value, key: &str) -> Result<&'a str, HelperFailure> {
    arg_str(args, key)?.ok_or_else(|| invalid(format!("missing argument `{key}`")))
}

fn arg_count(args: &Value) -> Result<usize, HelperFailure> {
    let v = args.get("num_of_response").or_else(|| args.get("n"));
    match v {
        None | Some(Value::Null) => Ok(1),
        Some(v) => match v.as_u64() {
            Some(n) if n >= 1 => Ok(n as usize),
            _ => Err(invalid(format!("num_of_response must be a positive integer, got {v}"))),
        },
    }
}

fn arg_temperature(args: &Value) -> Result<f64, HelperFailure> {
    match args.get("temperature") {
        None | Some(Value::Null) => Ok(0.7),
        Some(v) => v.as_f64().ok_or_else(|| invalid(format!("temperature must be a number, got {v}"))),
    }
}

/// System prompt composed from the role and the instructions.
pub fn compose_system(agent_role: Option<&str>, instructions: Option<&str>) -> String {
    let role = agent_role.map(str::trim).filter(|r| !r.is_empty()).unwrap_or("helpful assistant");
    let mut out = format!("You are acting as: {role}.");
    if let Some(ins) = instructions.map(str::trim).filter(|i| !i.is_empty()) {
        out.push_str("\n\n");
        out.push_str(ins);
    }
    out
}

fn parse_messages(args: &Value, system: String) -> Result<MessageList, HelperFailure> {
    let items = args
        .get("messages")
        .and_then(Value::as_array)
        .ok_or_else(|| invalid("`messages` must be a list of {role, content} maps"))?;
    let mut list = MessageList::new(vec![Message::new(Role::System, system)]).expect("system first");
    for (i, item) in items.iter().enumerate() {
        let role = match item.get("role").and_then(Value::as_str) {
            Some("system") => Role::System,
            Some("user") => Role::User,
            Some("assistant") => Role::Assistant,
            other => return Err(invalid(format!("message {i} has unsupported role {other:?}"))),
        };
        let content = match item.get("content") {
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None => return Err(invalid(format!("message {i} has no content"))),
        };
        list.push(role, content);
    }
    Ok(list)
}

/// Extracts a JSON object from a completion: the whole text, a fenced block,
/// or the span from the first `{` to the last `}`.
pub fn parse_json_object(text: &str) -> Option<Map<String, Value>> {
    let try_parse = |s: &str| serde_json::from_str::<Value>(s.trim()).ok().and_then(|v| match v {
        Value::Object(m) => Some(m),
        _ => None,
    });
    if let Some(m) = try_parse(text) {
        return Some(m);
    }
    for block in crate::text::fenced_blocks(text).iter().rev() {
        if let Some(m) = try_parse(&block.body) {
            return Some(m);
        }
    }
    let (start, end) = (text.find('{')?, text.rfind('}')?);
    (start < end).then(|| try_parse(&text[start..=end])).flatten()
}

fn key_list(args: &Value) -> Result<Vec<String>, HelperFailure> {
    let keys: Vec<String> = args
        .get("return_dict_keys")
        .and_then(Value::as_array)
        .ok_or_else(|| invalid("`return_dict_keys` must be a list of strings"))?
        .iter()
        .map(|k| k.as_str().map(str::to_string).ok_or_else(|| invalid("`return_dict_keys` must be strings")))
        .collect::<Result<_, _>>()?;
    if keys.is_empty() {
        return Err(invalid("`return_dict_keys` must be non-empty"));
    }
    Ok(keys)
}

impl LiveHelpers {
    pub fn new(executor: Arc<dyn ChatBackend>, nested: NestedSandbox) -> Self {
        Self { executor, nested }
    }

    fn complete(
        &self,
        meter: &mut Meter,
        messages: &MessageList,
        temperature: f64,
        n: usize,
    ) -> Result<Vec<String>, HelperFailure> {
        let c = self
            .executor
            .complete(messages, temperature, n)
            .map_err(|e| HelperFailure::new("ExecutorUnavailable", e.to_string()))?;
        meter.api_calls += 1;
        meter.tokens_in += c.tokens_in;
        meter.tokens_out += c.tokens_out;
        if c.texts.len() != n {
            return Err(HelperFailure::new(
                "ExecutorUnavailable",
                format!("executor returned {} completions, {n} requested", c.texts.len()),
            ));
        }
        Ok(c.texts)
    }

    fn call_llm(&self, meter: &mut Meter, args: &Value) -> Result<Value, HelperFailure> {
        let system = compose_system(arg_str(args, "agent_role")?, arg_str(args, "instructions")?);
        let messages = parse_messages(args, system)?;
        let texts = self.complete(meter, &messages, arg_temperature(args)?, arg_count(args)?)?;
        Ok(json!(texts))
    }

    fn call_json_format_llm(&self, meter: &mut Meter, args: &Value) -> Result<Value, HelperFailure> {
        let keys = key_list(args)?;
        let key_json = serde_json::to_string(&keys).expect("string list");
        let mut system = compose_system(arg_str(args, "agent_role")?, arg_str(args, "instructions")?);
        system.push_str(&format!(
            "\n\nReply with a single JSON object whose keys are exactly {key_json}. Output only the JSON object."
        ));
        let messages = parse_messages(args, system)?;
        let temperature = arg_temperature(args)?;
        let texts = self.complete(meter, &messages, temperature, arg_count(args)?)?;
        let mut out = Vec::with_capacity(texts.len());
        for text in texts {
            let parsed = match parse_json_object(&text) {
                Some(m) => Some(m),
                None => {
                    let mut repair = messages.clone();
                    repair.push(Role::Assistant, text);
                    repair.push(
                        Role::User,
                        format!("That reply was not a valid JSON object. Reply again with only a JSON object whose keys are exactly {key_json}."),
                    );
                    let again = self.complete(meter, &repair, temperature, 1)?;
                    parse_json_object(&again[0])
                }
            };
            let mut map = parsed.unwrap_or_default();
            for k in &keys {
                map.entry(k.clone()).or_insert_with(|| Value::String(String::new()));
            }
            out.push(Value::Object(map));
        }
        Ok(Value::Array(out))
    }

    fn execute_code(&self, args: &Value) -> Result<Value, HelperFailure> {
        let code = required_str(args, "code")?;
        self.nested
            .run_solution(code)
            .map_err(|e| HelperFailure::new(e.kind(), e.message()))
    }

    fn test_on_public_test(
        &self,
        meter: &mut Meter,
        ctx: &HelperContext<'_>,
        args: &Value,
    ) -> Result<Value, HelperFailure> {
        if !ctx.task.is_code() {
            return Err(HelperFailure::new("NotACodeTask", "test_on_public_test needs a code task"));
        }
        let task_text = arg_str(args, "task")?.unwrap_or(&ctx.sample.input);
        let mut code = required_str(args, "solution_code")?.to_string();
        let entry_point = arg_str(args, "entry_point")?
            .or(ctx.task.entry_point.as_deref())
            .unwrap_or("solution")
            .to_string();
        let rounds = match args.get("test_loop") {
            None | Some(Value::Null) => 3,
            Some(v) => match v.as_u64() {
                Some(n) if n >= 1 => n,
                _ => return Err(invalid(format!("test_loop must be a positive integer, got {v}"))),
            },
        };
        let tests = ctx.sample.public_tests();
        let mut feedback = String::new();
        for round in 1..=rounds {
            let verdict = self
                .nested
                .run_tests(&code, tests, &entry_point)
                .map_err(|e| HelperFailure::new(e.kind(), e.message()))?;
            if verdict.passed {
                return Ok(json!({"result": true, "solution": code, "feedback": ""}));
            }
            feedback = verdict.feedback;
            if round == rounds {
                break;
            }
            let prompt = format!(
                "{task_text}\n\nThis solution fails a public test:\n{}\n\n{feedback}\n\nReturn the complete corrected function `{entry_point}` in one python code block.",
                fence_code(&code, "python"),
            );
            let messages = MessageList::new(vec![
                Message::new(Role::System, compose_system(Some("Python programmer"), None)),
                Message::new(Role::User, prompt),
            ])
            .expect("system first, non-empty");
            let reply = self.complete(meter, &messages, 0.3, 1)?;
            if let Ok(repaired) = extract_code_block(&reply[0], &entry_point) {
                code = repaired;
            }
        }
        Ok(json!({"result": false, "solution": code, "feedback": feedback}))
    }
}

impl HelperService for LiveHelpers {
    fn call(&self, ctx: &HelperContext<'_>, name: &str, args: &Value) -> HelperOutcome {
        let mut meter = Meter::new();
        let result = match name {
            "call_llm" => self.call_llm(&mut meter, args),
            "call_json_format_llm" => self.call_json_format_llm(&mut meter, args),
            "execute_code" => self.execute_code(args),
            "extract_answer_str" => {
                return HelperOutcome::local(required_str(args, "response").map(|r| json!(extract_answer_str(r))))
            }
            "extract_code_block" => {
                let r = required_str(args, "response").and_then(|resp| {
                    let ep = arg_str(args, "entry_point")?.unwrap_or("solution");
                    extract_code_block(resp, ep)
                        .map(Value::String)
                        .map_err(|e| HelperFailure::new(e.kind(), e.to_string()))
                });
                return HelperOutcome::local(r);
            }
            "test_on_public_test" => self.test_on_public_test(&mut meter, ctx, args),
            other => Err(HelperFailure::new("UnknownHelper", format!("no helper named {other:?}"))),
        };
        meter.finish(result)
    }
}

/// Serves helper calls from a recorded log, keyed by invocation and sequence
/// number. Any mismatch is reported as a divergence.
pub struct ReplayHelpers {
    records: HashMap<(String, u64), HelperCallRecord>,
    divergences: Mutex<Vec<String>>,
}

impl ReplayHelpers {
    pub fn new(records: Vec<HelperCallRecord>) -> Self {
        let records = records.into_iter().map(|r| ((r.invocation_id.clone(), r.seq), r)).collect();
        Self { records, divergences: Mutex::new(Vec::new()) }
    }

    pub fn divergences(&self) -> Vec<String> {
        self.divergences.lock().expect("divergence lock").clone()
    }

    fn diverge(&self, message: String) -> HelperOutcome {
        self.divergences.lock().expect("divergence lock").push(message.clone());
        HelperOutcome::local(Err(HelperFailure::new("ReplayDivergence", message)))
    }
}

impl HelperService for ReplayHelpers {
    fn call(&self, ctx: &HelperContext<'_>, name: &str, args: &Value) -> HelperOutcome {
        let key = (ctx.invocation_id.to_string(), ctx.seq);
        let Some(rec) = self.records.get(&key) else {
            return self.diverge(format!("no recorded call {}#{}", ctx.invocation_id, ctx.seq));
        };
        if rec.method != name || &rec.request != args {
            return self.diverge(format!("call {}#{} differs from the recording", ctx.invocation_id, ctx.seq));
        }
        let result = if rec.response["ok"] == Value::Bool(true) {
            Ok(rec.response.get("result").cloned().unwrap_or(Value::Null))
        } else {
            let err = &rec.response["error"];
            Err(HelperFailure::new(
                err["kind"].as_str().unwrap_or("Error"),
                err["message"].as_str().unwrap_or_default(),
            ))
        };
        HelperOutcome { result, tokens_in: rec.tokens_in, tokens_out: rec.tokens_out, api_calls: rec.api_calls }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Metric, Split, TaskFamily};
    use crate::gateway::scenario::{ExecutorRule, ExecutorScript};
    use crate::gateway::MockExecutor;
    use std::time::Duration;

    fn task(family: TaskFamily) -> TaskSpec {
        TaskSpec {
            id: "t".into(),
            family,
            description_text: "d".into(),
            metric: if family == TaskFamily::Code { Metric::PassAt1 } else { Metric::Accuracy },
            answer_schema: "s".into(),
            entry_point: (family == TaskFamily::Code).then(|| "add".into()),
            dataset_ref: "x".into(),
        }
    }

    fn sample(tests: Option<Vec<String>>) -> Sample {
        Sample { input: "q".into(), gold: "g".into(), public_tests: tests, split: Split::PublicVal }
    }

    fn helpers(rules: Vec<(&str, Vec<&str>)>, default: Option<&str>) -> LiveHelpers {
        let script = ExecutorScript {
            rules: rules
                .into_iter()
                .map(|(c, r)| ExecutorRule { contains: c.into(), responses: r.into_iter().map(String::from).collect() })
                .collect(),
            default: default.map(String::from),
        };
        LiveHelpers::new(Arc::new(MockExecutor::new(script)), NestedSandbox::new("python3", Duration::from_secs(10)))
    }

    fn call(h: &LiveHelpers, t: &TaskSpec, s: &Sample, name: &str, args: Value) -> HelperOutcome {
        let ctx = HelperContext { invocation_id: "inv", seq: 0, task: t, sample: s };
        h.call(&ctx, name, &args)
    }

    #[test]
    fn call_llm_returns_n_texts() {
        let h = helpers(vec![("France", vec!["Paris"])], Some("?"));
        let (t, s) = (task(TaskFamily::Qa), sample(None));
        let out = call(&h, &t, &s, "call_llm", json!({"messages": [{"role": "user", "content": "capital of France"}], "num_of_response": 2}));
        assert_eq!(out.result.unwrap(), json!(["Paris", "Paris"]));
        assert_eq!(out.api_calls, 1);
        let one = call(&h, &t, &s, "call_llm", json!({"messages": [{"role": "user", "content": "capital of France"}]}));
        assert_eq!(one.result.unwrap(), json!(["Paris"]));
    }

    #[test]
    fn role_goes_into_system_message() {
        let sys = compose_system(Some("math expert"), Some("be brief"));
        assert!(sys.contains("math expert") && sys.ends_with("be brief"));
        // The executor sees the role: a rule keyed on it fires.
        let h = helpers(vec![("math expert", vec!["role seen"])], Some("no"));
        let (t, s) = (task(TaskFamily::Math), sample(None));
        let out = call(&h, &t, &s, "call_llm", json!({"messages": [{"role": "user", "content": "1+1"}], "agent_role": "math expert"}));
        assert_eq!(out.result.unwrap(), json!(["role seen"]));
    }

    #[test]
    fn json_format_parses_repairs_and_fills() {
        let (t, s) = (task(TaskFamily::Qa), sample(None));
        let args = |q: &str| json!({"messages": [{"role": "user", "content": q}], "return_dict_keys": ["reasoning", "answer"]});
        let h = helpers(
            vec![
                ("Q-VALID", vec![r#"{"reasoning": "r", "answer": "a"}"#]),
                ("Q-EXTRA", vec!["```json\n{\"answer\": \"a\", \"confidence\": 0.9}\n```"]),
            ],
            Some("just prose"),
        );
        let ok = call(&h, &t, &s, "call_json_format_llm", args("Q-VALID"));
        assert_eq!(ok.result.unwrap(), json!([{"reasoning": "r", "answer": "a"}]));
        assert_eq!(ok.api_calls, 1);
        let extra = call(&h, &t, &s, "call_json_format_llm", args("Q-EXTRA"));
        assert_eq!(extra.result.unwrap(), json!([{"answer": "a", "confidence": 0.9, "reasoning": ""}]));
        let prose = call(&h, &t, &s, "call_json_format_llm", args("prose please"));
        assert_eq!(prose.result.unwrap(), json!([{"reasoning": "", "answer": ""}]));
        assert_eq!(prose.api_calls, 2);
        let bad = call(&h, &t, &s, "call_json_format_llm", json!({"messages": [], "return_dict_keys": []}));
        assert_eq!(bad.result.unwrap_err().kind, "InvalidArgument");
    }

    #[test]
    fn local_helpers_and_unknown_names() {
        let h = helpers(vec![], None);
        let (t, s) = (task(TaskFamily::Math), sample(None));
        let out = call(&h, &t, &s, "extract_answer_str", json!({"response": "The answer is 7."}));
        assert_eq!(out.result.unwrap(), json!("7"));
        let out = call(&h, &t, &s, "extract_code_block", json!({"response": "no code"}));
        assert_eq!(out.result.unwrap_err().kind, "NoMatchingBlock");
        let out = call(&h, &t, &s, "execute_code", json!({"code": "def solution():\n return 1+1"}));
        assert_eq!(out.result.unwrap(), json!(2));
        let out = call(&h, &t, &s, "execute_code", json!({"code": "x=1"}));
        assert_eq!(out.result.unwrap_err().kind, "MissingSolutionFunction");
        let out = call(&h, &t, &s, "bogus", json!({}));
        assert_eq!(out.result.unwrap_err().kind, "UnknownHelper");
    }

    const GOOD: &str = "def add(a, b):\n    return a + b\n";
    const OFF_BY_ONE: &str = "def add(a, b):\n    return a + b + 1\n";

    fn code_sample() -> Sample {
        sample(Some(vec!["assert add(1, 2) == 3".into(), "assert add(0, 0) == 0".into()]))
    }

    #[test]
    fn public_tests_pass_first_try() {
        let h = helpers(vec![], None);
        let t = task(TaskFamily::Code);
        let out = call(&h, &t, &code_sample(), "test_on_public_test", json!({"task": "q", "solution_code": GOOD, "entry_point": "add", "test_loop": 3}));
        assert_eq!(out.result.unwrap(), json!({"result": true, "solution": GOOD, "feedback": ""}));
        assert_eq!(out.api_calls, 0);
    }

    #[test]
    fn public_tests_repaired_on_round_two() {
        let fixed = format!("```python\n{GOOD}```");
        let h = helpers(vec![("fails a public test", vec![fixed.as_str()])], None);
        let t = task(TaskFamily::Code);
        let out = call(&h, &t, &code_sample(), "test_on_public_test", json!({"task": "q", "solution_code": OFF_BY_ONE, "entry_point": "add", "test_loop": 3}));
        let v = out.result.unwrap();
        assert_eq!(v["result"], true);
        assert_eq!(v["solution"], GOOD);
        assert_ne!(v["solution"], OFF_BY_ONE);
        assert_eq!(out.api_calls, 1);
    }

    #[test]
    fn unrepairable_code_fails_after_test_loop_rounds() {
        let still_bad = format!("```python\n{OFF_BY_ONE}```");
        let h = helpers(vec![("fails a public test", vec![still_bad.as_str()])], None);
        let t = task(TaskFamily::Code);
        let out = call(&h, &t, &code_sample(), "test_on_public_test", json!({"task": "q", "solution_code": OFF_BY_ONE, "entry_point": "add", "test_loop": 3}));
        let v = out.result.unwrap();
        assert_eq!(v["result"], false);
        assert!(v["feedback"].as_str().unwrap().contains("AssertionError"));
        // Three test rounds, two repairs between them.
        assert_eq!(out.api_calls, 2);
        let qa = task(TaskFamily::Qa);
        let out = call(&h, &qa, &code_sample(), "test_on_public_test", json!({"solution_code": GOOD}));
        assert_eq!(out.result.unwrap_err().kind, "NotACodeTask");
    }

    #[test]
    fn replay_serves_recorded_and_flags_divergence() {
        let rec = HelperCallRecord {
            invocation_id: "inv".into(),
            seq: 0,
            method: "call_llm".into(),
            request: json!({"messages": []}),
            response: json!({"ok": true, "result": ["x"]}),
            latency_ms: 5,
            tokens_in: 3,
            tokens_out: 1,
            api_calls: 1,
        };
        let r = ReplayHelpers::new(vec![rec]);
        let (t, s) = (task(TaskFamily::Qa), sample(None));
        let ctx = HelperContext { invocation_id: "inv", seq: 0, task: &t, sample: &s };
        let out = r.call(&ctx, "call_llm", &json!({"messages": []}));
        assert_eq!(out.result.unwrap(), json!(["x"]));
        assert_eq!((out.tokens_in, out.tokens_out, out.api_calls), (3, 1, 1));
        assert!(r.divergences().is_empty());
        let out = r.call(&ctx, "call_llm", &json!({"messages": [1]}));
        assert_eq!(out.result.unwrap_err().kind, "ReplayDivergence");
        assert_eq!(r.divergences().len(), 1);
    }

    #[test]
    fn json_object_extraction() {
        assert!(parse_json_object("{\"a\": 1}").is_some());
        assert!(parse_json_object("Sure: {\"a\": 1} done").is_some());
        assert!(parse_json_object("[1, 2]").is_none());
        assert!(parse_json_object("nothing").is_none());
    }
}
