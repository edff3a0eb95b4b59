use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::http::HttpChatBackend;
use super::scenario::{ExecutorScript, Scenario, ScenarioStep};
use super::MessageList;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("mock scenario exhausted at step {step}: wanted {wanted} responses, {available} scripted")]
    ScenarioExhausted {
        step: usize,
        wanted: usize,
        available: usize,
    },
    #[error("replay diverged: {0}")]
    ReplayDivergence(String),
    #[error("invalid backend spec: {0}")]
    InvalidSpec(String),
    #[error("backend returned {got} completions, {wanted} requested")]
    WrongArity { wanted: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Completion {
    pub texts: Vec<String>,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

/// A chat-completions style model: the meta-agent policy or the executor.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        messages: &MessageList,
        temperature: f64,
        n: usize,
    ) -> Result<Completion, BackendError>;
}

/// Requests exactly `n` completions.
pub fn complete(
    backend: &dyn ChatBackend,
    messages: &MessageList,
    temperature: f64,
    n: usize,
) -> Result<Vec<String>, BackendError> {
    if n == 0 {
        return Err(BackendError::WrongArity { wanted: 0, got: 0 });
    }
    let c = backend.complete(messages, temperature, n)?;
    if c.texts.len() != n {
        return Err(BackendError::WrongArity { wanted: n, got: c.texts.len() });
    }
    Ok(c.texts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    HttpChat {
        /// Full URL of the chat completions endpoint.
        endpoint: String,
        model: String,
        /// Name of the environment variable holding the API key.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_retries")]
        retries: u32,
    },
    Mock {
        scenario_path: PathBuf,
    },
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_retries() -> u32 {
    3
}

impl BackendSpec {
    pub fn validate(&self) -> Result<(), BackendError> {
        match self {
            BackendSpec::HttpChat { endpoint, model, .. } => {
                if endpoint.is_empty() || model.is_empty() {
                    return Err(BackendError::InvalidSpec("endpoint and model are required".into()));
                }
            }
            BackendSpec::Mock { scenario_path } => {
                if scenario_path.as_os_str().is_empty() {
                    return Err(BackendError::InvalidSpec("mock requires scenario_path".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendRole {
    Meta,
    Executor,
}

pub fn backend_from_spec(
    spec: &BackendSpec,
    role: BackendRole,
) -> Result<Arc<dyn ChatBackend>, BackendError> {
    spec.validate()?;
    match spec {
        BackendSpec::HttpChat { endpoint, model, api_key_env, timeout_ms, retries } => {
            let key = match api_key_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    BackendError::Unavailable(format!("environment variable {var} is not set"))
                })?),
                None => None,
            };
            Ok(Arc::new(HttpChatBackend::new(
                endpoint.clone(),
                model.clone(),
                key,
                std::time::Duration::from_millis(*timeout_ms),
                *retries,
            )?))
        }
        BackendSpec::Mock { scenario_path } => {
            let scenario = Scenario::load(scenario_path).map_err(|e| {
                BackendError::Unavailable(format!("cannot load scenario {}: {e}", scenario_path.display()))
            })?;
            Ok(match role {
                BackendRole::Meta => Arc::new(MockMetaBackend::new(scenario.steps)),
                BackendRole::Executor => Arc::new(MockExecutor::new(scenario.executor)),
            })
        }
    }
}

pub(crate) fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

fn prompt_tokens(messages: &MessageList) -> u64 {
    messages.messages().iter().map(|m| count_tokens(&m.content)).sum()
}

/// Scripted meta-agent: each call consumes the next scenario step.
pub struct MockMetaBackend {
    steps: Vec<ScenarioStep>,
    cursor: Mutex<usize>,
}

impl MockMetaBackend {
    pub fn new(steps: Vec<ScenarioStep>) -> Self {
        Self { steps, cursor: Mutex::new(0) }
    }

    pub fn steps_consumed(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }
}

impl ChatBackend for MockMetaBackend {
    fn complete(
        &self,
        messages: &MessageList,
        _temperature: f64,
        n: usize,
    ) -> Result<Completion, BackendError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let step = *cursor;
        let available = self.steps.get(step).map_or(0, |s| s.responses.len());
        if available < n {
            return Err(BackendError::ScenarioExhausted { step, wanted: n, available });
        }
        *cursor += 1;
        let texts: Vec<String> = self.steps[step].responses[..n].to_vec();
        Ok(Completion {
            tokens_in: prompt_tokens(messages),
            tokens_out: texts.iter().map(|t| count_tokens(t)).sum(),
            texts,
        })
    }
}

/// Scripted executor: a pure function of the message contents and the sample
/// index. The first rule whose substring occurs in the conversation answers;
/// sample `i` takes `responses[i % len]`.
pub struct MockExecutor {
    script: ExecutorScript,
}

impl MockExecutor {
    pub fn new(script: ExecutorScript) -> Self {
        Self { script }
    }
}

impl ChatBackend for MockExecutor {
    fn complete(
        &self,
        messages: &MessageList,
        _temperature: f64,
        n: usize,
    ) -> Result<Completion, BackendError> {
        let haystack: String = messages
            .messages()
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let rule = self
            .script
            .rules
            .iter()
            .find(|r| haystack.contains(&r.contains) && !r.responses.is_empty());
        let texts: Vec<String> = match (rule, &self.script.default) {
            (Some(rule), _) => (0..n).map(|i| rule.responses[i % rule.responses.len()].clone()).collect(),
            (None, Some(default)) => vec![default.clone(); n],
            (None, None) => {
                return Err(BackendError::Unavailable(
                    "mock executor has no rule matching the request and no default".into(),
                ))
            }
        };
        Ok(Completion {
            tokens_in: prompt_tokens(messages),
            tokens_out: texts.iter().map(|t| count_tokens(t)).sum(),
            texts,
        })
    }
}

/// One recorded meta-agent completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLogEntry {
    pub seq: u64,
    pub messages_hash: String,
    pub temperature: f64,
    pub n: usize,
    pub texts: Vec<String>,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

/// Wraps a backend and records every successful completion.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    log: Mutex<Vec<MetaLogEntry>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn entries(&self) -> Vec<MetaLogEntry> {
        self.log.lock().expect("log lock").clone()
    }
}

impl ChatBackend for RecordingBackend {
    fn complete(
        &self,
        messages: &MessageList,
        temperature: f64,
        n: usize,
    ) -> Result<Completion, BackendError> {
        let c = self.inner.complete(messages, temperature, n)?;
        let mut log = self.log.lock().expect("log lock");
        let seq = log.len() as u64;
        log.push(MetaLogEntry {
            seq,
            messages_hash: messages.content_hash(),
            temperature,
            n,
            texts: c.texts.clone(),
            tokens_in: c.tokens_in,
            tokens_out: c.tokens_out,
        });
        Ok(c)
    }
}

/// Serves recorded completions in order, checking each request matches.
pub struct ReplayBackend {
    entries: Vec<MetaLogEntry>,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn new(entries: Vec<MetaLogEntry>) -> Self {
        Self { entries, cursor: Mutex::new(0) }
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(
        &self,
        messages: &MessageList,
        _temperature: f64,
        n: usize,
    ) -> Result<Completion, BackendError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let entry = self.entries.get(*cursor).ok_or_else(|| {
            BackendError::ReplayDivergence(format!("no recorded completion #{}", *cursor))
        })?;
        let hash = messages.content_hash();
        if entry.messages_hash != hash || entry.n != n {
            return Err(BackendError::ReplayDivergence(format!(
                "completion #{} was recorded for a different request",
                *cursor
            )));
        }
        *cursor += 1;
        Ok(Completion {
            texts: entry.texts.clone(),
            tokens_in: entry.tokens_in,
            tokens_out: entry.tokens_out,
        })
    }
}
