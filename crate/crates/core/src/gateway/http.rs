use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::backend::{BackendError, ChatBackend, Completion};
use super::{MessageList, Role};

/// Chat-completions client with bounded retries on transient failures.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retries: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl HttpChatBackend {
    pub fn new(
        endpoint: String,
        model: String,
        api_key: Option<String>,
        timeout: Duration,
        retries: u32,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self { client, endpoint, model, api_key, retries })
    }

    fn request_once(
        &self,
        messages: &MessageList,
        temperature: f64,
        n: usize,
    ) -> Result<ChatResponse, Attempt> {
        let body = json!({
            "model": self.model,
            "messages": messages.messages().iter().map(|m| json!({
                "role": match m.role { Role::System => "system", Role::User => "user", Role::Assistant => "assistant" },
                "content": m.content,
            })).collect::<Vec<_>>(),
            "temperature": temperature,
            "n": n,
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
        }
        resp.json::<ChatResponse>()
            .map_err(|e| Attempt::Fatal(format!("malformed response: {e}")))
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(
        &self,
        messages: &MessageList,
        temperature: f64,
        n: usize,
    ) -> Result<Completion, BackendError> {
        let mut out = Completion::default();
        let mut failures = 0u32;
        // Some servers cap `n`; keep asking until n texts are collected.
        while out.texts.len() < n {
            let want = n - out.texts.len();
            match self.request_once(messages, temperature, want) {
                Ok(resp) => {
                    if resp.choices.is_empty() {
                        return Err(BackendError::Unavailable("response has no choices".into()));
                    }
                    let usage = resp.usage.unwrap_or_default();
                    out.tokens_in += usage.prompt_tokens;
                    out.tokens_out += usage.completion_tokens;
                    out.texts.extend(
                        resp.choices
                            .into_iter()
                            .take(want)
                            .map(|c| c.message.content.unwrap_or_default()),
                    );
                }
                Err(Attempt::Fatal(msg)) => return Err(BackendError::Unavailable(msg)),
                Err(Attempt::Retry(msg)) => {
                    failures += 1;
                    if failures > self.retries {
                        return Err(BackendError::Unavailable(format!(
                            "giving up after {failures} attempts: {msg}"
                        )));
                    }
                    tracing::warn!(attempt = failures, error = %msg, "retrying chat request");
                    std::thread::sleep(Duration::from_millis(100 << failures.min(6)));
                }
            }
        }
        Ok(out)
    }
}
