//! The meta-agent side: prompt rendering, response parsing and chat backends.

mod backend;
mod http;
mod parse;
mod render;
pub mod scenario;
mod templates;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    backend_from_spec, complete, BackendError, BackendRole, BackendSpec, ChatBackend, Completion,
    MetaLogEntry, MockExecutor, MockMetaBackend, RecordingBackend, ReplayBackend,
};
pub use http::HttpChatBackend;
pub use parse::{parse_action, splice_program, ParseError};
pub use render::{
    extract_history_programs, render_correction_prompt, render_history, render_state_prompt,
    transcript, RenderBudgets, EMPTY_ERROR_TEXT, EMPTY_HISTORY_TEXT,
};
pub use templates::{TemplateError, Templates, DEFAULT_HELPER_DOCS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageListError {
    #[error("message list is empty")]
    Empty,
    #[error("first message must have role system")]
    FirstNotSystem,
    #[error("message {0} has empty content")]
    EmptyContent(usize),
}

/// An ordered chat transcript whose first message is the system prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Message>", into = "Vec<Message>")]
pub struct MessageList(Vec<Message>);

impl TryFrom<Vec<Message>> for MessageList {
    type Error = MessageListError;
    fn try_from(messages: Vec<Message>) -> Result<Self, Self::Error> {
        MessageList::new(messages)
    }
}

impl From<MessageList> for Vec<Message> {
    fn from(list: MessageList) -> Self {
        list.0
    }
}

impl MessageList {
    pub fn new(messages: Vec<Message>) -> Result<Self, MessageListError> {
        let first = messages.first().ok_or(MessageListError::Empty)?;
        if first.role != Role::System {
            return Err(MessageListError::FirstNotSystem);
        }
        if let Some(i) = messages.iter().position(|m| m.content.is_empty()) {
            return Err(MessageListError::EmptyContent(i));
        }
        Ok(Self(messages))
    }

    pub fn messages(&self) -> &[Message] {
        &self.0
    }

    pub fn last(&self) -> &Message {
        self.0.last().expect("non-empty by construction")
    }

    /// Appends a message; empty content is replaced by a single space so the
    /// list stays valid.
    pub fn push(&mut self, role: Role, content: impl Into<String>) {
        let mut content = content.into();
        if content.is_empty() {
            content.push(' ');
        }
        self.0.push(Message { role, content });
    }

    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(&self.0).expect("serializable messages");
        crate::util::sha256_hex(json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_list_invariants() {
        assert_eq!(MessageList::new(vec![]), Err(MessageListError::Empty));
        assert_eq!(
            MessageList::new(vec![Message::new(Role::User, "hi")]),
            Err(MessageListError::FirstNotSystem)
        );
        assert_eq!(
            MessageList::new(vec![Message::new(Role::System, "s"), Message::new(Role::User, "")]),
            Err(MessageListError::EmptyContent(1))
        );
        let ok = MessageList::new(vec![Message::new(Role::System, "s")]).unwrap();
        assert_eq!(ok.messages().len(), 1);
    }

    #[test]
    fn hash_is_content_sensitive() {
        let a = MessageList::new(vec![Message::new(Role::System, "s")]).unwrap();
        let b = MessageList::new(vec![Message::new(Role::System, "t")]).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }
}
