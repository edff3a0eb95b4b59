//! Pure text helpers exposed to workflows.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::text::{fenced_blocks, last_block_defining};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no fenced code block defines `{0}`")]
    NoMatchingBlock(String),
    #[error("entry_point must be non-empty")]
    EmptyEntryPoint,
}

impl ExtractError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExtractError::NoMatchingBlock(_) => "NoMatchingBlock",
            ExtractError::EmptyEntryPoint => "InvalidArgument",
        }
    }
}

/// Content of the last `\boxed{...}` with balanced braces.
pub fn last_boxed(text: &str) -> Option<&str> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1usize;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").expect("valid regex"))
}

fn answer_is_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer is").expect("valid regex"))
}

fn strip_edges(s: &str) -> &str {
    s.trim()
        .trim_start_matches([':', ' ', '\t'])
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!') || c.is_whitespace())
}

/// Final answer from a model response. Tries, in order: the last `\boxed{}`,
/// the rest of the line after the last "answer is", the last number, and
/// finally the whole trimmed response.
pub fn extract_answer_str(response: &str) -> String {
    if let Some(boxed) = last_boxed(response) {
        return boxed.trim().to_string();
    }
    if let Some(m) = answer_is_re().find_iter(response).last() {
        let rest = response[m.end()..].lines().next().unwrap_or("");
        let rest = strip_edges(rest);
        if !rest.is_empty() {
            return rest.to_string();
        }
    }
    if let Some(m) = number_re().find_iter(response).last() {
        return m.as_str().trim_end_matches(',').replace(',', "");
    }
    response.trim().to_string()
}

/// Body of the last fenced block declaring `def <entry_point>(`.
pub fn extract_code_block(response: &str, entry_point: &str) -> Result<String, ExtractError> {
    if entry_point.trim().is_empty() {
        return Err(ExtractError::EmptyEntryPoint);
    }
    let blocks = fenced_blocks(response);
    last_block_defining(&blocks, entry_point)
        .map(|b| b.body.clone())
        .ok_or_else(|| ExtractError::NoMatchingBlock(entry_point.to_string()))
}
