use thiserror::Error;

use crate::domain::{validate_workflow_program, AgentAction, ValidationError};
use crate::text::{fence_code, fence_for, fenced_blocks, last_block_defining};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("response contains no fenced code block")]
    NoCodeBlock,
    #[error("no code block defines `workflow`: {0}")]
    MissingEntryFunction(String),
}

impl From<ValidationError> for ParseError {
    fn from(e: ValidationError) -> Self {
        ParseError::MissingEntryFunction(e.to_string())
    }
}

/// Splits a meta-agent response into analysis (text before the first fence)
/// and the last fenced block declaring `workflow`.
pub fn parse_action(response_text: &str) -> Result<AgentAction, ParseError> {
    let blocks = fenced_blocks(response_text);
    let first = blocks.first().ok_or(ParseError::NoCodeBlock)?;
    let block = last_block_defining(&blocks, "workflow").ok_or_else(|| {
        ParseError::MissingEntryFunction("no fenced block declares `def workflow(`".into())
    })?;
    let program = validate_workflow_program(&block.body)?;
    Ok(AgentAction {
        analysis: response_text[..first.start].trim().to_string(),
        program,
        raw_response: response_text.to_string(),
    })
}

/// Replaces the program in `raw` (its last `workflow` block) with `source`,
/// or appends a fenced block when `raw` has none.
pub fn splice_program(raw: &str, source: &str) -> String {
    let blocks = fenced_blocks(raw);
    match last_block_defining(&blocks, "workflow") {
        Some(block) => {
            let fence = fence_for(source);
            let mut body = source.to_string();
            if !body.ends_with('\n') {
                body.push('\n');
            }
            let info = if block.info.is_empty() { String::new() } else { block.info.clone() };
            let tail = &raw[block.end..];
            let newline = if raw[block.start..block.end].ends_with('\n') { "\n" } else { "" };
            format!("{}{fence}{info}\n{body}{fence}{newline}{tail}", &raw[..block.start])
        }
        None => {
            let mut out = raw.trim_end().to_string();
            if !out.is_empty() {
                out.push_str("\n\n");
            }
            out.push_str(&fence_code(source, "python"));
            out.push('\n');
            out
        }
    }
}
