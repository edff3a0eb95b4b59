//! Probe-and-correct: run a candidate on the probe sample and, while it
//! fails, ask the meta-agent for a fix.

use thiserror::Error;

use crate::domain::{AgentAction, WorkflowProgram, MAX_CORRECTIONS};
use crate::gateway::{
    complete, parse_action, render_correction_prompt, splice_program, BackendError, ChatBackend,
    MessageList, Role, TemplateError, Templates,
};

use super::host::{Outcome, WorkflowResult};

#[derive(Debug, Error)]
pub enum CorrectError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone)]
pub struct CorrectionReport {
    /// The accepted action, or `None` when every attempt failed (a skip).
    pub action: Option<AgentAction>,
    /// Corrections requested from the meta-agent.
    pub attempts: u8,
    /// Every probe run, in order.
    pub probes: Vec<WorkflowResult>,
    /// Error report of the final failed attempt, when skipped.
    pub last_error: Option<String>,
    /// Prompt, response and every correction exchange.
    pub conversation: MessageList,
}

impl CorrectionReport {
    pub fn skipped(&self) -> bool {
        self.action.is_none()
    }
}

/// Text shown to the meta-agent for a failed probe.
pub fn error_report_text(result: &WorkflowResult) -> String {
    match &result.outcome {
        Outcome::Answer { .. } => String::new(),
        Outcome::Error(e) => {
            let mut out = format!("{}: {}", e.kind, e.message);
            if !e.trace.trim().is_empty() {
                out.push('\n');
                out.push_str(e.trace.trim_end());
            }
            out
        }
    }
}

/// Probes the action parsed from `response` (the meta-agent's reply to
/// `prompt`). The first program whose probe yields a contract-valid answer is
/// accepted; correctness of the answer is not checked. After
/// [`MAX_CORRECTIONS`] failed corrections the candidate is skipped.
///
/// `probe` receives the program and the attempt number (0 for the original).
pub fn probe_and_correct(
    prompt: &MessageList,
    response: &str,
    meta: &dyn ChatBackend,
    templates: &Templates,
    temperature: f64,
    mut probe: impl FnMut(&WorkflowProgram, u8) -> WorkflowResult,
) -> Result<CorrectionReport, CorrectError> {
    let mut conversation = prompt.clone();
    conversation.push(Role::Assistant, response);
    let mut probes = Vec::new();
    let mut attempts = 0u8;
    let mut candidate = parse_action(response).map_err(|e| format!("ParseError: {e}"));
    loop {
        let error = match candidate {
            Ok(action) => {
                let result = probe(&action.program, attempts);
                let report = error_report_text(&result);
                let ok = matches!(result.outcome, Outcome::Answer { .. });
                probes.push(result);
                if ok {
                    return Ok(CorrectionReport { action: Some(action), attempts, probes, last_error: None, conversation });
                }
                report
            }
            Err(e) => e,
        };
        if attempts == MAX_CORRECTIONS {
            return Ok(CorrectionReport { action: None, attempts, probes, last_error: Some(error), conversation });
        }
        attempts += 1;
        conversation = render_correction_prompt(&conversation, &error, templates)?;
        let reply = complete(meta, &conversation, temperature, 1)?.remove(0);
        conversation.push(Role::Assistant, reply.clone());
        candidate = corrected_action(response, &reply, attempts);
    }
}

fn corrected_action(original: &str, reply: &str, attempts: u8) -> Result<AgentAction, String> {
    let fixed = parse_action(reply).map_err(|e| format!("ParseError: {e}"))?;
    let program = WorkflowProgram::corrected(fixed.program.source(), attempts)
        .map_err(|e| format!("ParseError: {e}"))?;
    let raw_response = splice_program(original, program.source());
    let analysis = parse_action(&raw_response).map(|a| a.analysis).unwrap_or_default();
    Ok(AgentAction { analysis, program, raw_response })
}
