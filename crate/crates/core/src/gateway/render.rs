use crate::domain::{CaseStudy, HistoryEntry, Metric, OptimizationState};
use crate::text::{fence_code, fenced_blocks, neutralize_fences};
use crate::util::truncate_chars;

use super::templates::{fill, TemplateError, Templates};
use super::{Message, MessageList, Role};

pub const EMPTY_HISTORY_TEXT: &str = "(no prior systems)";
pub const EMPTY_ERROR_TEXT: &str = "(no message captured)";

/// Per-case-study character budgets for the rendered history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderBudgets {
    pub case_input: usize,
    pub case_answer: usize,
}

impl Default for RenderBudgets {
    fn default() -> Self {
        Self { case_input: 1500, case_answer: 500 }
    }
}

fn render_case(n: usize, case: &CaseStudy, budgets: RenderBudgets) -> String {
    // Case text comes from the dataset and the executor; keep it from
    // opening fences inside the prompt.
    let clean = |s: &str, budget| neutralize_fences(&truncate_chars(s, budget));
    format!(
        "Case {n}:\nInput: {}\nModel answer: {}\nCorrect answer: {}\n",
        clean(&case.input, budgets.case_input),
        clean(&case.model_answer, budgets.case_answer),
        clean(&case.gold_answer, budgets.case_answer),
    )
}

fn render_entry(n: usize, entry: &HistoryEntry, metric: Metric, budgets: RenderBudgets) -> String {
    let fb = entry.feedback();
    let mut out = format!(
        "#### System {n}\nsystem code:\n{}\n\neval_feedback:\n{}: {:.3}\n",
        fence_code(entry.program().source(), "python"),
        metric.label(),
        fb.score,
    );
    if fb.case_studies.is_empty() {
        out.push_str("No incorrect predictions among the sampled validation cases.\n");
    } else {
        out.push_str("Incorrect predictions on randomly selected validation samples:\n");
        for (i, case) in fb.case_studies.iter().enumerate() {
            out.push_str(&render_case(i + 1, case, budgets));
        }
    }
    out
}

/// History section: oldest entry first; a fixed sentence when empty.
pub fn render_history(entries: &[HistoryEntry], metric: Metric, budgets: RenderBudgets) -> String {
    if entries.is_empty() {
        return EMPTY_HISTORY_TEXT.to_string();
    }
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| render_entry(i + 1, e, metric, budgets))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Recovers the program sources embedded by [`render_history`], in order.
pub fn extract_history_programs(history: &str) -> Vec<String> {
    fenced_blocks(history)
        .into_iter()
        .filter(|b| history[..b.start].ends_with("system code:\n"))
        .map(|b| b.body)
        .collect()
}

pub fn render_state_prompt(
    state: &OptimizationState,
    helper_docs: &str,
    templates: &Templates,
    budgets: RenderBudgets,
) -> Result<MessageList, TemplateError> {
    let history = render_history(state.window_history(), state.task.metric, budgets);
    let user = fill(
        &templates.main,
        &[
            ("[APIs]", helper_docs),
            ("[TASK]", &state.task.description_text),
            ("[HISTORY]", &history),
        ],
    )?;
    let system = if state.instructions.trim().is_empty() {
        templates.system.clone()
    } else {
        state.instructions.clone()
    };
    Ok(MessageList::new(vec![
        Message::new(Role::System, system),
        Message::new(Role::User, user),
    ])
    .expect("system first, non-empty contents"))
}

/// Appends the correction request for `error_report` to the running
/// meta-agent conversation, whose last message is the failing response.
pub fn render_correction_prompt(
    prior: &MessageList,
    error_report: &str,
    templates: &Templates,
) -> Result<MessageList, TemplateError> {
    let error = if error_report.trim().is_empty() {
        EMPTY_ERROR_TEXT.to_string()
    } else {
        neutralize_fences(error_report)
    };
    let user = fill(&templates.correction, &[("[ERROR]", &error)])?;
    let mut out = prior.clone();
    out.push(Role::User, user);
    Ok(out)
}

/// Flattens a message list into a single training context string.
pub fn transcript(messages: &MessageList) -> String {
    let mut out = String::new();
    for m in messages.messages() {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        out.push_str(&format!("<|{role}|>\n{}\n", m.content));
    }
    out
}
