//! State initialization, transitions and window resets.

use thiserror::Error;

use crate::domain::{AgentAction, DomainError, Feedback, HistoryEntry, OptimizationState, TaskSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransitionError {
    #[error("window already holds {0} entries; reset before transitioning")]
    WindowFull(usize),
    #[error("feedback from a failed workflow cannot enter history")]
    FailedFeedback,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// The initial state s1: instructions, task, and the seed entry when given.
pub fn init_state(
    instructions: &str,
    task: TaskSpec,
    horizon: usize,
    seed: Option<HistoryEntry>,
) -> OptimizationState {
    let window_history: Vec<HistoryEntry> = seed.into_iter().collect();
    let window_best = window_history
        .iter()
        .map(HistoryEntry::score)
        .fold(f64::NEG_INFINITY, f64::max);
    OptimizationState {
        instructions: instructions.to_string(),
        task,
        horizon,
        window_history,
        window_best,
    }
}

/// s_{i+1} = [s_i; a_i; f_i] within the current window.
pub fn transition(
    state: &OptimizationState,
    action: &AgentAction,
    feedback: Feedback,
) -> Result<OptimizationState, TransitionError> {
    if feedback.failed {
        return Err(TransitionError::FailedFeedback);
    }
    if state.window_history.len() >= state.horizon {
        return Err(TransitionError::WindowFull(state.window_history.len()));
    }
    let entry = HistoryEntry::new(action.program.clone(), feedback)?;
    let mut next = state.clone();
    next.window_best = next.window_best.max(entry.score());
    next.window_history.push(entry);
    Ok(next)
}

/// State at the start of a window. With nothing to carry this is s1 itself;
/// otherwise a fresh state holding only the carried entry, so the window's
/// best restarts from that one score.
pub fn reset_window(initial: &OptimizationState, carried: Option<HistoryEntry>) -> OptimizationState {
    match carried {
        None => initial.clone(),
        Some(entry) => {
            let best = entry.score();
            OptimizationState {
                instructions: initial.instructions.clone(),
                task: initial.task.clone(),
                horizon: initial.horizon,
                window_history: vec![entry],
                window_best: best,
            }
        }
    }
}
