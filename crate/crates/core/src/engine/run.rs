use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::domain::{AgentAction, Feedback, HistoryEntry, ProgramOrigin, TaskSpec, WorkflowProgram};
use crate::eval::{Dataset, Evaluator};
use crate::gateway::{complete, render_state_prompt, transcript, BackendError, ChatBackend, RenderBudgets, TemplateError, Templates};
use crate::rlao::{settle_candidates, CandidateRecord, IterationRecord};
use crate::sandbox::{probe_and_correct, CorrectError, HelperCallRecord, HelperService, NestedSandbox, SandboxHost, WorkflowResult};

use super::mdp::{init_state, reset_window, transition, TransitionError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("no seed workflow and every iteration was skipped")]
    SeedlessAllFailed,
    #[error("validation split has no public samples to probe with")]
    NoProbeSample,
}

impl From<CorrectError> for EngineError {
    fn from(e: CorrectError) -> Self {
        match e {
            CorrectError::Backend(b) => EngineError::Backend(b),
            CorrectError::Template(t) => EngineError::Template(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One action per iteration.
    Infer,
    /// `m` candidates per iteration with rewards and filtering.
    Collect,
}

/// Everything the loop talks to.
pub struct Toolkit<'a> {
    pub meta: &'a dyn ChatBackend,
    pub helpers: &'a dyn HelperService,
    pub host: &'a SandboxHost,
    pub nested: &'a NestedSandbox,
    pub templates: &'a Templates,
    pub helper_docs: &'a str,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub mode: Mode,
    pub best_program: WorkflowProgram,
    pub best_score: f64,
    /// `None` when the seed workflow is still the best.
    pub best_iteration: Option<usize>,
    pub seed_feedback: Option<Feedback>,
    pub iterations: Vec<IterationRecord>,
    /// Best selected score so far after each iteration; negative infinity
    /// until something has been scored.
    pub global_best_curve: Vec<f64>,
    /// Every served helper call, in invocation order.
    pub helper_log: Vec<HelperCallRecord>,
    pub stopped_early: bool,
}

fn invocation_prefix(iteration: usize, candidate: usize) -> String {
    format!("i{iteration:02}-c{candidate}")
}

/// Runs the optimization loop for `config.iterations` iterations.
///
/// Each iteration renders the current state, samples one action (infer) or
/// `m` candidates (collect), probes every candidate on the first public
/// sample with up to three corrections, evaluates the survivors and settles
/// rewards and selection. Windows span two iterations; the next window starts
/// from a fresh state carrying only the most recent recorded entry.
pub fn run_optimization(
    config: &RunConfig,
    task: &TaskSpec,
    dataset: &Dataset,
    seed: Option<&WorkflowProgram>,
    mode: Mode,
    kit: &Toolkit<'_>,
) -> Result<RunArtifacts, EngineError> {
    let probe_sample = dataset.public_val.first().ok_or(EngineError::NoProbeSample)?;
    let evaluator = Evaluator {
        host: kit.host,
        helpers: kit.helpers,
        task,
        nested: kit.nested,
        workers: config.workers,
        case_study_k: config.case_study_k,
        seed: config.seed,
    };
    let budgets = RenderBudgets { case_input: config.case_input_budget, case_answer: config.case_answer_budget };
    let mut helper_log = Vec::new();
    let mut log_results = |results: &[WorkflowResult]| {
        for r in results {
            helper_log.extend(r.helper_calls.iter().cloned());
        }
    };

    let mut seed_feedback = None;
    let mut seed_entry = None;
    let mut best: Option<(WorkflowProgram, f64, Option<usize>)> = None;
    if let Some(program) = seed {
        let program = program.clone().with_origin(ProgramOrigin::Seed);
        let eval = evaluator.evaluate_workflow(&program, &dataset.private_val, &dataset.public_val, "seed");
        log_results(&eval.results);
        let mut feedback = eval.feedback;
        feedback.failed = eval.results.iter().all(|r| r.outcome.answer().is_none());
        if !feedback.failed {
            best = Some((program.clone(), feedback.score, None));
            seed_entry = Some(HistoryEntry::new(program, feedback.clone()).map_err(TransitionError::from)?);
        } else {
            tracing::warn!("seed workflow never ran successfully; starting without it");
        }
        seed_feedback = Some(feedback);
    }

    let initial = init_state(&kit.templates.system, task.clone(), config.horizon, seed_entry);
    let mut state = initial.clone();
    let mut iterations = Vec::with_capacity(config.iterations);
    let mut curve = Vec::with_capacity(config.iterations);
    let mut since_improvement = 0usize;
    let mut stopped_early = false;
    let (n, temperature, threshold) = match mode {
        Mode::Infer => (1, config.meta_temperature_infer, None),
        Mode::Collect => (config.m, config.meta_temperature_collect, Some(config.filter_threshold)),
    };

    for iteration in 1..=config.iterations {
        let turn = (iteration - 1) % config.horizon + 1;
        if turn == 1 && iteration > 1 {
            state = reset_window(&initial, state.window_history().last().cloned());
        }
        let prompt = render_state_prompt(&state, kit.helper_docs, kit.templates, budgets)?;
        let state_render = transcript(&prompt);
        let (v_prev, v_max) = (state.last_score(), state.window_best());
        let responses = complete(kit.meta, &prompt, temperature, n)?;

        let mut candidates = Vec::with_capacity(n);
        for (k, response) in responses.iter().enumerate() {
            let prefix = invocation_prefix(iteration, k);
            let report = probe_and_correct(&prompt, response, kit.meta, kit.templates, temperature, |program, attempt| {
                kit.host.execute(&format!("{prefix}-probe{attempt}"), program, task, probe_sample, kit.helpers)
            })?;
            log_results(&report.probes);
            let feedback = report.action.as_ref().map(|action| {
                let eval = evaluator.evaluate_workflow(&action.program, &dataset.private_val, &dataset.public_val, &prefix);
                log_results(&eval.results);
                eval.feedback
            });
            if report.skipped() {
                tracing::info!(iteration, candidate = k, "candidate skipped after {} corrections", report.attempts);
            }
            candidates.push(CandidateRecord {
                index: k,
                raw_response: report.action.as_ref().map_or_else(|| response.clone(), |a| a.raw_response.clone()),
                action: report.action,
                feedback,
                reward: None,
                selected: false,
                filtered: false,
                correction_attempts: report.attempts,
                skip_reason: report.last_error,
            });
        }
        let selected = settle_candidates(&mut candidates, v_prev, v_max, threshold);
        let history_len = state.window_history().len();

        if let Some(c) = selected.and_then(|i| candidates.iter().find(|c| c.index == i)) {
            let action: &AgentAction = c.action.as_ref().expect("selected candidates have an action");
            let feedback = c.feedback.clone().expect("selected candidates have feedback");
            let score = feedback.score;
            if turn < config.horizon {
                state = transition(&state, action, feedback)?;
            } else {
                // The window ends here; its last entry only seeds the next window.
                let carried = HistoryEntry::new(action.program.clone(), feedback).map_err(TransitionError::from)?;
                state = reset_window(&initial, Some(carried));
            }
            if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
                best = Some((action.program.clone(), score, Some(iteration)));
                since_improvement = 0;
            } else {
                since_improvement += 1;
            }
        } else {
            since_improvement += 1;
        }
        curve.push(best.as_ref().map_or(f64::NEG_INFINITY, |(_, b, _)| *b));
        iterations.push(IterationRecord {
            iteration,
            turn,
            state_render,
            history_len,
            v_prev,
            v_max,
            candidates,
            selected,
        });
        if config.early_stop_patience.is_some_and(|p| since_improvement >= p) {
            stopped_early = iteration < config.iterations;
            break;
        }
    }

    let (best_program, best_score, best_iteration) = best.ok_or(EngineError::SeedlessAllFailed)?;
    Ok(RunArtifacts {
        mode,
        best_program,
        best_score,
        best_iteration,
        seed_feedback,
        iterations,
        global_best_curve: curve,
        helper_log,
        stopped_early,
    })
}
