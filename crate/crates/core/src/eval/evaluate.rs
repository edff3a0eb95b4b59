use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{CaseStudy, ExecStats, Feedback, Metric, Sample, Split, TaskSpec, WorkflowProgram};
use crate::sandbox::{HelperService, NestedSandbox, Outcome, SandboxHost, WorkflowResult};
use crate::util::derive_seed;

use super::metrics::{accuracy, pass_at_1, submitted_code, token_f1};
use super::EvalError;

/// Scores one prediction with the task's metric.
pub fn score_sample(task: &TaskSpec, prediction: &str, sample: &Sample, nested: &NestedSandbox) -> Result<f64, EvalError> {
    match task.metric {
        Metric::Accuracy => Ok(accuracy(prediction, &sample.gold)),
        Metric::TokenF1 => Ok(token_f1(prediction, &sample.gold)),
        Metric::PassAt1 => {
            if !task.is_code() {
                return Err(EvalError::NotACodeTask);
            }
            let entry = task.entry_point.as_deref().unwrap_or("solution");
            let code = submitted_code(prediction, entry);
            pass_at_1(nested, &code, &sample.scoring_tests(), entry).map_err(|e| EvalError::Sandbox(e.to_string()))
        }
    }
}

/// Runs `f` over `items` on up to `workers` threads; results keep item order.
pub fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(i, item);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub prediction: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub feedback: Feedback,
    pub private: Vec<SampleScore>,
    pub public: Vec<SampleScore>,
    /// Every invocation, private split first, in index order.
    pub results: Vec<WorkflowResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub per_sample: Vec<SampleScore>,
    pub aggregate: f64,
    pub exec_stats: ExecStats,
}

impl EvalReport {
    pub fn from_rows(split: Split, per_sample: Vec<SampleScore>, exec_stats: ExecStats) -> Self {
        let aggregate = mean(per_sample.iter().map(|r| r.score));
        Self { split, per_sample, aggregate, exec_stats }
    }

    pub fn recompute_aggregate(&self) -> f64 {
        mean(self.per_sample.iter().map(|r| r.score))
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| EvalError::Dataset(e.to_string());
        w.write_record(["id", "score", "prediction", "error"]).map_err(io)?;
        for r in &self.per_sample {
            w.write_record([r.id.as_str(), &r.score.to_string(), &r.prediction, r.error.as_deref().unwrap_or("")])
                .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Dataset(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 fields"))
    }
}

fn mean(scores: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = scores.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub struct Evaluator<'a> {
    pub host: &'a SandboxHost,
    pub helpers: &'a dyn HelperService,
    pub task: &'a TaskSpec,
    pub nested: &'a NestedSandbox,
    pub workers: usize,
    pub case_study_k: usize,
    pub seed: u64,
}

impl Evaluator<'_> {
    /// Runs the program on every sample; invocation failures score 0.
    pub fn run_split(&self, program: &WorkflowProgram, samples: &[Sample], prefix: &str) -> (Vec<SampleScore>, Vec<WorkflowResult>) {
        let pairs = par_map(samples, self.workers, |i, sample| {
            let id = format!("{prefix}-{i:03}");
            let result = self.host.execute(&id, program, self.task, sample, self.helpers);
            let row = match &result.outcome {
                Outcome::Answer { answer, .. } => match score_sample(self.task, answer, sample, self.nested) {
                    Ok(score) => SampleScore { id, prediction: answer.clone(), score, error: None },
                    Err(e) => {
                        tracing::warn!(sample = %id, error = %e, "scoring failed; counted as 0");
                        SampleScore { id, prediction: answer.clone(), score: 0.0, error: Some(e.to_string()) }
                    }
                },
                Outcome::Error(e) => SampleScore {
                    id,
                    prediction: String::new(),
                    score: 0.0,
                    error: Some(format!("{}: {}", e.kind, e.message)),
                },
            };
            (row, result)
        });
        pairs.into_iter().unzip()
    }

    /// Score on the private split, case studies from public-split failures.
    pub fn evaluate_workflow(
        &self,
        program: &WorkflowProgram,
        private_val: &[Sample],
        public_val: &[Sample],
        prefix: &str,
    ) -> Evaluation {
        let (private, mut results) = self.run_split(program, private_val, &format!("{prefix}-private"));
        let (public, public_results) = self.run_split(program, public_val, &format!("{prefix}-public"));
        results.extend(public_results);
        let failures: Vec<usize> = public.iter().enumerate().filter(|(_, r)| r.score < 1.0).map(|(i, _)| i).collect();
        let k = self.case_study_k.min(failures.len());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("{prefix}/case_studies")));
        let mut picked: Vec<usize> = index_sample(&mut rng, failures.len(), k).into_iter().map(|j| failures[j]).collect();
        picked.sort_unstable();
        let case_studies = picked
            .into_iter()
            .map(|i| {
                let s = &public_val[i];
                let row = &public[i];
                CaseStudy {
                    input: s.input.clone(),
                    model_answer: match &row.error {
                        Some(e) if row.prediction.is_empty() => format!("(error) {e}"),
                        _ => row.prediction.clone(),
                    },
                    gold_answer: if s.gold.trim().is_empty() { s.public_tests().join("\n") } else { s.gold.clone() },
                }
            })
            .collect();
        let mut exec_stats = ExecStats::default();
        for r in &results {
            exec_stats.absorb(&r.exec_stats());
        }
        let feedback = Feedback {
            score: mean(private.iter().map(|r| r.score)),
            case_studies,
            failed: false,
            exec_stats,
        };
        Evaluation { feedback, private, public, results }
    }

    pub fn evaluate_on_test(&self, program: &WorkflowProgram, test: &[Sample]) -> (EvalReport, Vec<WorkflowResult>) {
        let (rows, results) = self.run_split(program, test, "test");
        let mut stats = ExecStats::default();
        for r in &results {
            stats.absorb(&r.exec_stats());
        }
        (EvalReport::from_rows(Split::Test, rows, stats), results)
    }
}
