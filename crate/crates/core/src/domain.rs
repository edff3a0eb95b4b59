//! Core value types and their validation.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::util::neg_inf_as_null;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid task spec: {0}")]
    InvalidTask(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("feedback from a failed workflow cannot enter history")]
    FailedFeedback,
    #[error("feedback score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("invalid workflow program: {0}")]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidationError {
    #[error("workflow source is empty")]
    EmptySource,
    #[error("missing entry function `workflow`: {0}")]
    MissingEntryFunction(String),
    #[error("too many correction attempts: {0} (max 3)")]
    TooManyCorrections(u8),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContractError {
    #[error("workflow result is not a key-value map")]
    NotAMap,
    #[error("workflow result has no \"answer\" key")]
    MissingAnswerKey,
    #[error("\"answer\" value cannot be coerced to a string: {0}")]
    NonCoercibleValue(String),
}

impl ContractError {
    pub fn kind(&self) -> &'static str {
        match self {
            ContractError::NotAMap => "NotAMap",
            ContractError::MissingAnswerKey => "MissingAnswerKey",
            ContractError::NonCoercibleValue(_) => "NonCoercibleValue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Math,
    Qa,
    Code,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    TokenF1,
    PassAt1,
}

impl Metric {
    /// Label used when rendering a score into the meta-agent prompt.
    pub fn label(self) -> &'static str {
        match self {
            Metric::Accuracy => "Validation accuracy",
            Metric::TokenF1 => "Validation F1 score",
            Metric::PassAt1 => "Validation pass@1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub family: TaskFamily,
    /// Task statement as it appears in the meta-agent prompt.
    pub description_text: String,
    pub metric: Metric,
    pub answer_schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_point: Option<String>,
    pub dataset_ref: PathBuf,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.id.trim().is_empty() {
            return Err(DomainError::InvalidTask("id is empty".into()));
        }
        if self.description_text.trim().is_empty() {
            return Err(DomainError::InvalidTask("description_text is empty".into()));
        }
        let is_code = self.family == TaskFamily::Code;
        let pass_at_1 = self.metric == Metric::PassAt1;
        let has_entry = self.entry_point.as_deref().is_some_and(|e| !e.trim().is_empty());
        if is_code != pass_at_1 || is_code != has_entry {
            return Err(DomainError::InvalidTask(
                "metric pass_at_1, family code and a non-empty entry_point must appear together"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn is_code(&self) -> bool {
        self.family == TaskFamily::Code
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    PrivateVal,
    PublicVal,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::PrivateVal => "private_val",
            Split::PublicVal => "public_val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_tests: Option<Vec<String>>,
    pub split: Split,
}

impl Sample {
    pub fn validate(&self, family: TaskFamily) -> Result<(), DomainError> {
        match family {
            TaskFamily::Code => {
                if self.public_tests.as_ref().is_none_or(Vec::is_empty) {
                    return Err(DomainError::InvalidSample(
                        "code samples need at least one public test".into(),
                    ));
                }
            }
            _ => {
                if self.gold.trim().is_empty() {
                    return Err(DomainError::InvalidSample("gold answer is empty".into()));
                }
            }
        }
        Ok(())
    }

    pub fn public_tests(&self) -> &[String] {
        self.public_tests.as_deref().unwrap_or(&[])
    }

    /// Tests used for pass@1 scoring: the public tests plus `gold` as a
    /// hidden test script when present.
    pub fn scoring_tests(&self) -> Vec<String> {
        let mut tests = self.public_tests().to_vec();
        if !self.gold.trim().is_empty() {
            tests.push(self.gold.clone());
        }
        tests
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramOrigin {
    Seed,
    Generated,
    Corrected,
}

pub const MAX_CORRECTIONS: u8 = 3;

/// An executable workflow: source text declaring `workflow(agent, task[, entry_point])`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawProgram")]
pub struct WorkflowProgram {
    source: String,
    correction_attempts: u8,
    origin: ProgramOrigin,
    #[serde(skip)]
    arity: usize,
}

#[derive(Deserialize)]
struct RawProgram {
    source: String,
    correction_attempts: u8,
    origin: ProgramOrigin,
}

impl TryFrom<RawProgram> for WorkflowProgram {
    type Error = ValidationError;
    fn try_from(raw: RawProgram) -> Result<Self, Self::Error> {
        let mut p = validate_workflow_program(&raw.source)?;
        p = p.with_origin(raw.origin);
        p.set_attempts(raw.correction_attempts)?;
        Ok(p)
    }
}

impl WorkflowProgram {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn correction_attempts(&self) -> u8 {
        self.correction_attempts
    }

    pub fn origin(&self) -> ProgramOrigin {
        self.origin
    }

    /// Number of declared parameters of the entry function (2 or 3).
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn declares_entry_point(&self) -> bool {
        self.arity == 3
    }

    pub fn with_origin(mut self, origin: ProgramOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn corrected(source: &str, attempts: u8) -> Result<Self, ValidationError> {
        let mut p = validate_workflow_program(source)?.with_origin(ProgramOrigin::Corrected);
        p.set_attempts(attempts)?;
        Ok(p)
    }

    fn set_attempts(&mut self, attempts: u8) -> Result<(), ValidationError> {
        if attempts > MAX_CORRECTIONS {
            return Err(ValidationError::TooManyCorrections(attempts));
        }
        self.correction_attempts = attempts;
        Ok(())
    }
}

/// Structural check only: a top-level `def workflow(...)` taking two or three
/// parameters. Nothing is executed.
pub fn validate_workflow_program(source: &str) -> Result<WorkflowProgram, ValidationError> {
    if source.trim().is_empty() {
        return Err(ValidationError::EmptySource);
    }
    let arity = entry_arity(source, "workflow").ok_or_else(|| {
        ValidationError::MissingEntryFunction("no top-level `def workflow(` found".into())
    })?;
    if !(2..=3).contains(&arity) {
        return Err(ValidationError::MissingEntryFunction(format!(
            "`workflow` must take (agent, task) or (agent, task, entry_point), found {arity} parameters"
        )));
    }
    Ok(WorkflowProgram {
        source: source.to_string(),
        correction_attempts: 0,
        origin: ProgramOrigin::Generated,
        arity,
    })
}

/// Counts the parameters of the last top-level `def <name>(...)` in `source`.
pub(crate) fn entry_arity(source: &str, name: &str) -> Option<usize> {
    let needle = format!("def {name}(");
    let mut found = None;
    let mut offset = 0;
    for line in source.split_inclusive('\n') {
        if line.starts_with(&needle) || line.starts_with(&format!("async {needle}")) {
            let start = offset + line.find('(').expect("needle has paren") + 1;
            found = count_params(&source[start..]);
        }
        offset += line.len();
    }
    found
}

fn count_params(after_paren: &str) -> Option<usize> {
    let mut depth = 0i32;
    let mut count = 0usize;
    let mut current_nonempty = false;
    for ch in after_paren.chars() {
        match ch {
            '(' | '[' | '{' => {
                depth += 1;
                current_nonempty = true;
            }
            ')' if depth == 0 => {
                if current_nonempty {
                    count += 1;
                }
                return Some(count);
            }
            ')' | ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                if current_nonempty {
                    count += 1;
                }
                current_nonempty = false;
            }
            c if c.is_whitespace() || c == '\\' => {}
            '/' | '*' if depth == 0 && !current_nonempty => {
                // positional-only / keyword-only markers are not parameters
                current_nonempty = false;
            }
            _ => current_nonempty = true,
        }
    }
    None
}

/// Reads the mandatory "answer" key and coerces scalars to a string.
pub fn validate_answer_dict(result: &Value) -> Result<String, ContractError> {
    let map = result.as_object().ok_or(ContractError::NotAMap)?;
    let answer = map.get("answer").ok_or(ContractError::MissingAnswerKey)?;
    match answer {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(true) => Ok("True".into()),
        Value::Bool(false) => Ok("False".into()),
        Value::Null => Err(ContractError::NonCoercibleValue("null".into())),
        Value::Array(_) => Err(ContractError::NonCoercibleValue("list".into())),
        Value::Object(_) => Err(ContractError::NonCoercibleValue("map".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub analysis: String,
    pub program: WorkflowProgram,
    /// The response text the policy emitted; for corrected actions, the
    /// original response with the corrected program spliced in.
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub input: String,
    pub model_answer: String,
    pub gold_answer: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecStats {
    pub calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub wall_ms: u64,
}

impl ExecStats {
    pub fn absorb(&mut self, other: &ExecStats) {
        self.calls += other.calls;
        self.tokens_in += other.tokens_in;
        self.tokens_out += other.tokens_out;
        self.wall_ms += other.wall_ms;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub score: f64,
    pub case_studies: Vec<CaseStudy>,
    pub failed: bool,
    pub exec_stats: ExecStats,
}

impl Feedback {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(DomainError::ScoreOutOfRange(self.score));
        }
        Ok(())
    }
}

/// A (program, feedback) pair recorded in state history. Construction rejects
/// failed feedback, so history can never hold one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHistoryEntry")]
pub struct HistoryEntry {
    program: WorkflowProgram,
    feedback: Feedback,
}

#[derive(Deserialize)]
struct RawHistoryEntry {
    program: WorkflowProgram,
    feedback: Feedback,
}

impl TryFrom<RawHistoryEntry> for HistoryEntry {
    type Error = DomainError;
    fn try_from(raw: RawHistoryEntry) -> Result<Self, Self::Error> {
        HistoryEntry::new(raw.program, raw.feedback)
    }
}

impl HistoryEntry {
    pub fn new(program: WorkflowProgram, feedback: Feedback) -> Result<Self, DomainError> {
        if feedback.failed {
            return Err(DomainError::FailedFeedback);
        }
        feedback.validate()?;
        Ok(Self { program, feedback })
    }

    pub fn program(&self) -> &WorkflowProgram {
        &self.program
    }

    pub fn feedback(&self) -> &Feedback {
        &self.feedback
    }

    pub fn score(&self) -> f64 {
        self.feedback.score
    }
}

/// The MDP state: instructions, task, the in-window history and its best score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationState {
    pub instructions: String,
    pub task: TaskSpec,
    pub horizon: usize,
    pub(crate) window_history: Vec<HistoryEntry>,
    /// Negative infinity when the history is empty.
    #[serde(with = "neg_inf_as_null")]
    pub(crate) window_best: f64,
}

impl OptimizationState {
    pub fn window_history(&self) -> &[HistoryEntry] {
        &self.window_history
    }

    pub fn window_best(&self) -> f64 {
        self.window_best
    }

    /// Score of the most recent history entry.
    pub fn last_score(&self) -> Option<f64> {
        self.window_history.last().map(HistoryEntry::score)
    }

    pub fn recomputed_best(&self) -> f64 {
        self.window_history
            .iter()
            .map(HistoryEntry::score)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state_render: String,
    pub action_text: String,
    pub reward: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SelectedPair,
    UnselectedTurn1,
    UnselectedTurn2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub task: String,
    /// Iteration of the first step.
    pub iteration: usize,
    /// Candidate index of the first step.
    pub candidate: usize,
    pub provenance: Provenance,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn is_consistent(&self) -> bool {
        let len_ok = matches!(self.steps.len(), 1 | 2);
        let pair = self.provenance == Provenance::SelectedPair;
        len_ok && (self.steps.len() == 2) == pair
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn accepts_two_parameter_workflow() {
        let p = validate_workflow_program("def workflow(agent, task):\n    return {}\n").unwrap();
        assert_eq!(p.arity(), 2);
        assert_eq!(p.correction_attempts(), 0);
    }

    #[test]
    fn accepts_annotated_three_parameter_workflow() {
        let src = "def workflow(agent, task: str, entry_point: str):\n    pass\n";
        let p = validate_workflow_program(src).unwrap();
        assert!(p.declares_entry_point());
    }

    #[test]
    fn multiline_signature_with_nested_annotations() {
        let src = "def workflow(\n    agent,\n    task: Dict[str, int],\n):\n    pass\n";
        assert_eq!(validate_workflow_program(src).unwrap().arity(), 2);
    }

    #[test]
    fn empty_source_rejected() {
        assert_eq!(validate_workflow_program(""), Err(ValidationError::EmptySource));
        assert_eq!(validate_workflow_program("  \n"), Err(ValidationError::EmptySource));
    }

    #[test]
    fn wrong_entry_name_rejected() {
        let err = validate_workflow_program("def solve(agent, task):\n    pass\n").unwrap_err();
        assert!(matches!(err, ValidationError::MissingEntryFunction(_)));
    }

    #[test]
    fn nested_workflow_definition_does_not_count() {
        let src = "def outer():\n    def workflow(agent, task):\n        pass\n";
        assert!(validate_workflow_program(src).is_err());
    }

    #[test]
    fn wrong_arity_rejected() {
        let err = validate_workflow_program("def workflow(agent):\n    pass\n").unwrap_err();
        assert!(matches!(err, ValidationError::MissingEntryFunction(_)));
    }

    #[test]
    fn answer_dict_reads_and_coerces() {
        assert_eq!(
            validate_answer_dict(&json!({"answer": "42", "reasoning": "..."})).unwrap(),
            "42"
        );
        assert_eq!(validate_answer_dict(&json!({"answer": 3.0})).unwrap(), "3.0");
        assert_eq!(validate_answer_dict(&json!({"answer": 7})).unwrap(), "7");
        assert_eq!(validate_answer_dict(&json!({"answer": true})).unwrap(), "True");
    }

    #[test]
    fn answer_dict_contract_errors() {
        assert_eq!(
            validate_answer_dict(&json!({"reasoning": "..."})),
            Err(ContractError::MissingAnswerKey)
        );
        assert!(matches!(
            validate_answer_dict(&json!({"answer": [1, 2]})),
            Err(ContractError::NonCoercibleValue(_))
        ));
        assert!(matches!(
            validate_answer_dict(&json!({"answer": {"a": 1}})),
            Err(ContractError::NonCoercibleValue(_))
        ));
        assert_eq!(validate_answer_dict(&json!("42")), Err(ContractError::NotAMap));
    }

    #[test]
    fn failed_feedback_cannot_enter_history() {
        let p = validate_workflow_program("def workflow(agent, task):\n    pass\n").unwrap();
        let fb = Feedback {
            score: 0.0,
            case_studies: vec![],
            failed: true,
            exec_stats: ExecStats::default(),
        };
        assert_eq!(HistoryEntry::new(p, fb), Err(DomainError::FailedFeedback));
    }

    #[test]
    fn history_entry_deserialization_revalidates() {
        let raw = json!({
            "program": {"source": "def workflow(agent, task):\n  pass\n", "correction_attempts": 0, "origin": "seed"},
            "feedback": {"score": 0.5, "case_studies": [], "failed": true,
                         "exec_stats": {"calls": 0, "tokens_in": 0, "tokens_out": 0, "wall_ms": 0}}
        });
        assert!(serde_json::from_value::<HistoryEntry>(raw).is_err());
    }

    #[test]
    fn program_deserialization_rejects_excess_corrections() {
        let raw = json!({"source": "def workflow(agent, task):\n  pass\n", "correction_attempts": 4, "origin": "corrected"});
        assert!(serde_json::from_value::<WorkflowProgram>(raw).is_err());
    }

    #[test]
    fn task_invariants() {
        let mut t = TaskSpec {
            id: "mbpp".into(),
            family: TaskFamily::Code,
            description_text: "write code".into(),
            metric: Metric::PassAt1,
            answer_schema: "python function".into(),
            entry_point: Some("solution".into()),
            dataset_ref: "d.jsonl".into(),
        };
        assert!(t.validate().is_ok());
        t.entry_point = None;
        assert!(t.validate().is_err());
        t.family = TaskFamily::Math;
        assert!(t.validate().is_err());
        t.metric = Metric::Accuracy;
        assert!(t.validate().is_ok());
        t.description_text = " ".into();
        assert!(t.validate().is_err());
    }

    #[test]
    fn sample_invariants() {
        let s = Sample { input: "q".into(), gold: "".into(), public_tests: None, split: Split::Test };
        assert!(s.validate(TaskFamily::Math).is_err());
        assert!(s.validate(TaskFamily::Code).is_err());
        let c = Sample { public_tests: Some(vec!["assert f(1) == 1".into()]), ..s };
        assert!(c.validate(TaskFamily::Code).is_ok());
    }

    #[test]
    fn trajectory_length_matches_provenance() {
        let step = TrajectoryStep { state_render: "s".into(), action_text: "a".into(), reward: 1.0, score: 0.5 };
        let mut t = Trajectory {
            id: "t".into(),
            task: "x".into(),
            iteration: 1,
            candidate: 0,
            provenance: Provenance::SelectedPair,
            steps: vec![step.clone(), step.clone()],
        };
        assert!(t.is_consistent());
        t.steps.pop();
        assert!(!t.is_consistent());
        t.provenance = Provenance::UnselectedTurn2;
        assert!(t.is_consistent());
    }
}
