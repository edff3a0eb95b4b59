//! Datasets, metrics and feedback assembly.

mod dataset;
mod evaluate;
pub mod metrics;

use std::path::PathBuf;

use thiserror::Error;

pub use dataset::{load_dataset, read_rows, split_validation, tagged_rows, Dataset, DatasetRow, RowSplit};
pub use evaluate::{par_map, score_sample, EvalReport, Evaluation, Evaluator, SampleScore};
pub use metrics::{accuracy, normalize_answer, pass_at_1, token_f1};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least 2 validation samples, found {0}")]
    TooFewSamples(usize),
    #[error("dataset not found: {}", .0.display())]
    DatasetMissing(PathBuf),
    #[error("bad dataset: {0}")]
    Dataset(String),
    #[error("pass@1 requires a code task")]
    NotACodeTask,
    #[error("nested sandbox: {0}")]
    Sandbox(String),
}
