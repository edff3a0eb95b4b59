//! Run reports: `report.json` and the per-iteration `curve.csv`.
//!
//! Both are rebuilt from the files of a completed run directory and contain
//! no wall-clock measurements, so a replayed run reproduces them exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Trajectory;
use crate::engine::session::{
    read_artifacts, read_run_log, ARTIFACTS_FILE, EVAL_DIR, HELPER_LOG_FILE, META_LOG_FILE, TRAJECTORIES_FILE,
};
use crate::engine::Mode;
use crate::eval::EvalReport;
use crate::gateway::MetaLogEntry;
use crate::sandbox::HelperCallRecord;
use crate::util::{read_json, read_jsonl, to_json_pretty};

pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0} is not a completed run")]
    IncompleteRun(PathBuf),
    #[error("cannot read or write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub turn: usize,
    pub selected: Option<usize>,
    /// `null` for skipped candidates.
    pub candidate_scores: Vec<Option<f64>>,
    pub rewards: Vec<Option<f64>>,
    pub skipped: usize,
    pub filtered: usize,
    pub best_so_far: Option<f64>,
    pub api_calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub helper_calls: u64,
    pub executor_api_calls: u64,
    pub executor_tokens_in: u64,
    pub executor_tokens_out: u64,
    pub meta_calls: u64,
    pub meta_tokens_in: u64,
    pub meta_tokens_out: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryCounts {
    pub total: usize,
    pub one_turn: usize,
    pub two_turn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub aggregate: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub task: String,
    pub mode: Mode,
    pub iterations_run: usize,
    pub best_score: f64,
    pub best_iteration: Option<usize>,
    pub seed_score: Option<f64>,
    pub global_best_curve: Vec<Option<f64>>,
    pub iterations: Vec<IterationRow>,
    pub totals: Totals,
    pub trajectories: TrajectoryCounts,
    pub test: Option<TestSummary>,
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReportError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(path).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })
}

pub fn build_report(run_dir: &Path) -> Result<Report, ReportError> {
    let incomplete = || ReportError::IncompleteRun(run_dir.to_path_buf());
    if !run_dir.join(ARTIFACTS_FILE).exists() {
        return Err(incomplete());
    }
    let artifacts = read_artifacts(run_dir).map_err(|_| incomplete())?;
    let log = read_run_log(run_dir).map_err(|_| incomplete())?;
    if log.len() != artifacts.iterations_run || artifacts.global_best_curve.len() != log.len() {
        return Err(incomplete());
    }
    let helper_log: Vec<HelperCallRecord> = read_lines(&run_dir.join(HELPER_LOG_FILE))?;
    let meta_log: Vec<MetaLogEntry> = read_lines(&run_dir.join(META_LOG_FILE))?;
    let trajectories: Vec<Trajectory> = read_lines(&run_dir.join(TRAJECTORIES_FILE))?;

    let iterations = log
        .iter()
        .zip(&artifacts.global_best_curve)
        .map(|(it, best)| {
            let prefix = format!("i{:02}-", it.iteration);
            let calls = helper_log.iter().filter(|c| c.invocation_id.starts_with(&prefix));
            let (mut api_calls, mut tokens_in, mut tokens_out) = (0, 0, 0);
            for c in calls {
                api_calls += c.api_calls;
                tokens_in += c.tokens_in;
                tokens_out += c.tokens_out;
            }
            IterationRow {
                iteration: it.iteration,
                turn: it.turn,
                selected: it.selected,
                candidate_scores: it.candidates.iter().map(|c| c.score()).collect(),
                rewards: it.candidates.iter().map(|c| c.reward).collect(),
                skipped: it.candidates.iter().filter(|c| c.skipped()).count(),
                filtered: it.candidates.iter().filter(|c| c.filtered).count(),
                best_so_far: *best,
                api_calls,
                tokens_in,
                tokens_out,
            }
        })
        .collect();

    let mut totals = Totals { helper_calls: helper_log.len() as u64, meta_calls: meta_log.len() as u64, ..Default::default() };
    for c in &helper_log {
        totals.executor_api_calls += c.api_calls;
        totals.executor_tokens_in += c.tokens_in;
        totals.executor_tokens_out += c.tokens_out;
    }
    for m in &meta_log {
        totals.meta_tokens_in += m.tokens_in;
        totals.meta_tokens_out += m.tokens_out;
    }
    let two_turn = trajectories.iter().filter(|t| t.steps.len() == 2).count();
    let test_path = run_dir.join(EVAL_DIR).join("test_report.json");
    let test = if test_path.exists() {
        let r: EvalReport = read_json(&test_path).map_err(|source| ReportError::Io { path: test_path.clone(), source })?;
        Some(TestSummary { aggregate: r.aggregate, samples: r.per_sample.len() })
    } else {
        None
    };

    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        task: artifacts.task,
        mode: artifacts.mode,
        iterations_run: artifacts.iterations_run,
        best_score: artifacts.best_score,
        best_iteration: artifacts.best_iteration,
        seed_score: artifacts.seed_score,
        global_best_curve: artifacts.global_best_curve,
        iterations,
        totals,
        trajectories: TrajectoryCounts { total: trajectories.len(), one_turn: trajectories.len() - two_turn, two_turn },
        test,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns: iteration, best_so_far, candidate_scores (semicolon-joined,
/// `skip` for skipped candidates), api_calls, tokens.
pub fn curve_csv(report: &Report) -> String {
    let mut out = String::from("iteration,best_so_far,candidate_scores,api_calls,tokens\n");
    for row in &report.iterations {
        let scores: Vec<String> = row.candidate_scores.iter().map(|s| s.map_or_else(|| "skip".to_string(), |x| x.to_string())).collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.iteration,
            cell(row.best_so_far),
            scores.join(";"),
            row.api_calls,
            row.tokens_in + row.tokens_out
        ));
    }
    out
}

/// Builds the report and writes `report.json` and `curve.csv` into the run
/// directory.
pub fn write_report(run_dir: &Path) -> Result<Report, ReportError> {
    let report = build_report(run_dir)?;
    let write = |name: &str, text: String| {
        let path = run_dir.join(name);
        std::fs::write(&path, text).map_err(|source| ReportError::Io { path, source })
    };
    write(REPORT_FILE, to_json_pretty(&report))?;
    write(CURVE_FILE, curve_csv(&report))?;
    Ok(report)
}
