//! Wiring from a config file to a finished run directory, and replay.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CliConfig, ConfigError};
use crate::domain::{validate_workflow_program, Feedback, WorkflowProgram};
use crate::eval::{load_dataset, tagged_rows, Dataset, EvalError, EvalReport, Evaluator};
use crate::gateway::{
    backend_from_spec, BackendError, BackendRole, ChatBackend, MetaLogEntry, RecordingBackend, ReplayBackend, TemplateError,
    Templates, DEFAULT_HELPER_DOCS,
};
use crate::report::{write_report, ReportError};
use crate::rlao::{assemble_trajectories, IterationRecord};
use crate::sandbox::{HelperCallRecord, HelperService, Limits, LiveHelpers, NestedSandbox, ReplayHelpers, SandboxHost};
use crate::util::{read_json, read_jsonl, write_json, write_jsonl};

use super::run::{run_optimization, EngineError, Mode, RunArtifacts, Toolkit};

pub const CONFIG_FILE: &str = "config.json";
pub const SPLITS_FILE: &str = "splits.jsonl";
pub const SEED_FILE: &str = "seed_workflow.src";
pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const HELPER_LOG_FILE: &str = "helper_log.jsonl";
pub const META_LOG_FILE: &str = "meta_log.jsonl";
pub const ARTIFACTS_FILE: &str = "artifacts.json";
pub const BEST_FILE: &str = "best_workflow.src";
pub const EVAL_DIR: &str = "eval";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Dataset(#[from] EvalError),
    #[error("invalid seed workflow: {0}")]
    SeedWorkflow(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("run directory {0} already holds a run")]
    RunDirExists(PathBuf),
    #[error("{0} is not a completed run")]
    NotARun(PathBuf),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl SessionError {
    /// Whether the failure is a configuration problem detected before any
    /// backend was contacted.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            SessionError::Config(_)
                | SessionError::Template(_)
                | SessionError::Dataset(_)
                | SessionError::SeedWorkflow(_)
                | SessionError::RunDirExists(_)
        ) || matches!(self, SessionError::Backend(BackendError::InvalidSpec(_)))
    }

    pub fn is_backend(&self) -> bool {
        matches!(self, SessionError::Backend(_) | SessionError::Engine(EngineError::Backend(_)))
    }
}

pub(crate) fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> SessionError + '_ {
    move |source| SessionError::Io { path: path.to_path_buf(), source }
}

/// Everything loaded from a config before any backend is contacted.
pub struct Session {
    pub config: CliConfig,
    pub templates: Templates,
    pub helper_docs: String,
    pub dataset: Dataset,
    pub seed_program: Option<WorkflowProgram>,
    pub host: SandboxHost,
    pub nested: NestedSandbox,
}

impl Session {
    /// Validates the config, loads templates, the dataset split and the seed
    /// workflow.
    pub fn prepare(config: CliConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let dataset = load_dataset(&config.task.dataset_ref, config.task.family, config.run.private_ratio, config.run.seed)?;
        Self::assemble(config, dataset, None)
    }

    fn assemble(config: CliConfig, dataset: Dataset, seed_source: Option<String>) -> Result<Self, SessionError> {
        let templates = match &config.templates_dir {
            Some(dir) => Templates::load_dir(dir)?,
            None => Templates::default(),
        };
        let helper_docs = match &config.helper_docs {
            Some(p) => std::fs::read_to_string(p).map_err(io_at(p))?,
            None => DEFAULT_HELPER_DOCS.to_string(),
        };
        let seed_source = match (seed_source, &config.seed_workflow) {
            (Some(s), _) => Some(s),
            (None, Some(p)) => Some(std::fs::read_to_string(p).map_err(io_at(p))?),
            (None, None) => None,
        };
        let seed_program = seed_source
            .map(|s| validate_workflow_program(&s).map_err(|e| SessionError::SeedWorkflow(e.to_string())))
            .transpose()?;
        let run = &config.run;
        let host = SandboxHost {
            command: config.runtime.command.clone(),
            isolate_network: config.runtime.isolate_network,
            seed: run.seed,
            limits: Limits {
                workflow_timeout: Duration::from_millis(run.workflow_timeout_ms),
                max_helper_calls: run.max_helper_calls,
            },
        };
        let mut nested = NestedSandbox::new(config.runtime.python.clone(), Duration::from_millis(run.exec_code_timeout_ms));
        nested.isolate_network = config.runtime.isolate_network;
        Ok(Self { config, templates, helper_docs, dataset, seed_program, host, nested })
    }

    /// Reloads the session a run was made with, from its stored config and
    /// split assignment.
    pub fn from_run_dir(dir: &Path) -> Result<Self, SessionError> {
        let config = CliConfig::load(&dir.join(CONFIG_FILE)).map_err(|_| SessionError::NotARun(dir.to_path_buf()))?;
        let splits = dir.join(SPLITS_FILE);
        if !splits.exists() {
            return Err(SessionError::NotARun(dir.to_path_buf()));
        }
        let dataset = load_dataset(&splits, config.task.family, config.run.private_ratio, config.run.seed)?;
        let seed_path = dir.join(SEED_FILE);
        let seed = if seed_path.exists() { Some(std::fs::read_to_string(&seed_path).map_err(io_at(&seed_path))?) } else { None };
        Self::assemble(config, dataset, seed)
    }

    pub fn default_run_id(&self, mode: Mode) -> String {
        let mode = match mode {
            Mode::Infer => "optimize",
            Mode::Collect => "collect",
        };
        format!("{}-{mode}-s{}", self.config.task.id, self.config.run.seed)
    }

    pub fn run_dir(&self, mode: Mode) -> PathBuf {
        let id = self.config.run_id.clone().unwrap_or_else(|| self.default_run_id(mode));
        self.config.runs_dir.join(id)
    }

    fn toolkit<'a>(&'a self, meta: &'a dyn ChatBackend, helpers: &'a dyn HelperService) -> Toolkit<'a> {
        Toolkit {
            meta,
            helpers,
            host: &self.host,
            nested: &self.nested,
            templates: &self.templates,
            helper_docs: &self.helper_docs,
        }
    }

    /// Runs the loop against the configured backends and writes the run
    /// directory.
    pub fn run(&self, mode: Mode, run_dir: &Path, force: bool) -> Result<RunArtifacts, SessionError> {
        if run_dir.join(ARTIFACTS_FILE).exists() && !force {
            return Err(SessionError::RunDirExists(run_dir.to_path_buf()));
        }
        let meta = RecordingBackend::new(backend_from_spec(&self.config.meta_backend, BackendRole::Meta)?);
        let executor = backend_from_spec(&self.config.executor_backend, BackendRole::Executor)?;
        let helpers = LiveHelpers::new(executor, self.nested.clone());
        self.run_with(mode, run_dir, &meta, &helpers)
    }

    /// Runs the loop with the given meta backend (recorded into the run's
    /// meta log) and helper service.
    pub fn run_with(
        &self,
        mode: Mode,
        run_dir: &Path,
        meta: &RecordingBackend,
        helpers: &dyn HelperService,
    ) -> Result<RunArtifacts, SessionError> {
        let kit = self.toolkit(meta, helpers);
        let result = run_optimization(&self.config.run, &self.config.task, &self.dataset, self.seed_program.as_ref(), mode, &kit);
        let artifacts = result?;
        self.persist(run_dir, &artifacts, &meta.entries())?;
        write_report(run_dir)?;
        Ok(artifacts)
    }

    fn persist(&self, dir: &Path, art: &RunArtifacts, meta_log: &[MetaLogEntry]) -> Result<(), SessionError> {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
        let iterations_dir = dir.join("iterations");
        if iterations_dir.exists() {
            std::fs::remove_dir_all(&iterations_dir).map_err(io_at(&iterations_dir))?;
        }
        let p = dir.join(CONFIG_FILE);
        write_json(&p, &self.config).map_err(io_at(&p))?;
        let p = dir.join(SPLITS_FILE);
        write_jsonl(&p, &tagged_rows(&self.dataset)).map_err(io_at(&p))?;
        if let Some(seed) = &self.seed_program {
            let p = dir.join(SEED_FILE);
            std::fs::write(&p, seed.source()).map_err(io_at(&p))?;
        }
        for it in &art.iterations {
            for c in &it.candidates {
                let cdir = iterations_dir.join(it.iteration.to_string()).join(format!("candidate_{}", c.index));
                std::fs::create_dir_all(&cdir).map_err(io_at(&cdir))?;
                let p = cdir.join("action.txt");
                std::fs::write(&p, &c.raw_response).map_err(io_at(&p))?;
                if let Some(a) = &c.action {
                    let p = cdir.join("workflow.src");
                    std::fs::write(&p, a.program.source()).map_err(io_at(&p))?;
                }
                let p = cdir.join("feedback.json");
                let file = CandidateFile {
                    skipped: c.skipped(),
                    correction_attempts: c.correction_attempts,
                    skip_reason: c.skip_reason.clone(),
                    reward: c.reward,
                    selected: c.selected,
                    filtered: c.filtered,
                    feedback: c.feedback.clone(),
                };
                write_json(&p, &file).map_err(io_at(&p))?;
            }
        }
        let p = dir.join(RUN_LOG_FILE);
        write_jsonl(&p, &art.iterations).map_err(io_at(&p))?;
        let p = dir.join(TRAJECTORIES_FILE);
        write_jsonl(&p, &assemble_trajectories(&self.config.task.id, &art.iterations)).map_err(io_at(&p))?;
        let p = dir.join(HELPER_LOG_FILE);
        write_jsonl(&p, &art.helper_log).map_err(io_at(&p))?;
        let p = dir.join(META_LOG_FILE);
        write_jsonl(&p, meta_log).map_err(io_at(&p))?;
        let p = dir.join(BEST_FILE);
        std::fs::write(&p, art.best_program.source()).map_err(io_at(&p))?;
        let p = dir.join(ARTIFACTS_FILE);
        write_json(&p, &ArtifactsFile::from_artifacts(&self.config.task.id, art)).map_err(io_at(&p))?;
        Ok(())
    }

    /// Scores the run's best workflow (or `program`) on the test split with
    /// the configured executor. Results land in `<run>/eval/`.
    pub fn evaluate_test(&self, run_dir: &Path, program: Option<WorkflowProgram>) -> Result<EvalReport, SessionError> {
        let program = match program {
            Some(p) => p,
            None => {
                let p = run_dir.join(BEST_FILE);
                let src = std::fs::read_to_string(&p).map_err(|_| SessionError::NotARun(run_dir.to_path_buf()))?;
                validate_workflow_program(&src).map_err(|e| SessionError::SeedWorkflow(e.to_string()))?
            }
        };
        let executor = backend_from_spec(&self.config.executor_backend, BackendRole::Executor)?;
        let helpers = LiveHelpers::new(executor, self.nested.clone());
        let evaluator = Evaluator {
            host: &self.host,
            helpers: &helpers,
            task: &self.config.task,
            nested: &self.nested,
            workers: self.config.run.workers,
            case_study_k: self.config.run.case_study_k,
            seed: self.config.run.seed,
        };
        let (report, results) = evaluator.evaluate_on_test(&program, &self.dataset.test);
        let dir = run_dir.join(EVAL_DIR);
        let p = dir.join("test_report.json");
        write_json(&p, &report).map_err(io_at(&p))?;
        let p = dir.join("test_results.csv");
        std::fs::write(&p, report.to_csv()?).map_err(io_at(&p))?;
        let calls: Vec<HelperCallRecord> = results.into_iter().flat_map(|r| r.helper_calls).collect();
        let p = dir.join(HELPER_LOG_FILE);
        write_jsonl(&p, &calls).map_err(io_at(&p))?;
        Ok(report)
    }
}

/// `feedback.json` of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFile {
    pub skipped: bool,
    pub correction_attempts: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
    pub reward: Option<f64>,
    pub selected: bool,
    pub filtered: bool,
    pub feedback: Option<Feedback>,
}

/// Summary written once a run completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactsFile {
    pub task: String,
    pub mode: Mode,
    pub iterations_run: usize,
    pub best_score: f64,
    pub best_iteration: Option<usize>,
    pub seed_score: Option<f64>,
    /// `null` until a score exists.
    pub global_best_curve: Vec<Option<f64>>,
    pub stopped_early: bool,
}

impl ArtifactsFile {
    pub fn from_artifacts(task: &str, art: &RunArtifacts) -> Self {
        Self {
            task: task.to_string(),
            mode: art.mode,
            iterations_run: art.iterations.len(),
            best_score: art.best_score,
            best_iteration: art.best_iteration,
            seed_score: art.seed_feedback.as_ref().filter(|f| !f.failed).map(|f| f.score),
            global_best_curve: art.global_best_curve.iter().map(|v| v.is_finite().then_some(*v)).collect(),
            stopped_early: art.stopped_early,
        }
    }
}

pub fn read_artifacts(run_dir: &Path) -> Result<ArtifactsFile, SessionError> {
    read_json(&run_dir.join(ARTIFACTS_FILE)).map_err(|_| SessionError::NotARun(run_dir.to_path_buf()))
}

pub fn read_run_log(run_dir: &Path) -> Result<Vec<IterationRecord>, SessionError> {
    let p = run_dir.join(RUN_LOG_FILE);
    read_jsonl(&p).map_err(io_at(&p))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub replay_dir: PathBuf,
    /// Whether the replayed report.json equals the original byte for byte.
    pub identical: bool,
    /// Requests the recorded logs could not serve.
    pub divergences: Vec<String>,
}

/// Re-executes a run from its recorded meta and helper logs, with no live
/// backend, into `out_dir`, and compares the resulting report.
pub fn replay_run(run_dir: &Path, out_dir: &Path) -> Result<ReplayOutcome, SessionError> {
    let artifacts = read_artifacts(run_dir)?;
    let session = Session::from_run_dir(run_dir)?;
    let p = run_dir.join(META_LOG_FILE);
    let meta_log: Vec<MetaLogEntry> = read_jsonl(&p).map_err(io_at(&p))?;
    let p = run_dir.join(HELPER_LOG_FILE);
    let helper_log: Vec<HelperCallRecord> = read_jsonl(&p).map_err(io_at(&p))?;
    let meta = RecordingBackend::new(Arc::new(ReplayBackend::new(meta_log)));
    let helpers = ReplayHelpers::new(helper_log);
    let kit = session.toolkit(&meta, &helpers);
    let art = run_optimization(&session.config.run, &session.config.task, &session.dataset, session.seed_program.as_ref(), artifacts.mode, &kit)?;
    session.persist(out_dir, &art, &meta.entries())?;
    let original_eval = run_dir.join(EVAL_DIR).join("test_report.json");
    if original_eval.exists() {
        let target = out_dir.join(EVAL_DIR).join("test_report.json");
        std::fs::create_dir_all(out_dir.join(EVAL_DIR)).map_err(io_at(out_dir))?;
        std::fs::copy(&original_eval, &target).map_err(io_at(&target))?;
    }
    write_report(out_dir)?;
    let read = |d: &Path| {
        let p = d.join(crate::report::REPORT_FILE);
        std::fs::read(&p).map_err(|source| SessionError::Io { path: p, source })
    };
    let identical = read(run_dir)? == read(out_dir)?;
    Ok(ReplayOutcome { replay_dir: out_dir.to_path_buf(), identical, divergences: helpers.divergences() })
}
