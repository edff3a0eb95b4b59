//! Run hyperparameters and the operator-facing configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::TaskSpec;
use crate::gateway::BackendSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Candidates sampled per iteration in collect mode.
    pub m: usize,
    /// Reward temperature for exp(r / tau) weights.
    pub tau: f64,
    pub horizon: usize,
    pub iterations: usize,
    pub meta_temperature_infer: f64,
    pub meta_temperature_collect: f64,
    pub filter_threshold: f64,
    pub case_study_k: usize,
    pub workflow_timeout_ms: u64,
    pub exec_code_timeout_ms: u64,
    pub max_helper_calls: usize,
    pub seed: u64,
    /// Fraction of validation samples assigned to the private split.
    pub private_ratio: f64,
    pub workers: usize,
    pub case_input_budget: usize,
    pub case_answer_budget: usize,
    /// Stop after this many iterations without a new global best. Disabled by default.
    pub early_stop_patience: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: 5,
            tau: 0.4,
            horizon: 2,
            iterations: 10,
            meta_temperature_infer: 0.5,
            meta_temperature_collect: 0.8,
            filter_threshold: 0.05,
            case_study_k: 3,
            workflow_timeout_ms: 120_000,
            exec_code_timeout_ms: 10_000,
            max_helper_calls: 64,
            seed: 0,
            private_ratio: 0.5,
            workers: 4,
            case_input_budget: 1500,
            case_answer_budget: 500,
            early_stop_patience: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.m == 0 {
            return bad("m must be >= 1");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if self.horizon != 2 {
            return bad("horizon is fixed at 2");
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        for (name, t) in [
            ("meta_temperature_infer", self.meta_temperature_infer),
            ("meta_temperature_collect", self.meta_temperature_collect),
        ] {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.filter_threshold) {
            return bad("filter_threshold must be in [0, 1]");
        }
        if self.case_study_k == 0 {
            return bad("case_study_k must be >= 1");
        }
        if self.workflow_timeout_ms == 0 || self.exec_code_timeout_ms == 0 {
            return bad("timeouts must be positive");
        }
        if self.max_helper_calls == 0 || self.workers == 0 {
            return bad("max_helper_calls and workers must be positive");
        }
        if !(self.private_ratio > 0.0 && self.private_ratio < 1.0) {
            return bad("private_ratio must be in (0, 1)");
        }
        if self.case_input_budget == 0 || self.case_answer_budget == 0 {
            return bad("case study budgets must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeSpec {
    /// Argv of the sandbox runtime; `--scratch <dir> --seed <n>` is appended.
    pub command: Vec<String>,
    #[serde(default = "default_python")]
    pub python: String,
    #[serde(default = "default_true")]
    pub isolate_network: bool,
}

fn default_python() -> String {
    "python3".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub run: RunConfig,
    pub task: TaskSpec,
    /// Directory holding `system.txt`, `main.txt` and `correction.txt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub helper_docs: Option<PathBuf>,
    pub meta_backend: BackendSpec,
    pub executor_backend: BackendSpec,
    pub runtime: RuntimeSpec,
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_workflow: Option<PathBuf>,
}

fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl CliConfig {
    /// Loads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: CliConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.task.dataset_ref);
        if let Some(p) = self.templates_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.helper_docs.as_mut() {
            fix(p);
        }
        if let Some(p) = self.seed_workflow.as_mut() {
            fix(p);
        }
        fix(&mut self.runs_dir);
        for spec in [&mut self.meta_backend, &mut self.executor_backend] {
            if let BackendSpec::Mock { scenario_path } = spec {
                fix(scenario_path);
            }
        }
        if let Some(first) = self.runtime.command.first_mut() {
            let candidate = base.join(&*first);
            if first.contains('/') && Path::new(first.as_str()).is_relative() {
                *first = candidate.to_string_lossy().into_owned();
            }
        }
    }

    /// Checks values and that every referenced path exists. Runs before any
    /// backend is contacted.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run.validate()?;
        self.task
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let must_exist = |p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingPath(p.to_path_buf()))
            }
        };
        must_exist(&self.task.dataset_ref)?;
        if let Some(dir) = &self.templates_dir {
            for name in ["system.txt", "main.txt", "correction.txt"] {
                must_exist(&dir.join(name))?;
            }
        }
        if let Some(p) = &self.helper_docs {
            must_exist(p)?;
        }
        if let Some(p) = &self.seed_workflow {
            must_exist(p)?;
        }
        for spec in [&self.meta_backend, &self.executor_backend] {
            spec.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if let BackendSpec::Mock { scenario_path } = spec {
                must_exist(scenario_path)?;
            }
        }
        if self.runtime.command.is_empty() {
            return Err(ConfigError::Invalid("runtime.command is empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_encode_reference_settings() {
        let c = RunConfig::default();
        assert_eq!(c.iterations, 10);
        assert_eq!(c.m, 5);
        assert_eq!(c.tau, 0.4);
        assert_eq!(c.horizon, 2);
        assert_eq!(c.meta_temperature_infer, 0.5);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = RunConfig { tau: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        c = RunConfig { horizon: 3, ..Default::default() };
        assert!(c.validate().is_err());
        c = RunConfig { m: 0, ..Default::default() };
        assert!(c.validate().is_err());
        c = RunConfig { filter_threshold: 1.5, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
