//! Fixtures shared by the integration tests: tagged datasets, scripted
//! workflows with a chosen private-split score, and mock scenarios.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use tempfile::TempDir;

use w4s::config::{CliConfig, RunConfig, RuntimeSpec};
use w4s::domain::{Metric, TaskFamily, TaskSpec};
use w4s::gateway::BackendSpec;

pub fn runtime_bin() -> String {
    env!("CARGO_BIN_EXE_w4s-scripted-runtime").to_string()
}

pub fn cli_bin() -> String {
    env!("CARGO_BIN_EXE_w4s").to_string()
}

#[derive(Debug, Clone, Copy)]
pub struct Sizes {
    pub private: usize,
    pub public: usize,
    pub test: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self { private: 10, public: 2, test: 3 }
    }
}

pub fn gold(input: &str) -> String {
    format!("gold-{input}")
}

pub fn dataset_rows(sizes: Sizes) -> Vec<Value> {
    let mut rows = Vec::new();
    for (prefix, split, n) in [("p", "private_val", sizes.private), ("u", "public_val", sizes.public), ("t", "test", sizes.test)] {
        for i in 0..n {
            let input = format!("{prefix}{i}");
            rows.push(json!({"input": input, "gold": gold(&input), "split": split}));
        }
    }
    rows
}

/// A workflow answering the first `correct` private inputs (and every test
/// input) correctly and everything else wrongly.
pub fn scored_program(correct: usize, tag: &str, sizes: Sizes) -> String {
    let mut table = serde_json::Map::new();
    for i in 0..correct.min(sizes.private) {
        let input = format!("p{i}");
        table.insert(input.clone(), Value::String(gold(&input)));
    }
    for i in 0..sizes.test {
        let input = format!("t{i}");
        table.insert(input.clone(), Value::String(gold(&input)));
    }
    format!(
        "def workflow(agent, task):\n    # {tag}\n    #@ default wrong-{tag}\n    #@ answers {}\n    return {{}}\n",
        Value::Object(table)
    )
}

pub fn raising_program(tag: &str) -> String {
    format!("def workflow(agent, task):\n    # {tag}\n    #@ raise NameError name 'undefined_{tag}' is not defined\n    return {{}}\n")
}

pub fn respond(program: &str, tag: &str) -> String {
    format!("Analysis for {tag}: adjust the prompt chain.\n\n```python\n{program}```\n")
}

/// How one scripted candidate behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cand {
    /// Runs first time; answers `n` private samples correctly.
    Score(usize),
    /// Fails the probe until correction `attempt` (1..=3), then scores `n`.
    FixedAt(u8, usize),
    /// Fails the probe and all three corrections.
    NeverFixed,
    /// No code block at all, and no correction ever yields one.
    Unparseable,
}

/// Meta-agent steps in call order for one iteration per entry.
pub fn meta_steps(iterations: &[Vec<Cand>], sizes: Sizes) -> Vec<Value> {
    let mut steps = Vec::new();
    for (i, cands) in iterations.iter().enumerate() {
        let it = i + 1;
        let first: Vec<String> = cands
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let tag = format!("i{it}c{k}");
                match *c {
                    Cand::Score(n) => respond(&scored_program(n, &tag, sizes), &tag),
                    Cand::FixedAt(..) | Cand::NeverFixed => respond(&raising_program(&tag), &tag),
                    Cand::Unparseable => format!("I would rather describe it in prose ({tag})."),
                }
            })
            .collect();
        steps.push(json!({"responses": first}));
        for (k, c) in cands.iter().enumerate() {
            let tag = |a: u8| format!("i{it}c{k}a{a}");
            match *c {
                Cand::Score(_) => {}
                Cand::FixedAt(at, n) => {
                    for a in 1..at {
                        steps.push(json!({"responses": [respond(&raising_program(&tag(a)), &tag(a))]}));
                    }
                    steps.push(json!({"responses": [respond(&scored_program(n, &tag(at), sizes), &tag(at))]}));
                }
                Cand::NeverFixed => {
                    for a in 1..=3 {
                        steps.push(json!({"responses": [respond(&raising_program(&tag(a)), &tag(a))]}));
                    }
                }
                Cand::Unparseable => {
                    for a in 1..=3 {
                        steps.push(json!({"responses": [format!("Still prose ({}).", tag(a))]}));
                    }
                }
            }
        }
    }
    steps
}

pub struct Fixture {
    pub dir: TempDir,
    pub config: CliConfig,
    pub sizes: Sizes,
}

impl Fixture {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.path().join("config.json")
    }

    pub fn write_config(&self) {
        std::fs::write(self.config_path(), serde_json::to_string_pretty(&self.config).unwrap()).unwrap();
    }
}

pub fn task(dataset: PathBuf) -> TaskSpec {
    TaskSpec {
        id: "toyqa".into(),
        family: TaskFamily::Qa,
        description_text: "Answer each question with its exact gold label.".into(),
        metric: Metric::Accuracy,
        answer_schema: "a short label".into(),
        entry_point: None,
        dataset_ref: dataset,
    }
}

/// Writes a dataset and scenario into a temp dir and returns a config that
/// runs against them with the scripted runtime.
pub fn fixture(iterations: &[Vec<Cand>], run: RunConfig, sizes: Sizes) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("dataset.jsonl");
    let lines: Vec<String> = dataset_rows(sizes).iter().map(|r| r.to_string()).collect();
    std::fs::write(&dataset, lines.join("\n") + "\n").unwrap();
    let scenario = dir.path().join("scenario.json");
    let body = json!({"steps": meta_steps(iterations, sizes), "executor": {"default": "unused"}});
    std::fs::write(&scenario, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    let config = CliConfig {
        run,
        task: task(dataset),
        templates_dir: None,
        helper_docs: None,
        meta_backend: BackendSpec::Mock { scenario_path: scenario.clone() },
        executor_backend: BackendSpec::Mock { scenario_path: scenario },
        runtime: RuntimeSpec { command: vec![runtime_bin()], python: "python3".into(), isolate_network: true },
        runs_dir: dir.path().join("runs"),
        run_id: Some("run".into()),
        seed_workflow: None,
    };
    Fixture { dir, config, sizes }
}

pub fn run_config(iterations: usize, m: usize) -> RunConfig {
    RunConfig { iterations, m, workers: 4, seed: 7, ..RunConfig::default() }
}

/// Clean collect run: every candidate runs first time with a distinct score.
pub fn clean_collect_plan(iterations: usize, m: usize, sizes: Sizes) -> Vec<Vec<Cand>> {
    (0..iterations)
        .map(|i| (0..m).map(|k| Cand::Score(1 + (i * 3 + k * 7) % sizes.private)).collect())
        .collect()
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
