mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use common::*;
use w4s::report::Report;
use w4s::sandbox::HelperCallRecord;

fn w4s(args: &[&str], cwd: &Path) -> Output {
    Command::new(cli_bin()).args(args).current_dir(cwd).output().expect("cli runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn show(out: &Output) -> String {
    format!("stdout:\n{}\nstderr:\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// A fixture whose workflows call the executor once per sample.
fn chatty_fixture(iterations: usize) -> Fixture {
    let sizes = Sizes { private: 4, public: 2, test: 2 };
    let plan: Vec<Vec<Cand>> = (0..iterations).map(|i| vec![Cand::Score(1 + i % 4)]).collect();
    let fx = fixture(&plan, run_config(iterations, 1), sizes);
    let steps: Vec<Value> = meta_steps(&plan, sizes)
        .into_iter()
        .map(|s| {
            let text = s["responses"][0].as_str().unwrap().replace(
                "    #@ default",
                "    #@ helper call_llm {\"messages\": [{\"role\": \"user\", \"content\": \"Solve {task}\"}]}\n    #@ default",
            );
            json!({"responses": [text]})
        })
        .collect();
    let body = json!({"steps": steps, "executor": {"rules": [{"contains": "Solve", "responses": ["thinking about it"]}]}});
    std::fs::write(fx.path().join("scenario.json"), body.to_string()).unwrap();
    fx.write_config();
    fx
}

#[test]
fn optimize_replay_report_and_eval() {
    let fx = chatty_fixture(3);
    let cfg = fx.config_path();
    let cfg = cfg.to_str().unwrap();
    let out = w4s(&["optimize", "--config", cfg], fx.path());
    assert_eq!(code(&out), 0, "{}", show(&out));
    let dir = fx.path().join("runs/run");
    for f in ["config.json", "run_log.jsonl", "helper_log.jsonl", "meta_log.jsonl", "report.json", "curve.csv", "best_workflow.src"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }

    let report: Report = serde_json::from_slice(&read(&dir.join("report.json"))).unwrap();
    let log: Vec<HelperCallRecord> = jsonl(&dir.join("helper_log.jsonl"));
    assert!(!log.is_empty());
    assert_eq!(report.totals.executor_tokens_in, log.iter().map(|r| r.tokens_in).sum::<u64>());
    assert_eq!(report.totals.executor_tokens_out, log.iter().map(|r| r.tokens_out).sum::<u64>());
    assert_eq!(report.totals.executor_api_calls, log.iter().map(|r| r.api_calls).sum::<u64>());
    assert_eq!(report.totals.meta_calls, 3);
    let per_iteration: u64 = report.iterations.iter().map(|r| r.tokens_in).sum();
    let seedless: u64 = log.iter().filter(|r| r.invocation_id.starts_with('i')).map(|r| r.tokens_in).sum();
    assert_eq!(per_iteration, seedless);
    let csv = String::from_utf8(read(&dir.join("curve.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(csv.starts_with("iteration,best_so_far,candidate_scores,api_calls,tokens\n"));

    // An existing run directory is not overwritten without --force.
    let again = w4s(&["optimize", "--config", cfg], fx.path());
    assert_ne!(code(&again), 0);
    assert_eq!(code(&w4s(&["optimize", "--config", cfg, "--force"], fx.path())), 0);

    let report_bytes = read(&dir.join("report.json"));
    let out = w4s(&["report", "--run", "run", "--runs-dir", "runs"], fx.path());
    assert_eq!(code(&out), 0, "{}", show(&out));
    assert_eq!(read(&dir.join("report.json")), report_bytes);

    let out = w4s(&["replay", "--run", dir.to_str().unwrap()], fx.path());
    assert_eq!(code(&out), 0, "{}", show(&out));
    assert_eq!(read(&dir.join("replay/report.json")), report_bytes);

    let out = w4s(&["eval", "--run", dir.to_str().unwrap()], fx.path());
    assert_eq!(code(&out), 0, "{}", show(&out));
    let test: Value = serde_json::from_slice(&read(&dir.join("eval/test_report.json"))).unwrap();
    assert_eq!(test["aggregate"], 1.0);
    let report: Report = serde_json::from_slice(&read(&dir.join("report.json"))).unwrap();
    assert_eq!(report.test.map(|t| t.aggregate), Some(1.0));
}

#[test]
fn collect_export_and_train_toy() {
    let sizes = Sizes { private: 5, public: 1, test: 1 };
    let plan = clean_collect_plan(4, 3, sizes);
    let fx = fixture(&plan, run_config(4, 3), sizes);
    fx.write_config();
    let out = w4s(&["collect", "--config", fx.config_path().to_str().unwrap()], fx.path());
    assert_eq!(code(&out), 0, "{}", show(&out));

    let out = w4s(&["export-rlao", "--run", "run", "--runs-dir", "runs"], fx.path());
    assert_eq!(code(&out), 0, "{}", show(&out));
    let dataset = fx.path().join("runs/run/rlao_dataset.jsonl");
    let lines: Vec<Value> = jsonl(&dataset);
    let header = &lines[0]["header"];
    assert_eq!(header["tau"], 0.4);
    // 4 iterations of 3 clean candidates: 2 singles each plus 2 pairs.
    assert_eq!(header["counts"]["records"], 2 * 4 + 2 * 2);
    assert_eq!(lines.len(), 1 + 12);
    let config_hash = w4s::util::sha256_hex(read(&fx.path().join("runs/run/config.json")));
    assert_eq!(header["config_hash"], config_hash.as_str());

    let out = w4s(&["train-toy", "--dataset", dataset.to_str().unwrap(), "--epochs", "20"], fx.path());
    assert_eq!(code(&out), 0, "{}", show(&out));
    let curve = String::from_utf8(read(&fx.path().join("runs/run/toy_loss.csv"))).unwrap();
    assert!(curve.starts_with("epoch,loss\n"));
    assert_eq!(curve.lines().count(), 21);
}

#[test]
fn config_errors_exit_2() {
    let fx = fixture(&[vec![Cand::Score(1)]], run_config(1, 1), Sizes::default());
    let mut config = fx.config.clone();
    config.task.dataset_ref = fx.path().join("missing.jsonl");
    let path = fx.path().join("bad.json");
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = w4s(&["optimize", "--config", path.to_str().unwrap()], fx.path());
    assert_eq!(code(&out), 2, "{}", show(&out));
    assert!(!fx.path().join("runs/run").exists());

    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(code(&w4s(&["optimize", "--config", path.to_str().unwrap()], fx.path())), 2);
    assert_eq!(code(&w4s(&["optimize", "--config", "/nonexistent/config.json"], fx.path())), 2);
    assert_eq!(code(&w4s(&["report", "--run", "nothing-here"], fx.path())), 2);
}

#[test]
fn split_writes_tagged_rows() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("raw.jsonl");
    let rows: Vec<String> = (0..10)
        .map(|i| json!({"input": format!("q{i}"), "gold": "a", "split": if i < 8 { "val" } else { "test" }}).to_string())
        .collect();
    std::fs::write(&src, rows.join("\n")).unwrap();
    let out_path = dir.path().join("tagged.jsonl");
    let out = w4s(&["split", "--dataset", src.to_str().unwrap(), "--out", out_path.to_str().unwrap(), "--seed", "5"], dir.path());
    assert_eq!(code(&out), 0, "{}", show(&out));
    let tagged: Vec<Value> = jsonl(&out_path);
    let count = |s: &str| tagged.iter().filter(|r| r["split"] == s).count();
    assert_eq!((count("private_val"), count("public_val"), count("test")), (4, 4, 2));
    let again = dir.path().join("again.jsonl");
    w4s(&["split", "--dataset", src.to_str().unwrap(), "--out", again.to_str().unwrap(), "--seed", "5"], dir.path());
    assert_eq!(read(&out_path), read(&again));
}
