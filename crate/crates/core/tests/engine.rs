mod common;

use common::*;
use w4s::domain::validate_workflow_program;
use w4s::engine::session::{read_run_log, ARTIFACTS_FILE, TRAJECTORIES_FILE};
use w4s::engine::{Mode, Session, SessionError};
use w4s::engine::EngineError;
use w4s::report::REPORT_FILE;

fn run(fx: &Fixture, mode: Mode) -> Result<w4s::engine::RunArtifacts, SessionError> {
    let session = Session::prepare(fx.config.clone())?;
    let dir = session.run_dir(mode);
    session.run(mode, &dir, true)
}

#[test]
fn infer_curve_is_running_max() {
    let plan: Vec<Vec<Cand>> = [5, 4, 7, 6, 9].iter().map(|&n| vec![Cand::Score(n)]).collect();
    let fx = fixture(&plan, run_config(5, 1), Sizes::default());
    let art = run(&fx, Mode::Infer).unwrap();
    assert_eq!(art.global_best_curve, vec![0.5, 0.5, 0.7, 0.7, 0.9]);
    assert_eq!(art.best_score, 0.9);
    assert_eq!(art.best_iteration, Some(5));
    assert!(art.iterations.iter().all(|it| it.candidates.len() == 1));
}

#[test]
fn windows_reset_every_two_iterations() {
    let plan: Vec<Vec<Cand>> = [5, 4, 7, 6, 9, 3].iter().map(|&n| vec![Cand::Score(n)]).collect();
    let fx = fixture(&plan, run_config(6, 1), Sizes::default());
    let art = run(&fx, Mode::Infer).unwrap();
    let lens: Vec<usize> = art.iterations.iter().map(|it| it.history_len).collect();
    assert_eq!(lens, vec![0, 1, 1, 2, 1, 2]);
    // Iteration 3 sees only the carried 0.4 entry: 0.7 beats it.
    let third = &art.iterations[2];
    assert_eq!((third.v_prev, third.v_max), (Some(0.4), 0.4));
    assert_eq!(third.candidates[0].reward, Some(1.0));
    // Iteration 4: 0.6 is below the window best 0.7 and below the previous 0.7.
    assert_eq!(art.iterations[3].candidates[0].reward, Some(0.0));
    assert_eq!(art.iterations[0].v_max, f64::NEG_INFINITY);
}

#[test]
fn fix_on_second_attempt_is_recorded() {
    let plan = vec![vec![Cand::FixedAt(2, 6)], vec![Cand::Score(3)]];
    let fx = fixture(&plan, run_config(2, 1), Sizes::default());
    let art = run(&fx, Mode::Infer).unwrap();
    let c = &art.iterations[0].candidates[0];
    assert_eq!(c.correction_attempts, 2);
    let action = c.action.as_ref().unwrap();
    assert_eq!(action.program.correction_attempts(), 2);
    assert_eq!(c.score(), Some(0.6));
    assert_eq!(c.raw_response, action.raw_response);
    assert!(c.raw_response.starts_with("Analysis for i1c0"));
    assert!(c.raw_response.contains("i1c0a2"));
    assert_eq!(art.iterations[1].history_len, 1);
}

#[test]
fn never_fixed_skips_without_touching_history() {
    let plan = vec![vec![Cand::Score(4)], vec![Cand::NeverFixed], vec![Cand::Score(6)]];
    let fx = fixture(&plan, run_config(3, 1), Sizes::default());
    let art = run(&fx, Mode::Infer).unwrap();
    let skipped = &art.iterations[1].candidates[0];
    assert!(skipped.skipped());
    assert_eq!(skipped.correction_attempts, 3);
    assert!(skipped.skip_reason.as_deref().unwrap().starts_with("NameError"));
    assert_eq!(art.iterations[1].selected, None);
    // The window carries the iteration-1 entry, not the erroneous workflow.
    assert_eq!(art.iterations[2].history_len, 1);
    assert_eq!(art.iterations[2].v_max, 0.4);
    assert_eq!(art.global_best_curve, vec![0.4, 0.4, 0.6]);
}

#[test]
fn every_iteration_skipped_without_seed_is_an_error() {
    let plan = vec![vec![Cand::NeverFixed], vec![Cand::Unparseable]];
    let fx = fixture(&plan, run_config(2, 1), Sizes::default());
    let err = run(&fx, Mode::Infer).unwrap_err();
    assert!(matches!(err, SessionError::Engine(EngineError::SeedlessAllFailed)), "{err}");
}

#[test]
fn every_iteration_skipped_with_seed_keeps_seed() {
    let plan = vec![vec![Cand::NeverFixed], vec![Cand::NeverFixed]];
    let mut fx = fixture(&plan, run_config(2, 1), Sizes::default());
    let seed = fx.path().join("seed.py");
    std::fs::write(&seed, scored_program(3, "seed", fx.sizes)).unwrap();
    fx.config.seed_workflow = Some(seed);
    let art = run(&fx, Mode::Infer).unwrap();
    assert_eq!(art.best_iteration, None);
    assert_eq!(art.best_score, 0.3);
    assert!(art.best_program.source().contains("# seed"));
    assert_eq!(art.iterations.iter().map(|i| i.history_len).collect::<Vec<_>>(), vec![1, 1]);
    assert_eq!(art.global_best_curve, vec![0.3, 0.3]);
}

#[test]
fn collect_run_writes_layout() {
    let sizes = Sizes { private: 4, public: 2, test: 2 };
    let plan = vec![
        vec![Cand::Score(1), Cand::Score(3), Cand::Score(0)],
        vec![Cand::Score(2), Cand::NeverFixed, Cand::Score(4)],
    ];
    let fx = fixture(&plan, run_config(2, 3), sizes);
    let session = Session::prepare(fx.config.clone()).unwrap();
    let dir = session.run_dir(Mode::Collect);
    let art = session.run(Mode::Collect, &dir, false).unwrap();
    for f in ["config.json", "splits.jsonl", TRAJECTORIES_FILE, "helper_log.jsonl", REPORT_FILE, ARTIFACTS_FILE, "curve.csv"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    for (i, k) in [(1, 0), (1, 1), (1, 2), (2, 0), (2, 2)] {
        let c = dir.join(format!("iterations/{i}/candidate_{k}"));
        for f in ["action.txt", "workflow.src", "feedback.json"] {
            assert!(c.join(f).exists(), "missing {}", c.join(f).display());
        }
    }
    assert!(!dir.join("iterations/2/candidate_1/workflow.src").exists());
    // Score 0 is filtered: excluded from selection and the dataset.
    assert!(art.iterations[0].candidates[2].filtered);
    assert_eq!(read_run_log(&dir).unwrap(), art.iterations);
    // A second run into the same directory needs --force.
    assert!(matches!(session.run(Mode::Collect, &dir, false), Err(SessionError::RunDirExists(_))));
}

#[test]
fn eval_scores_best_workflow_on_test_split() {
    let plan = vec![vec![Cand::Score(5)]];
    let fx = fixture(&plan, run_config(1, 1), Sizes::default());
    let session = Session::prepare(fx.config.clone()).unwrap();
    let dir = session.run_dir(Mode::Infer);
    session.run(Mode::Infer, &dir, false).unwrap();
    let report = session.evaluate_test(&dir, None).unwrap();
    assert_eq!(report.aggregate, 1.0);
    assert_eq!(report.per_sample.len(), 3);
    let other = validate_workflow_program("def workflow(agent, task):\n    #@ answer nope\n    return {}\n").unwrap();
    assert_eq!(session.evaluate_test(&dir, Some(other)).unwrap().aggregate, 0.0);
}
