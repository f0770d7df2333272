//! One-shot recorders for the checked-in replay fixtures. Run explicitly:
//!
//! ```bash
//! cargo test -p mcts-ops --test record_fixtures -- --ignored
//! ```
//!
//! Recording wraps the seeded synthetic channel in a fixture writer and runs
//! the same configurations the replay suites load, so the fixture files stay
//! in lockstep with `tests/common`.

mod common;

use mcts_ops::benchgen::{self, ProblemEntry};
use mcts_ops::gateway::{Gateway, RecordBackend, RoleTemplates, SyntheticBackend};
use mcts_ops::pipeline::{run_search, PipelineOptions};
use mcts_ops::refine::refine_loop;
use mcts_ops::reward::oracle_reward;
use mcts_ops::sandbox::{ExecutionResult, Limits, Sandbox, SandboxConfig};
use mcts_ops::telemetry::NullLog;
use std::sync::Arc;

fn record_search(entry: &ProblemEntry, fixture_name: &str) {
    let path = common::fixture_path(fixture_name);
    let recorder = RecordBackend::create(
        Arc::new(SyntheticBackend::new(common::REPLAY_SEED)),
        &path,
    )
    .unwrap();
    let gateway = Gateway::new(Arc::new(recorder));
    let templates = RoleTemplates::builtin();
    let sandbox = Sandbox::new(SandboxConfig::default());
    let spec = entry.spec.clone();
    let grader = move |e: &ExecutionResult| oracle_reward(e, &spec);
    let outcome = run_search(
        &entry.spec.id,
        &entry.spec.description,
        &common::replay_search_config(),
        &common::replay_refine_config(),
        &PipelineOptions::default(),
        &gateway,
        &templates,
        &sandbox,
        &Limits::default(),
        &grader,
        &NullLog,
    )
    .unwrap();
    println!(
        "{}: recorded best_reward {} over {} iterations -> {}",
        entry.spec.id,
        outcome.best_reward,
        outcome.iterations,
        path.display()
    );
}

#[test]
#[ignore = "regenerates checked-in fixtures"]
fn record_search_fixtures() {
    record_search(&benchgen::paper_easy(), "replay_easy.jsonl");
    record_search(&benchgen::paper_hard(), "replay_hard.jsonl");
}

#[test]
#[ignore = "regenerates checked-in fixtures"]
fn record_refine_fixture() {
    let entry = benchgen::paper_easy();
    let path = common::fixture_path("replay_refine.jsonl");
    let recorder = RecordBackend::create(
        Arc::new(SyntheticBackend::new(common::REFINE_SEED)),
        &path,
    )
    .unwrap();
    let gateway = Gateway::new(Arc::new(recorder));
    let templates = RoleTemplates::builtin();
    let sandbox = Sandbox::new(SandboxConfig::default());
    let limits = Limits::default();
    let spec = entry.spec.clone();
    let grader = move |e: &ExecutionResult| oracle_reward(e, &spec);

    let broken = std::fs::read_to_string(common::fixture_path("broken_easy.py")).unwrap();
    let exec = sandbox.execute(&broken, &limits);
    assert!(!exec.ok(), "fixture script must fail to execute");
    let report = grader(&exec).unwrap();
    assert_eq!(report.reward, -1.0);

    let outcome = refine_loop(
        &broken,
        &report,
        &exec,
        &entry.spec.description,
        &common::replay_refine_config(),
        &grader,
        &gateway,
        &templates,
        &sandbox,
        &limits,
    );
    println!(
        "refine fixture: repaired in {} retries, final reward {}",
        outcome.retries_used, outcome.final_report.reward
    );
    assert!(
        outcome.final_report.reward > -1.0,
        "pick a REFINE_SEED whose revisions repair the script within the budget"
    );
}
