//! Closed-loop runs on the bundled scene files.

use std::path::Path;

use mononav_core::source::{Scene, SourceError};
use mononav_sim::{run, RunOutcome, SimConfig};

fn scenes_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

#[test]
fn single_stack_scene_reaches_goal() {
    let scene = Scene::load(&scenes_dir().join("single_stack.scene")).unwrap();
    let mut config = SimConfig::new(scene.clone());
    config.seed = 7;
    let log = run(config).unwrap();
    assert_eq!(log.outcome, RunOutcome::GoalReached);
    for r in &log.records {
        assert!(!scene.point_in_any_box(&r.position));
    }
}

#[test]
fn empty_scene_reaches_goal_directly() {
    let scene = Scene::load(&scenes_dir().join("empty.scene")).unwrap();
    let log = run(SimConfig::new(scene)).unwrap();
    assert_eq!(log.outcome, RunOutcome::GoalReached);
    // 5 m at 3 cells of 0.25 m per cycle, arrival within one cell diagonal.
    assert_eq!(log.records.len(), 7);
}

#[test]
fn two_stack_scene_is_robust_across_extra_seeds() {
    let scene = Scene::load(&scenes_dir().join("two_stacks.scene")).unwrap();
    for seed in [101u64, 202, 303, 404, 505] {
        let mut config = SimConfig::new(scene.clone());
        config.noise = 0.05;
        config.jitter_px = 0.3;
        config.pad_cells = 2;
        config.seed = seed;
        let log = run(config).unwrap();
        assert_eq!(
            log.outcome,
            RunOutcome::GoalReached,
            "seed {seed} did not reach the goal"
        );
    }
}

#[test]
fn missing_scene_file_is_an_io_error() {
    let err = Scene::load(&scenes_dir().join("no_such.scene")).unwrap_err();
    assert!(matches!(err, SourceError::Io(_)));
}

#[test]
fn run_log_lines_are_self_describing() {
    let scene = Scene::load(&scenes_dir().join("empty.scene")).unwrap();
    let log = run(SimConfig::new(scene)).unwrap();
    let text = log.to_text();
    let first = text.lines().next().unwrap();
    for key in ["cycle=", "pos=", "yaw=", "status=", "plan=", "occupied=", "actions="] {
        assert!(first.contains(key), "missing {key} in: {first}");
    }
    assert!(text.lines().last().unwrap().starts_with("outcome="));
}
