//! End-to-end tests of the `pipeplan` binary: exit codes, produced files,
//! and byte-level reproducibility at smoke scale.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pipeplan")
}

fn roster_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/pipes.csv")
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pipeplan-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary spawns")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

#[test]
fn help_lists_subcommands_and_config_keys() {
    let out = run_ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["train-dqn", "collect", "train-cql", "evaluate"] {
        assert!(text.contains(needle), "help missing {needle}");
    }
    let long = run_ok(&["help"]);
    let text = String::from_utf8_lossy(&long.stdout);
    for needle in [
        "seed",
        "roster",
        "sudden_failure_prob",
        "maintain_years_min",
        "buffer_capacity",
        "exploration_fraction",
        "alpha",
        "train_fraction",
        "episodes_per_pipe",
    ] {
        assert!(
            text.contains(needle),
            "long help missing config key {needle}"
        );
    }
}

#[test]
fn train_dqn_smoke_produces_artifacts() {
    let dir = temp_dir("train-dqn");
    run_ok(&[
        "--seed",
        "5",
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster_path()),
        "train-dqn",
        "--episodes",
        "10",
    ]);
    for file in [
        "dqn_model.json",
        "dqn_config.json",
        "dqn_train_log.csv",
        "near_expert.jsonl",
    ] {
        assert!(dir.join(file).exists(), "missing {file}");
    }
    let log = fs::read_to_string(dir.join("dqn_train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 11);
    assert!(log.starts_with("episode,return,rolling_mean_20,rolling_std_20,epsilon,loss_mean"));
    let dataset = fs::read_to_string(dir.join("near_expert.jsonl")).unwrap();
    assert_eq!(dataset.lines().count(), 1 + 10 * 100);
    let sidecar = fs::read_to_string(dir.join("dqn_config.json")).unwrap();
    assert!(sidecar.contains("\"seed\": 5"));
}

#[test]
fn pipeline_is_byte_identical_under_seed() {
    let a = temp_dir("det-a");
    let b = temp_dir("det-b");
    for dir in [&a, &b] {
        run_ok(&[
            "--seed",
            "9",
            "--out-dir",
            &s(dir),
            "--roster",
            &s(&roster_path()),
            "train-dqn",
            "--episodes",
            "8",
        ]);
        run_ok(&[
            "--seed",
            "9",
            "--out-dir",
            &s(dir),
            "--roster",
            &s(&roster_path()),
            "train-cql",
            "--dataset",
            &s(&dir.join("near_expert.jsonl")),
            "--epochs",
            "2",
        ]);
        run_ok(&[
            "--seed",
            "9",
            "--out-dir",
            &s(dir),
            "--roster",
            &s(&roster_path()),
            "evaluate",
            "--model",
            &s(&dir.join("dqn_model.json")),
            "--strategy",
            "maintain-10",
            "--episodes-per-pipe",
            "2",
        ]);
    }
    for file in [
        "dqn_model.json",
        "dqn_train_log.csv",
        "near_expert.jsonl",
        "cql_model.json",
        "cql_train_log.csv",
        "metrics.csv",
        "perpipe.csv",
        "plotdata.csv",
    ] {
        let left = fs::read(a.join(file)).unwrap();
        let right = fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }
}

#[test]
fn collect_random_writes_expected_count() {
    let dir = temp_dir("collect");
    let out = run_ok(&[
        "--seed",
        "3",
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster_path()),
        "collect",
        "--policy",
        "random",
        "--episodes",
        "10",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("1000 records"));
    let text = fs::read_to_string(dir.join("random.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1 + 1000);
    assert!(text
        .lines()
        .next()
        .unwrap()
        .contains("\"source_policy\":\"random\""));
}

#[test]
fn collect_expert_without_model_is_usage_error() {
    let dir = temp_dir("collect-expert");
    let out = run(&[
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster_path()),
        "collect",
        "--policy",
        "expert",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
}

#[test]
fn collect_rejects_unknown_policy() {
    let dir = temp_dir("collect-bad");
    let out = run(&[
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster_path()),
        "collect",
        "--policy",
        "oracle",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_cql_epochs_zero_still_writes_model() {
    let dir = temp_dir("cql-zero");
    run_ok(&[
        "--seed",
        "4",
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster_path()),
        "collect",
        "--policy",
        "random",
        "--episodes",
        "5",
    ]);
    run_ok(&[
        "--seed",
        "4",
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster_path()),
        "train-cql",
        "--dataset",
        &s(&dir.join("random.jsonl")),
        "--epochs",
        "0",
    ]);
    assert!(dir.join("cql_model.json").exists());
    let log = fs::read_to_string(dir.join("cql_train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn train_cql_unreadable_dataset_is_usage_error() {
    let dir = temp_dir("cql-missing");
    let out = run(&[
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster_path()),
        "train-cql",
        "--dataset",
        &s(&dir.join("nope.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_strategies_writes_all_csvs() {
    let dir = temp_dir("evaluate");
    run_ok(&[
        "--seed",
        "6",
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster_path()),
        "evaluate",
        "--strategy",
        "maintain-10",
        "--strategy",
        "greedy",
        "--episodes-per-pipe",
        "2",
    ]);
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(
        lines[0],
        "policy,avg_cost,avg_pf,n_do_nothing,n_maintain,n_replace,replace_per_pipe,cost_effectiveness"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("maintain-10,"));
    assert!(lines[2].starts_with("greedy,"));
    assert!(dir.join("perpipe.csv").exists());
    assert!(dir.join("plotdata.csv").exists());
}

#[test]
fn evaluate_without_policies_is_usage_error() {
    let dir = temp_dir("evaluate-none");
    let out = run(&[
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster_path()),
        "evaluate",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to evaluate"));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = temp_dir("bad-config");
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "volume = 11\n").unwrap();
    let out = run(&[
        "--config",
        &s(&cfg),
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster_path()),
        "evaluate",
        "--strategy",
        "none",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("volume"));
}

#[test]
fn config_file_values_apply_and_flags_override() {
    let dir = temp_dir("config-precedence");
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 21\nroster = {:?}\n[dqn]\nepisodes = 3\nhidden_dims = [4]\n",
            roster_path()
        ),
    )
    .unwrap();
    run_ok(&["--config", &s(&cfg), "--out-dir", &s(&dir), "train-dqn"]);
    let log = fs::read_to_string(dir.join("dqn_train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4, "config episodes=3 should apply");

    run_ok(&[
        "--config",
        &s(&cfg),
        "--out-dir",
        &s(&dir),
        "train-dqn",
        "--episodes",
        "5",
    ]);
    let log = fs::read_to_string(dir.join("dqn_train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 6, "flag should override config");
}

#[test]
fn unwritable_output_path_is_usage_error() {
    let dir = temp_dir("collect-unwritable");
    let out = run(&[
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster_path()),
        "collect",
        "--policy",
        "random",
        "--episodes",
        "1",
        "--out",
        &s(&dir.join("missing-subdir/data.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_roster_is_usage_error() {
    let dir = temp_dir("bad-roster");
    let roster = dir.join("pipes.csv");
    fs::write(&roster, "id,age,material,length\n1,10,steel,100\n").unwrap();
    let out = run(&[
        "--out-dir",
        &s(&dir),
        "--roster",
        &s(&roster),
        "evaluate",
        "--strategy",
        "none",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "error should name the row: {err}");
}
