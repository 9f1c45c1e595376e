use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use v2x_marl::harness::csv::{delivery_from_trace, METRICS_HEADER};
use v2x_marl::harness::load_config;

const SMALL: &str = r#"
eval_episodes = 3
payload_multipliers = [1, 3]
plots = false

[sim]
m_links = 2
k_links = 2
time_budget_ms = 20

[train]
total_episodes = 4
anneal_episodes = 4
hidden_layers = [8]
batch_size = 4
minibatches_per_episode = 1
replay_capacity = 200

[reward]
calibration_steps = 50
"#;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_v2x-marl"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn metrics_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn baseline_writes_consistent_metrics_and_traces() {
    let dir = setup();
    let out = cli(
        dir.path(),
        &[
            "baseline",
            "--config",
            "small.toml",
            "--scheme",
            "random",
            "--out",
            "run",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = dir.path().join("run");
    let rows = metrics_rows(&run.join("metrics.csv"));
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row[0], "random");
        let trace = fs::read_to_string(run.join(format!("trace_random_{}.csv", row[1]))).unwrap();
        assert_eq!(delivery_from_trace(&trace), Some(row[5].parse().unwrap()));
    }
    let echoed = load_config(&run.join("config.resolved.toml")).unwrap();
    assert_eq!(echoed.eval_episodes, 3);
    assert!(run.join("reward_params.toml").exists());
}

#[test]
fn train_then_eval_uses_the_checkpoints() {
    let dir = setup();
    let out = cli(
        dir.path(),
        &[
            "train",
            "--config",
            "small.toml",
            "--out",
            "run",
            "--episodes",
            "3",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = dir.path().join("run");
    assert!(run.join("checkpoints/marl/agent_0.qnet").exists());
    assert_eq!(
        fs::read_to_string(run.join("training_log_marl.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    let out = cli(
        dir.path(),
        &[
            "eval",
            "--config",
            "small.toml",
            "--out",
            "run",
            "--payload-multiplier",
            "2",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = metrics_rows(&run.join("metrics.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0][0].as_str(), rows[0][1].as_str()), ("marl", "2120"));
}

#[test]
fn exit_codes() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "[sim]\nm_links = 0\n").unwrap();
    fs::write(dir.path().join("typo.toml"), "seeed = 3\n").unwrap();
    let code = |args: &[&str]| cli(dir.path(), args).status.code();

    assert_eq!(
        code(&["sweep", "--config", "bad.toml", "--out", "x"]),
        Some(2)
    );
    assert_eq!(
        code(&["sweep", "--config", "typo.toml", "--out", "x"]),
        Some(2)
    );
    assert_eq!(
        code(&[
            "baseline",
            "--config",
            "small.toml",
            "--scheme",
            "dqn",
            "--out",
            "x"
        ]),
        Some(2)
    );
    assert_eq!(
        code(&[
            "baseline",
            "--config",
            "small.toml",
            "--scheme",
            "marl",
            "--out",
            "x"
        ]),
        Some(2)
    );
    assert_eq!(
        code(&[
            "sweep",
            "--config",
            "small.toml",
            "--payload-multiplier",
            "0",
            "--out",
            "x"
        ]),
        Some(2)
    );
    // 16 actions per link over 4 links exceeds a cap of 1000.
    fs::write(dir.path().join("big.toml"), "search_cap = 1000\n").unwrap();
    assert_eq!(
        code(&["baseline", "--config", "big.toml", "--scheme", "maxv2v", "--out", "x"]),
        Some(3)
    );
    // Nothing to load.
    assert_eq!(
        code(&["eval", "--config", "small.toml", "--out", "x"]),
        Some(1)
    );
    assert!(
        !dir.path().join("x").exists(),
        "failed runs must not leave artifacts"
    );

    let out = cli(
        dir.path(),
        &[
            "baseline",
            "--config",
            "small.toml",
            "--scheme",
            "nov2v",
            "--out",
            "ok",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    for row in metrics_rows(&dir.path().join("ok/metrics.csv")) {
        assert_eq!(row[5], "0");
    }
}

#[test]
fn validate_channel_writes_its_tables() {
    let dir = setup();
    let out = cli(dir.path(), &["validate-channel", "--out", "chan"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fast fading mean"), "{stdout}");
    for f in [
        "channel_validation.csv",
        "fading_histogram.csv",
        "pathloss.csv",
    ] {
        assert!(dir.path().join("chan").join(f).exists(), "{f}");
    }
}
