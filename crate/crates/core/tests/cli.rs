//! End-to-end checks of the command-line interface: subcommands, exit
//! codes (0 ok, 2 infeasible round, 3 config error), and byte-identical
//! output under a fixed seed.

use std::path::Path;
use std::process::{Command, Output};

fn qfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(
        &path,
        r#"
seed = 5
rounds = 2

[users]
count = 3

[partition]
samples_per_user = 100

[model]
input_dim = 16
hidden_dim = 6
output_dim = 10

[dataset]
kind = "synthetic"
train_size = 400
test_size = 100

[trainer.learning_rate]
kind = "constant"
value = 0.01
"#,
    )
    .unwrap();
    path
}

#[test]
fn run_writes_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    let diag = dir.path().join("diag.jsonl");

    let r = qfl(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
        "--diagnostics",
        diag.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "stderr: {}", String::from_utf8_lossy(&r.stderr));
    let r = qfl(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(r.status.success());

    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "same config and seed must give identical bytes");

    // one JSON object per round with the solver extras
    let diag_text = std::fs::read_to_string(&diag).unwrap();
    let lines: Vec<&str> = diag_text.trim().lines().collect();
    assert_eq!(lines.len(), 2);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("allocation").is_some());
        assert!(v.get("multipliers").is_some());
        assert!(v["kkt_max_residual"].as_f64().unwrap() <= 1e-6);
    }
}

#[test]
fn sweep_merges_legs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out = dir.path().join("sweep.csv");
    let r = qfl(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--axis",
        "epsilon",
        "--values",
        "0.01,0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "stderr: {}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("leg,round,"));
    assert_eq!(lines.len(), 1 + 2 * 2);
}

#[test]
fn bound_emits_csv() {
    let r = qfl(&["bound", "--rounds", "5", "--j2", "0.01"]);
    assert!(r.status.success());
    let text = String::from_utf8(r.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rounds,first_term,gap_term,total");
    assert_eq!(lines.len(), 6);
    let last: Vec<f64> = lines[5]
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((last[0] + last[1] - last[2]).abs() < 1e-12);
}

#[test]
fn oracle_reports_gaps() {
    let r = qfl(&["oracle", "--instances", "2", "--seed", "9"]);
    assert!(r.status.success(), "stderr: {}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(text.contains("ok: worst relative gap"), "stdout: {text}");
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "rounds = 0\n").unwrap();
    let r = qfl(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));

    let r = qfl(&["run", "--scheme", "bogus"]);
    assert_eq!(r.status.code(), Some(3));

    let r = qfl(&["sweep", "--axis", "nonsense", "--values", "1"]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn infeasible_round_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // micro energy budgets cannot carry even a one-bit payload
    let path = dir.path().join("starved.toml");
    std::fs::write(
        &path,
        r#"
seed = 5
rounds = 1

[users]
count = 2
e_max_j = 1e-9
max_distance_m = 1000.0

[partition]
samples_per_user = 100

[model]
input_dim = 16
hidden_dim = 6
output_dim = 10

[dataset]
kind = "synthetic"
train_size = 300
test_size = 50
"#,
    )
    .unwrap();
    let r = qfl(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&r.stderr));
}
