use std::path::Path;
use std::process::{Command, Output};

fn fdi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdi")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, name: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = fdi(&["synth", "--equation", "burgers1d", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out
}

/// Parses `u_t = a*u*u_x + b*u_xx` into (a, b).
fn burgers_coefficients(line: &str) -> (f64, f64) {
    let rhs = line.trim().strip_prefix("u_t = ").expect("lhs");
    let (a, rest) = rhs.split_once("*u*u_x").expect("u*u_x term");
    let b = rest.trim().strip_suffix("*u_xx").expect("u_xx term");
    let b = b.replace(' ', "");
    (a.parse().unwrap(), b.trim_start_matches('+').parse().unwrap())
}

#[test]
fn synth_twice_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.fdi");
    let b = synth(dir.path(), "b.fdi");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn zero_noise_copies_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synth(dir.path(), "clean.fdi");
    let noisy = dir.path().join("noisy.fdi");
    let o = fdi(&["noise", "--in", path(&clean), "--out", path(&noisy), "--alpha", "0", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(clean).unwrap(), std::fs::read(noisy).unwrap());
}

#[test]
fn identify_clean_burgers_prints_the_equation() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synth(dir.path(), "burgers.fdi");
    let o = fdi(&["identify", "--in", path(&clean), "--library", "1d", "--method", "csr"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.trim(), "u_t = -1.0000*u*u_x + 0.0500*u_xx");
    let (a, b) = burgers_coefficients(&text);
    assert!((a + 1.0).abs() <= 0.01 && (b - 0.05).abs() <= 0.05 * 0.01, "{a} {b}");
}

#[test]
fn result_json_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synth(dir.path(), "burgers.fdi");
    let noisy = dir.path().join("noisy.fdi");
    let o = fdi(&["noise", "--in", path(&clean), "--out", path(&noisy), "--alpha", "0.1", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let first = dir.path().join("first.json");
    let o = fdi(&["identify", "--in", path(&noisy), "--cutoff", "10,6", "--out", path(&first)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let again = fdi(&["identify", "--config", path(&first)]);
    assert_eq!(stdout(&o), stdout(&again));

    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&first).unwrap()).unwrap();
    let cfg = &doc["config"];
    assert_eq!(cfg["noisy"], true);
    assert_eq!(cfg["pipeline"]["cutoff"]["modes"], serde_json::json!([10, 6]));
    assert_eq!(cfg["pipeline"]["diff"]["method"], "local_polynomial");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synth(dir.path(), "burgers.fdi");
    let cfg = dir.path().join("cfg.json");
    let body = serde_json::json!({ "input": path(&clean), "pipeline": { "cutoff": { "modes": [10, 6] } } });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let out = dir.path().join("r.json");
    let o = fdi(&["identify", "--config", path(&cfg), "--cutoff", "14,6", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(doc["config"]["pipeline"]["cutoff"]["modes"], serde_json::json!([14, 6]));
    // Clean sidecar selects clean differentiation.
    assert_eq!(doc["config"]["noisy"], false);
}

#[test]
fn usage_errors_exit_one_and_name_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synth(dir.path(), "burgers.fdi");
    let bad_out = dir.path().join("x.fdi");
    let cases: [(&[&str], &str); 5] = [
        (&["identify", "--in", path(&clean), "--unknown"], "--unknown"),
        (&["identify", "--in", path(&clean), "--cutoff", "400,6"], "--cutoff"),
        (&["identify", "--in", path(&clean), "--method", "csr", "--lambda", "1"], "--lambda"),
        (&["identify", "--in", path(&clean), "--diff", "poly", "--poly-window", "20"], "--poly-window"),
        (&["noise", "--in", path(&clean), "--out", path(&bad_out), "--alpha=-1"], "--alpha"),
    ];
    for (args, flag) in cases {
        let o = fdi(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).contains(flag), "{args:?}: {}", stderr(&o));
    }
    let o = fdi(&["identify", "--in", path(&dir.path().join("missing.fdi"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pipeline_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synth(dir.path(), "burgers.fdi");
    let o = fdi(&["identify", "--in", path(&clean), "--cutoff", "2,2", "--allow-few-rows"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn help_exits_zero_and_lists_defaults() {
    let o = fdi(&["identify", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for flag in ["--diff", "--fd-order", "--poly-degree", "--poly-window", "--stride", "--cutoff", "--no-normalize"] {
        assert!(text.contains(flag), "{flag}");
    }
    assert!(text.contains("[default: 6]") && text.contains("[default: 21]"));
}

#[test]
fn sweep_is_independent_of_job_count() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synth(dir.path(), "burgers.fdi");
    let run = |jobs: &str, name: &str| {
        let out = dir.path().join(name);
        let o = fdi(&[
            "sweep", "--in", path(&clean), "--alphas", "0.05,0.2", "--trials", "2", "--seed", "9", "--jobs", jobs,
            "--csv", path(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read_to_string(out).unwrap()
    };
    let one = run("1", "one.csv");
    let four = run("4", "four.csv");
    assert_eq!(one, four);
    assert_eq!(one.lines().count(), 1 + 4);
}

#[test]
fn csr_vs_stlm_reports_both_selectors() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synth(dir.path(), "burgers.fdi");
    let out = dir.path().join("r.json");
    let o = fdi(&["csr-vs-stlm", "--in", path(&clean), "--alphas", "0", "--trials", "1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(doc["report"]["rows"][0]["csr_correct"], 1);
    assert_eq!(doc["report"]["rows"][0]["stlm_correct"], 1);
    assert_eq!(doc["config"]["alphas"], serde_json::json!([0.0]));
}
