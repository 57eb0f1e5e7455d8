//! End-to-end command tests: every command is exercised through
//! `run_with_args` against small problems, checking exit codes, output
//! files, and bitwise reproducibility.

use std::fs;
use std::path::{Path, PathBuf};

fn run(args: &[&str]) -> i32 {
    let argv: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    mfglab_cli::run_with_args(&argv)
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Small monotone problem that solves in under a second.
const TINY_LQ: &str = r#"
[problem]
family = "lq"
dim = 1

[problem.params]
p = 1.0
q = 1.0

[initial]
kind = "gaussian"
mean = [2.0]
std = 0.5
n_atoms = 200

[solver]
horizon = 0.2
dt = 0.02
n_particles = 200
n_replicas = 50
sigma_x = 1e-5
seed = 7
tol = 2e-2
max_iter = 8
stencil_center = [1.0]
stencil_half_width = 3.0
points_per_axis = 5

[diagnostics]
propagation_pairs = 8
propagation_cloud = 8
"#;

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["mfglab", "--help"]), 0);
    assert_eq!(run(&["mfglab", "--version"]), 0);
    assert_eq!(run(&["mfglab", "solve", "--help"]), 0);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(run(&["mfglab", "frobnicate"]), 2);
}

#[test]
fn missing_config_file_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "solve",
            "--config",
            "/nonexistent/config.toml",
            "--out",
            out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn malformed_toml_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "not toml [[[");
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn unknown_config_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "typo.toml",
        &TINY_LQ.replace("max_iter = 8", "max_iter = 8\nmax_itr = 9"),
    );
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn unknown_family_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "unk.toml",
        &TINY_LQ.replace("family = \"lq\"", "family = \"nope\""),
    );
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn initial_dimension_mismatch_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "dim.toml",
        &TINY_LQ.replace("mean = [2.0]", "mean = [2.0, 1.0]"),
    );
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn solve_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lq.toml", TINY_LQ);
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        0
    );
    for file in [
        "config.toml",
        "manifest.json",
        "flow_0.csv",
        "flow_meta_0.csv",
        "history.csv",
        "propagation_report.json",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    // The stored config is a byte copy of the input.
    assert_eq!(
        fs::read(out.join("config.toml")).unwrap(),
        fs::read(&cfg).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["converged"], serde_json::Value::Bool(true));
    assert_eq!(manifest["dim"], serde_json::json!(1));
    assert_eq!(manifest["steps"], serde_json::json!(10));
}

#[test]
fn solve_outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lq.toml", TINY_LQ);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    assert_eq!(
        run(&[
            "mfglab",
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out1.to_str().unwrap(),
            "--threads",
            "1",
        ]),
        0
    );
    assert_eq!(
        run(&[
            "mfglab",
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap(),
            "--threads",
            "3",
        ]),
        0
    );
    for file in [
        "manifest.json",
        "flow_0.csv",
        "flow_meta_0.csv",
        "history.csv",
        "propagation_report.json",
    ] {
        assert_eq!(
            fs::read(out1.join(file)).unwrap(),
            fs::read(out2.join(file)).unwrap(),
            "{file} differs between thread counts"
        );
    }
}

#[test]
fn verify_estimates_requires_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lq.toml", TINY_LQ);
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    assert_eq!(
        run(&[
            "mfglab",
            "verify-estimates",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        4
    );
    // --solve-first runs the missing solve, then the estimates.
    assert_eq!(
        run(&[
            "mfglab",
            "verify-estimates",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--deltas",
            "0.1,0.02",
            "--solve-first",
        ]),
        0
    );
    let estimates: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("estimates.json")).unwrap()).unwrap();
    assert_eq!(estimates["deltas"], serde_json::json!([0.1, 0.02]));
    assert_eq!(estimates["terminal"]["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn verify_estimates_rejects_config_drift() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lq.toml", TINY_LQ);
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        0
    );
    let drifted = write_config(
        dir.path(),
        "drift.toml",
        &TINY_LQ.replace("seed = 7", "seed = 8"),
    );
    assert_eq!(
        run(&[
            "mfglab",
            "verify-estimates",
            "--config",
            drifted.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn oracle_compare_needs_closed_form_family() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "zero.toml",
        &TINY_LQ.replace("family = \"lq\"", "family = \"zero\""),
    );
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "oracle-compare",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        5
    );
}

#[test]
fn oracle_compare_matches_closed_form_on_small_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lq.toml", TINY_LQ);
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "oracle-compare",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        0
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["max_abs_error"].as_f64().unwrap() < 0.05);
    assert!(out.join("comparison.csv").exists());
}

#[test]
fn regularize_rejects_levels_above_growth_ceiling() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "regularize",
            "--family",
            "cubic_clipped",
            "--epsilons",
            "1,0.5",
            "--out",
            out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn regularize_skip_growth_certifies_lipschitz_levels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "regularize",
            "--family",
            "cubic_clipped",
            "--epsilons",
            "1,0.5,0.25",
            "--pairs",
            "64",
            "--eval-clouds",
            "16",
            "--cloud-size",
            "8",
            "--skip-growth",
            "--out",
            out.to_str().unwrap(),
        ]),
        0
    );
    let certs: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("certificates.json")).unwrap())
            .unwrap();
    assert_eq!(certs["all_passed"], serde_json::Value::Bool(true));
    assert_eq!(
        certs["approximation_decreasing"],
        serde_json::Value::Bool(true)
    );
    assert!(certs["levels"][0]["growth_bound"].is_null());
    assert!(out.join("sweep.csv").exists());
}

#[test]
fn probe_gate_fails_on_antitone_terminal_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "anti.toml",
        &TINY_LQ.replace("p = 1.0", "p = -1.0"),
    );
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "probe-monotonicity",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--pairs",
            "32",
            "--require-monotone",
        ]),
        3
    );
    // The report is still written for inspection.
    let probes: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("probes.json")).unwrap()).unwrap();
    assert_eq!(
        probes["monotone_certified"],
        serde_json::Value::Bool(false)
    );
}

#[test]
fn probe_gate_passes_on_monotone_family() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lq.toml", TINY_LQ);
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "mfglab",
            "probe-monotonicity",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--pairs",
            "32",
            "--require-monotone",
        ]),
        0
    );
    let probes: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("probes.json")).unwrap()).unwrap();
    assert_eq!(probes["terminal"]["passed"], serde_json::Value::Bool(true));
    assert_eq!(probes["growth"]["passed"], serde_json::Value::Bool(true));
}
