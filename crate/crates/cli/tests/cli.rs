//! End-to-end tests of the `pbglm` binary: the ingest -> fit -> evaluate ->
//! predict pipeline on a small fixture, global flag overrides, the poibin
//! utility, and the exit-code contract (1 numeric, 2 input/config).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn pbglm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbglm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}; stderr: {}",
        stderr(out)
    );
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const RESULTS_CSV: &str = "\
county,precinct,candidate,votes
MONTGOMERY,ABINGTON W1,ALICE DEM,603
MONTGOMERY,ABINGTON W1,BOB REP,388
MONTGOMERY,ABINGTON W1,CARL IND,50
BERKS,READING 01,BOB REP,210
BERKS,READING 01,ALICE DEM,190
PIKE,RESULTS ONLY,ALICE DEM,10
PIKE,RESULTS ONLY,BOB REP,5
";

const VOTERS_CSV: &str = "\
county,precinct,voter_id,age,party
MONTGOMERY,Abington  W1,v1,34,D
MONTGOMERY,abington w1,v2,55,R
MONTGOMERY,ABINGTON W1,v3,47,
BERKS,READING 01,v4,41,D
BERKS,READING 01,v5,28,
CHESTER,VOTERS ONLY,v6,50,R
";

const FEATURES_TOML: &str = r#"
[[feature]]
name = "age_scaled"
column = "age"
kind = "scaled"
offset = 40.0
scale = 10.0

[[feature]]
name = "is_dem"
column = "party"
kind = "indicator"
equals = "D"

[tags]
column = "party"
dem_values = ["D"]
rep_values = ["R"]
"#;

/// Writes the raw-CSV fixture plus a run config into a tempdir.
struct Fixture {
    dir: TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::write(root.join("results.csv"), RESULTS_CSV).unwrap();
        std::fs::write(root.join("voters.csv"), VOTERS_CSV).unwrap();
        std::fs::write(root.join("features.toml"), FEATURES_TOML).unwrap();
        let out = root.join("out");
        let config = root.join("run.toml");
        std::fs::write(
            &config,
            format!(
                r#"
[paths]
results = {results:?}
voters = {voters:?}
feature_spec = {features:?}
out_dir = {out:?}

[candidates]
dem = "ALICE DEM"
rep = "BOB REP"

[model]
kind = "logistic"

[fit]
epochs = 2
seed = 5

[split]
mode = "precinct"
train_frac = 0.5
seed = 6
"#,
                results = root.join("results.csv").display().to_string(),
                voters = root.join("voters.csv").display().to_string(),
                features = root.join("features.toml").display().to_string(),
                out = out.display().to_string(),
            ),
        )
        .unwrap();
        Self { dir, config, out }
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut full = vec!["--config", self.config.to_str().unwrap()];
        full.extend_from_slice(args);
        pbglm(&full)
    }
}

#[test]
fn ingest_joins_normalized_names_and_reports_drops() {
    let fx = Fixture::new();
    let out = fx.run(&["ingest"]);
    assert_exit(&out, 0);

    let report = read_json(&fx.out.join("ingest_report.json"));
    assert_eq!(report["retained_precincts"], 2);
    assert_eq!(report["precincts_in_results"], 3);
    assert_eq!(report["dropped_results_only"], 1);
    assert_eq!(report["dropped_voters_only"], 1);
    assert_eq!(report["voters_retained"], 5);
    assert_eq!(report["voters_dropped"], 1);
    assert_eq!(report["feature_names"], serde_json::json!(["age_scaled", "is_dem"]));
    assert!(fx.out.join("dataset.bin").is_file());

    // The fit must be able to run straight off the cache, without the CSVs.
    std::fs::remove_file(fx.dir.path().join("results.csv")).unwrap();
    std::fs::remove_file(fx.dir.path().join("voters.csv")).unwrap();
    let out = fx.run(&["fit"]);
    assert_exit(&out, 0);
    assert!(fx.out.join("params.json").is_file());
    assert!(fx.out.join("fit_report.json").is_file());
    assert!(fx.out.join("loss.tsv").is_file());
}

#[test]
fn full_pipeline_on_synthetic_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("artifacts");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            r#"
[paths]
out_dir = {out:?}

[fit]
epochs = 4
seed = 21

[split]
train_frac = 0.75
seed = 22

[synthetic]
precincts = 24
voters = 40
dim = 2
precinct_spread = 0.5
counties = 4

[synthetic.model]
kind = "logistic"
theta = [0.1, 0.9, -0.7]
"#,
            out = out_dir.display().to_string()
        ),
    )
    .unwrap();
    let cfg = config.to_str().unwrap();

    assert_exit(&pbglm(&["--config", cfg, "simulate"]), 0);
    assert_exit(&pbglm(&["--config", cfg, "fit"]), 0);
    let params = out_dir.join("params.json");
    assert_exit(&pbglm(&["--config", cfg, "evaluate", "--params", params.to_str().unwrap()]), 0);
    assert_exit(&pbglm(&["--config", cfg, "predict", "--params", params.to_str().unwrap()]), 0);

    let evaluation = read_json(&out_dir.join("evaluation.json"));
    assert!(evaluation["r2_train"].is_f64());
    assert!(evaluation["r2_test"].is_f64());
    assert!(evaluation["landslide"].is_object());
    assert!(out_dir.join("landslide_hist.tsv").is_file());
    assert!(out_dir.join("primary_hist.tsv").is_file());

    let predictions = std::fs::read_to_string(out_dir.join("predictions.csv")).unwrap();
    let mut lines = predictions.lines();
    assert_eq!(lines.next(), Some("county,precinct,voter_id,probability"));
    let first = lines.next().unwrap();
    let prob = first.rsplit(',').next().unwrap();
    assert_eq!(prob.split('.').nth(1).map(str::len), Some(6), "6-decimal probabilities");
    assert_eq!(predictions.lines().count(), 1 + 24 * 40);

    // Every artifact of this run carries the same config digest.
    let digest = read_json(&out_dir.join("simulate_report.json"))["config_digest"].clone();
    assert_eq!(read_json(&out_dir.join("fit_report.json"))["config_digest"], digest);
    assert_eq!(read_json(&out_dir.join("evaluation.json"))["config_digest"], digest);
    assert_eq!(read_json(&out_dir.join("params.json"))["config_digest"], digest);
}

#[test]
fn seed_and_out_overrides_take_effect() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            r#"
[paths]
out_dir = {out:?}

[fit]
epochs = 1
seed = 1

[synthetic]
precincts = 10
voters = 20
dim = 2
counties = 2

[synthetic.model]
kind = "logistic"
theta = [0.0, 0.5, -0.5]
"#,
            out = dir.path().join("ignored").display().to_string()
        ),
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    let run = |out: &Path, seed: &str| {
        let result = pbglm(&[
            "--config", cfg, "--seed", seed, "--out", out.to_str().unwrap(), "simulate",
        ]);
        assert_exit(&result, 0);
    };
    run(&out_a, "7");
    run(&out_b, "8");

    assert!(!dir.path().join("ignored").exists(), "--out must win over the config");
    let report_a = read_json(&out_a.join("simulate_report.json"));
    let report_b = read_json(&out_b.join("simulate_report.json"));
    assert_eq!(report_a["seed"], 7);
    assert_eq!(report_b["seed"], 8);
    assert_ne!(report_a["config_digest"], report_b["config_digest"]);
}

#[test]
fn zero_epoch_fit_returns_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            r#"
[paths]
out_dir = {out:?}

[fit]
epochs = 0

[synthetic]
precincts = 8
voters = 30
dim = 2
counties = 2

[synthetic.model]
kind = "logistic"
theta = [0.3, 1.0, -1.0]
"#,
            out = out_dir.display().to_string()
        ),
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    assert_exit(&pbglm(&["--config", cfg, "simulate"]), 0);
    assert_exit(&pbglm(&["--config", cfg, "fit"]), 0);

    let params = read_json(&out_dir.join("params.json"));
    assert_eq!(params["params"]["theta"], serde_json::json!([0.0, 0.0, 0.0]));
    let report = read_json(&out_dir.join("fit_report.json"));
    assert_eq!(report["epochs_run"], 0);
    assert_eq!(report["approx_nll"], serde_json::json!([]));
}

#[test]
fn poibin_prints_pinned_values() {
    let out = pbglm(&["poibin", "--p", "0.1, 0.5, 0.9", "--k", "1"]);
    assert_exit(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("pmf[1] = 4.55000000000e-1"), "got: {text}");
    assert!(text.contains("cdf[1] = 5.00000000000e-1"), "got: {text}");

    let out = pbglm(&["poibin", "--p", "0.5 0.5 0.5 0.5", "--lyapunov"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("lyapunov = 2.50000000000e-1"));

    // No selector flags: moments and the Lyapunov ratio by default.
    let out = pbglm(&["poibin", "--p", "0.3,0.6"]);
    assert_exit(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("mean = 9.00000000000e-1"), "got: {text}");
    assert!(text.contains("variance = 4.50000000000e-1"), "got: {text}");
    assert!(text.contains("lyapunov = "), "got: {text}");
}

#[test]
fn poibin_reads_probabilities_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let p_file = dir.path().join("probs.txt");
    std::fs::write(&p_file, "0.5\n0.5 0.5\n0.5\n").unwrap();
    let out = pbglm(&["poibin", "--p-file", p_file.to_str().unwrap(), "--lyapunov"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("lyapunov = 2.50000000000e-1"));
}

#[test]
fn exit_codes_distinguish_input_and_numeric_errors() {
    // Input errors: exit 2.
    let out = pbglm(&["fit"]);
    assert_exit(&out, 2); // no --config at all
    let out = pbglm(&["--config", "/nonexistent/run.toml", "fit"]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("/nonexistent/run.toml"));
    let out = pbglm(&["poibin", "--p", "1.5", "--k", "1"]);
    assert_exit(&out, 2);

    // Numeric errors: exit 1. All-degenerate probabilities have zero
    // variance, so the Lyapunov ratio is undefined.
    let out = pbglm(&["poibin", "--p", "1,1,1", "--lyapunov"]);
    assert_exit(&out, 1);
    assert!(stderr(&out).contains("degenerate"), "got: {}", stderr(&out));
}

#[test]
fn unknown_config_key_is_rejected_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "[fit]\nlr = 0.1\n").unwrap();
    let out = pbglm(&["--config", config.to_str().unwrap(), "fit"]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("unknown field"), "got: {}", stderr(&out));
}

#[test]
fn missing_input_file_is_reported_with_its_path() {
    let fx = Fixture::new();
    std::fs::remove_file(fx.dir.path().join("voters.csv")).unwrap();
    let out = fx.run(&["ingest"]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("voters.csv"), "got: {}", stderr(&out));
}

#[test]
fn evaluate_rejects_dimension_mismatched_params() {
    let fx = Fixture::new();
    assert_exit(&fx.run(&["ingest"]), 0);
    let params_path = fx.dir.path().join("bad_params.json");
    std::fs::write(
        &params_path,
        r#"{"kind": "logistic", "theta": [0.0, 1.0, 2.0, 3.0, 4.0]}"#,
    )
    .unwrap();
    let out = fx.run(&["evaluate", "--params", params_path.to_str().unwrap()]);
    assert_exit(&out, 2);
    assert!(
        stderr(&out).contains("params expect 4 covariates, dataset has 2"),
        "got: {}",
        stderr(&out)
    );
}
