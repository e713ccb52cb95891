use std::path::Path;
use std::process::{Command, Output};

use censet::report::{AnalyzeReport, CertifyReport, ComposeReport, OracleReport, SimulateReport, SweepReport};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

fn censet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_censet"))
        .args(args)
        .env_remove("CENSET_NUMERIC_POLICY")
        .output()
        .expect("spawn censet")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Parse into the typed report and back; the JSON value must survive unchanged.
fn assert_round_trip<R: Serialize + DeserializeOwned>(json: &str) -> R {
    let value: Value = serde_json::from_str(json).unwrap();
    let report: R = serde_json::from_value(value.clone()).unwrap();
    assert_eq!(serde_json::to_value(&report).unwrap(), value);
    report
}

const OBS: &str = r#"{"vocab_size":4,"mode":"logits","topk":[{"token":0,"score":1.0},{"token":1,"score":0.0}],"position_id":"a"}
{"vocab_size":5,"mode":"logprobs","topk":[{"token":3,"score":-0.5},{"token":1,"score":-1.5}],"position_id":"b"}
{"vocab_size":2,"mode":"logits","topk":[{"token":0,"score":0.3},{"token":1,"score":-0.2}],"position_id":"full"}
"#;

#[test]
fn analyze_reports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "obs.jsonl", OBS);
    let out = stdout(&censet(&["analyze", "--input", &input]));
    let report: AnalyzeReport = assert_round_trip(&out);
    assert_eq!(report.positions.len(), 3);
    assert!((report.positions[0].u_k - 2.0 / (1f64.exp() + 3.0)).abs() < 1e-12);
    assert!(report.positions[1].normalized.is_some());
    // Full access: exactly identified, infinite negative log-odds survives the trip.
    assert!(report.positions[2].exactly_identified);
    assert_eq!(report.positions[2].log_odds, f64::NEG_INFINITY);
}

#[test]
fn bits_flag_converts_divergences() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "obs.jsonl", OBS);
    let nats: AnalyzeReport = serde_json::from_str(&stdout(&censet(&["analyze", "--input", &input]))).unwrap();
    let bits: AnalyzeReport =
        serde_json::from_str(&stdout(&censet(&["analyze", "--input", &input, "--bits"]))).unwrap();
    let (n, b) = (&nats.positions[0], &bits.positions[0]);
    assert!((b.r_bin - n.r_bin / std::f64::consts::LN_2).abs() < 1e-15);
    assert!((b.g_max - n.g_max / std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(b.u_k, n.u_k);
}

#[test]
fn seeded_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |cmd: &[&str], seed: &str, name: &str| {
        let path = dir.path().join(name);
        let mut args = cmd.to_vec();
        args.extend(["--seed", seed, "--output", path.to_str().unwrap()]);
        stdout(&censet(&args));
        std::fs::read(path).unwrap()
    };
    let sim = ["simulate", "--vocab", "200", "--positions", "8", "--k", "1,5,20"];
    let a = run(&sim, "7", "a.json");
    assert_eq!(a, run(&sim, "7", "b.json"));
    assert_ne!(a, run(&sim, "8", "c.json"));
    assert_round_trip::<SimulateReport>(std::str::from_utf8(&a).unwrap());

    let oracle = ["oracle", "--cases", "5"];
    let x = run(&oracle, "3", "x.json");
    assert_eq!(x, run(&oracle, "3", "y.json"));
    let report: OracleReport = assert_round_trip(std::str::from_utf8(&x).unwrap());
    assert!(report.passed, "{report:?}");
}

#[test]
fn sweep_csv_header_and_nan_rows() {
    let out = stdout(&censet(&["ksweep", "--vocab", "30", "--positions", "4", "--k", "1,5,50", "--format", "csv"]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("K,uk_mean,uk_sd,rbin_mean,tail_mass_mean,n"));
    assert_eq!(lines.clone().count(), 3);
    let json = stdout(&censet(&["ksweep", "--vocab", "30", "--positions", "4", "--k", "1,5,50"]));
    let report: SweepReport = assert_round_trip(&json);
    let last = &report.rows[2];
    assert!(last.uk_mean.is_nan() && last.warning.is_some());
    assert_eq!(last.n, 0);
}

#[test]
fn certify_and_compose_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "obs.jsonl", OBS);
    let cert: CertifyReport = assert_round_trip(&stdout(&censet(&["certify", "--input", &input, "--delta", "0.01"])));
    assert_eq!(cert.verdicts.len(), 3);
    assert_eq!(cert.verdicts[2].verdict, "OPEN");
    let comp: ComposeReport = assert_round_trip(&stdout(&censet(&["compose", "--input", &input])));
    assert!((comp.joint_grid_sup - comp.factored_grid_sum).abs() <= 1e-9);
}

#[test]
fn missing_input_is_a_json_error() {
    let o = censet(&["analyze", "--input", "/nonexistent/obs.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("/nonexistent/obs.jsonl"));
}

#[test]
fn parse_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = OBS.lines().take(2).collect::<Vec<_>>().join("\n")
        + "\n\n{\"vocab_size\":3,\"mode\":\"logits\",\"topk\":[{\"token\":7,\"score\":0.0}]}\n";
    let input = write(dir.path(), "bad.jsonl", &bad);
    let o = censet(&["analyze", "--input", &input]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    let text = err.to_string();
    assert!(text.contains("line 4"), "{text}");
}

#[test]
fn certify_needs_delta() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "obs.jsonl", OBS);
    let o = censet(&["certify", "--input", &input]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn policy_file_moves_the_threshold_band() {
    let dir = tempfile::tempdir().unwrap();
    // Two revealed logits (ln 5, 0) and two censored tokens: U = 2 / (5 + 1 + 2) = 0.25.
    let obs = format!(
        "{{\"vocab_size\":4,\"mode\":\"logits\",\"topk\":[{{\"token\":0,\"score\":{}}},{{\"token\":1,\"score\":0.0}}]}}\n",
        5f64.ln()
    );
    let input = write(dir.path(), "quarter.jsonl", &obs);
    let args = ["certify", "--input", input.as_str(), "--delta", "0.1"];

    let default: CertifyReport = serde_json::from_str(&stdout(&censet(&args))).unwrap();
    assert!((default.verdicts[0].u_k - 0.25).abs() < 1e-12);
    assert!(default.verdicts[0].at_threshold);
    assert_eq!(default.verdicts[0].verdict, "OPEN");

    let policy = write(dir.path(), "policy.json", r#"{"threshold_band": 0.0}"#);
    let o =
        Command::new(env!("CARGO_BIN_EXE_censet")).args(args).env("CENSET_NUMERIC_POLICY", &policy).output().unwrap();
    let strict: CertifyReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(strict.threshold_band, 0.0);
    assert!(!strict.verdicts[0].at_threshold);
    assert_eq!(strict.verdicts[0].verdict, "IMPOSSIBLE");

    let broken = write(dir.path(), "broken.json", r#"{"threshold_band": -1}"#);
    let o =
        Command::new(env!("CARGO_BIN_EXE_censet")).args(args).env("CENSET_NUMERIC_POLICY", &broken).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}
