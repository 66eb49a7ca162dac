use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

fn qobf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qobf")).args(args).env_remove("QOBF_SEED").output().expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON report on stdout")
}

fn metric(r: &Value, name: &str) -> f64 {
    r["metrics"][name]["value"].as_f64().unwrap()
}

#[test]
fn unknown_flag_is_a_config_error_without_report() {
    let out = qobf(&["design-check", "--n", "2", "--d", "3", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert_eq!(qobf(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn design_check_at_d3_matches_closed_form() {
    let out = qobf(&["design-check", "--n", "2", "--d", "3", "--mode", "exact"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["schema_version"], 1);
    assert!((metric(&r, "deviation") - 1.0 / 18.0).abs() < 1e-12);
}

// The exhaustive d = 2 twirl leaves Π^eq invariant, so the deviation is 2/3
// and the design bound 1/6 fails.
#[test]
fn design_check_at_d2_reports_measured_deviation() {
    let out = qobf(&["design-check", "--n", "1", "--d", "2", "--mode", "exact"]);
    assert_eq!(out.status.code(), Some(1));
    assert!((metric(&report(&out), "deviation") - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn same_seed_gives_identical_reports() {
    let args = ["distinguish", "--oracle-a", "spspru:n=2,d=3", "--oracle-b", "haar:n=2,d=3", "--trials", "300", "--seed", "9"];
    let a = qobf(&args);
    let b = qobf(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let env = Command::new(env!("CARGO_BIN_EXE_qobf")).args(&args[..args.len() - 2]).env("QOBF_SEED", "9").output().unwrap();
    assert_eq!(env.stdout, a.stdout);
}

#[test]
fn jordan_of_zero_and_plus() {
    let out = qobf(&["jordan", "--pa", &data("pa.json"), "--pb", &data("pb.json")]);
    assert_eq!(out.status.code(), Some(0));
    let blocks = report(&out)["details"]["blocks"].as_array().unwrap().clone();
    assert_eq!(blocks.len(), 1);
    assert!((blocks[0]["theta"].as_f64().unwrap() - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
}

#[test]
fn channel_output_of_bell_circuit() {
    let out = qobf(&["channel", "--circuit", &data("bell.json"), "--input", "basis:0"]);
    assert_eq!(out.status.code(), Some(0));
    let st = &report(&out)["details"]["state"];
    for (r, c) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
        assert!((st[r][c][0].as_f64().unwrap() - 0.5).abs() < 1e-12);
    }
    assert!(st[1][1][0].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn measurement_circuits_are_rejected() {
    let out = qobf(&["channel", "--circuit", &data("measure.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("measurement"));
}

#[test]
fn obfuscated_program_matches_circuit() {
    let csv = std::env::temp_dir().join("qobf-cli-obfuscate.csv");
    let out = qobf(&["obfuscate", "--circuit", &data("discard.json"), "--seed", "1", "--csv", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert!(metric(&r, "max_output_error") < 1e-9);
    assert_eq!(r["details"]["manifest"]["backend"], "transparent");
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("input,error"));
}

#[test]
fn ideal_sim_recording_is_normalised() {
    let out = qobf(&["ideal-sim", "--circuit", &data("discard.json"), "--mode", "path-recording"]);
    assert_eq!(out.status.code(), Some(0));
    assert!((metric(&report(&out), "total_probability") - 1.0).abs() < 1e-9);
}

#[test]
fn prp_test_reports_bijection_and_chi_square() {
    let out = qobf(&["prp-test", "--d", "3", "--samples", "6000", "--mode", "exact", "--seed", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let d = &report(&out)["details"];
    assert_eq!(d["bijective"], true);
    assert!(d["p_value"].as_f64().unwrap() > 0.001);
}

#[test]
fn pro_compare_classical_distinct() {
    let out = qobf(&["pro-compare", "--n", "2", "--d", "4", "--samples", "2000", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    // Path recording never collides, Haar collides with probability 1/5.
    assert!((metric(&report(&out), "total_variation") - 0.2).abs() < 0.05);
}

#[test]
fn acceptance_subset_and_bad_id() {
    let out = qobf(&["acceptance", "--only", "3", "--only", "12"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = report(&out)["details"]["criteria"].as_array().unwrap().len();
    assert_eq!(rows, 2);
    assert_eq!(qobf(&["acceptance", "--only", "99"]).status.code(), Some(2));
}
