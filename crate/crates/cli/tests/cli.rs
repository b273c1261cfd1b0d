use hofer_core::Report;
use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hofer-lab")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_report(p: &Path) -> Report {
    Report::from_json(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn list_shows_the_catalog() {
    let o = lab(&["list"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().count() >= 16);
    for id in ["flux-gamma", "morse-homology", "square-energy", "conjugate-scan"] {
        assert!(out.lines().any(|l| l.starts_with(id)), "{id} missing");
    }
    assert!(out.lines().all(|l| l.split_whitespace().count() > 3), "every line carries a claim");
}

#[test]
fn square_energy_passes_and_embeds_config() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("out.json");
    let o = lab(&["hofer", "square-energy", "--u", "0.5", "--eps", "0.01", "--json", json.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read_report(&json);
    assert!(rep.get("hofer_length").unwrap() <= 0.26);
    assert!(rep.all_passed());
    assert_eq!(rep.experiment, "square-energy");
    assert_eq!(rep.schema, hofer_core::report::REPORT_SCHEMA);
    assert!(!rep.version.is_empty());
    assert_eq!(rep.config["params"]["u"], 0.5);
    assert_eq!(rep.config["params"]["eps"], 0.01);
    assert!(rep.runtime_ms.is_some());
}

#[test]
fn conjugate_scan_below_one_has_no_roots() {
    let o = lab(&["geodesics", "conjugate-scan", "--lambda", "0.5"]);
    assert_eq!(code(&o), 0);
    let rep = Report::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(rep.results["roots"], serde_json::json!([]));
    let o = lab(&["geodesic", "conjugate-scan", "--lambda", "1.5"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn flux_path_reports_the_flux() {
    let o = lab(&["flux", "path", "--map", "translate_q:0.37"]);
    assert_eq!(code(&o), 0);
    let rep = Report::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    let v: Vec<f64> = serde_json::from_value(rep.results["flux"].clone()).unwrap();
    assert!((v[0] - 0.37).abs() < 1e-9 && v[1].abs() < 1e-9, "{v:?}");
}

#[test]
fn dbar_family_writes_the_real_section() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("profile.csv");
    let o = lab(&["dbar", "family", "--s", "0.9", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let mut rd = csv::Reader::from_path(&csv).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["x", "f_s", "limit"]);
    let rows: Vec<Vec<f64>> = rd.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 101);
    // f_s(1) = s + (1 - s^2) / (s + 1) = 1
    assert!((rows[100][1] - 1.0).abs() < 1e-12);
    let o = lab(&["dbar", "family", "--s", "0.9", "--csv"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("x,f_s,limit"));
}

#[test]
fn config_errors_exit_with_two() {
    assert_eq!(code(&lab(&["flux", "no-such-experiment"])), 2);
    assert_eq!(code(&lab(&["hofer", "square-energy", "--bogus", "1"])), 2);
    assert_eq!(code(&lab(&["hofer", "square-energy", "--u", "oops"])), 2);
    assert_eq!(code(&lab(&["flux", "path", "--map", "rotate:1"])), 2);
    assert_eq!(code(&lab(&["flux", "path", "--csv"])), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_hofer-lab"))
        .args(["flux", "path"])
        .env("HOFERLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn failed_verdicts_and_numerical_failures() {
    // a tolerance below the integration error fails the verdict
    assert_eq!(code(&lab(&["flow", "full-turn", "--tol", "1e-14", "--resolution", "4"])), 1);
    // the pairing identity needs a loop
    assert_eq!(code(&lab(&["flux", "pairing", "--map", "translate_q:0.5"])), 3);
}

#[test]
fn run_from_config_file_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let mut outs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("r{i}.json"));
        let c = serde_json::json!({
            "experiment": "variation-lemma",
            "seed": 3,
            "params": { "cases": 4 },
            "json": out,
        });
        std::fs::write(&cfg, c.to_string()).unwrap();
        let o = Command::new(env!("CARGO_BIN_EXE_hofer-lab"))
            .args(["run", "--config", cfg.to_str().unwrap()])
            .env("HOFERLAB_THREADS", "1")
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(hofer_lab::deterministic_json(&read_report(&out)));
    }
    assert_eq!(outs[0], outs[1]);
    std::fs::write(&cfg, r#"{"experiment":"variation-lemma","tolerance":1}"#).unwrap();
    assert_eq!(code(&lab(&["run", "--config", cfg.to_str().unwrap()])), 2);
}
