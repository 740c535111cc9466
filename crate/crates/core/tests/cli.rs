use std::fs;
use std::path::Path;

use pwa_mrac::cli::{main_with, EXIT_CERTIFICATE, EXIT_INPUT, EXIT_MONITOR, EXIT_OK};
use pwa_mrac::scenario::{paper_example, Scenario};

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("pwa-mrac").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_scenario(dir: &Path, sc: &Scenario) -> String {
    let path = dir.join("scenario.json");
    sc.save(&path).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn example_certifies() {
    let (code, out, _) = cli(&["paper-example", "certify"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("verdict: PASS"));
    assert!(out.contains("sqrt(mu) = 7.089268"));
}

#[test]
fn failing_condition_exits_with_certificate_code() {
    let (code, out, _) = cli(&["paper-example", "certify", "--set", "h=0.3"]);
    assert_eq!(code, EXIT_CERTIFICATE);
    assert!(out.contains("[FAIL] h < alpha_m/2"));
    let (code, _, err) = cli(&["paper-example", "simulate", "--set", "h=0.3", "--t-end", "1"]);
    assert_eq!(code, EXIT_CERTIFICATE);
    assert!(err.contains("--force"));
}

#[test]
fn bad_input_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{\"name\": \"x\",").unwrap();
    let (code, _, err) = cli(&["certify", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_INPUT);
    assert!(err.contains("error"));
    assert_eq!(cli(&["certify", "/definitely/missing.json"]).0, EXIT_INPUT);
    assert_eq!(cli(&["paper-example", "certify", "--set", "nonsense=1"]).0, EXIT_INPUT);
    assert_eq!(cli(&["frobnicate"]).0, EXIT_INPUT);
}

#[test]
fn scenario_file_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), &paper_example());
    let back = Scenario::load(Path::new(&path)).unwrap();
    assert_eq!(back, paper_example());
    let (code, printed, _) = cli(&["paper-example", "scenario"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(Scenario::from_json(&printed).unwrap(), paper_example());
    let (code, out, _) = cli(&["certify", &path, "--json"]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v.is_object());
}

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let (code, out, _) = cli(&[
        "paper-example",
        "simulate",
        "--t-end",
        "30",
        "--gains",
        "--oracle-v",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{out}");
    for f in ["trajectory.csv", "events.json", "summary.json", "certificate.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t,x0,x1,x2,x3,xm0"));
    assert!(header.contains(",V,V_theta"));
    assert!(header.contains("Kx1_0_0"));
    assert_eq!(csv.lines().count(), 1 + 3001);
    let events: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("events.json")).unwrap()).unwrap();
    let events = events.as_array().unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0]["from"], 1);
}

#[test]
fn rerun_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let (code, _, _) = cli(&[
            "paper-example",
            "simulate",
            "--t-end",
            "30",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
        texts.push(fs::read(out_dir.join("trajectory.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn sweep_reports_each_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), &paper_example());
    let table = dir.path().join("sweep.csv");
    let (code, out, _) = cli(&[
        "sweep",
        &path,
        "--grid",
        "h=0.12,0.24,0.3",
        "--t-end",
        "30",
        "--out",
        table.to_str().unwrap(),
    ]);
    // h = 0.3 is rejected by the certificate; certified rows pass.
    assert_eq!(code, EXIT_OK, "{out}");
    let csv = fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("h,certified"));
    assert!(rows[1].ends_with("\"ok\"") && rows[2].ends_with("\"ok\""));
    assert!(rows[3].contains("certificate-fail"));
    assert_eq!(csv, fs::read_to_string(&table).unwrap());
}

#[test]
fn sweep_flags_monitor_failures() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), &paper_example());
    // h = 0.05 certifies but its dwell bound far exceeds the input's switch spacing.
    let (code, out, _) = cli(&["sweep", &path, "--grid", "h=0.05", "--t-end", "30"]);
    assert_eq!(code, EXIT_MONITOR, "{out}");
    assert!(out.contains("monitor-fail"));
}

#[test]
fn robust_example_certifies_only_for_small_disturbances() {
    let (code, out, _) = cli(&["paper-example", "certify", "--robust"]);
    assert_eq!(code, EXIT_OK, "{out}");
    let (code, out, _) = cli(&["paper-example", "certify", "--robust", "--d-bar", "0.05"]);
    assert_eq!(code, EXIT_CERTIFICATE);
    assert!(out.contains("[FAIL] c < (g/h)^2"));
    let (code, text, _) = cli(&["paper-example", "scenario", "--robust", "--set", "seed=7"]);
    assert_eq!(code, EXIT_OK);
    let sc = Scenario::from_json(&text).unwrap();
    assert_eq!(sc, pwa_mrac::scenario::robust_example(7, 0.002));
}
