use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ferryline"));
    c.env("FERRYLINE_LOG", "off");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.json");
    fs::write(&p, body).unwrap();
    p
}

fn report_jsons(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("report_") && n.ends_with(".json"))
        .collect();
    v.sort();
    v
}

#[test]
fn run_on_toy_fixture() {
    let out = tempfile::tempdir().unwrap();
    let toy = fixture("toy_trace.csv");
    let cfg = write_config(
        out.path(),
        &format!(
            r#"{{"input": {{"csv": {:?}}}, "days": [1]}}"#,
            toy.to_str().unwrap()
        ),
    );
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.path().join("r").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = out.path().join("r");
    assert_eq!(report_jsons(&r).len(), 5);
    for f in [
        "world.json",
        "comparison.csv",
        "report_ensemble_1d_hourly.csv",
        "report_low_1d_classes.csv",
    ] {
        assert!(r.join(f).exists(), "{f}");
    }
    let text = stdout(&o);
    assert!(text.contains("best:"), "{text}");

    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(r.join("report_mean_1d.json")).unwrap()).unwrap();
    assert_eq!(doc["config"]["selector"], "mean");
    assert_eq!(doc["config"]["period"], 1800);
    assert_eq!(doc["world"]["scmc"], "wtw3sjq");
    assert_eq!(doc["blocks"].as_array().unwrap().len(), 5);
}

#[test]
fn default_days_give_25_reports() {
    let out = tempfile::tempdir().unwrap();
    let toy = fixture("toy_trace.csv");
    let cfg = write_config(
        out.path(),
        &format!(r#"{{"input": {{"csv": {:?}}}}}"#, toy.to_str().unwrap()),
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names = report_jsons(&out.path().join("out"));
    assert_eq!(names.len(), 25);
    assert!(names.contains(&"report_median_25d.json".to_string()));
}

#[test]
fn validate_does_not_simulate() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_config(
        out.path(),
        r#"{"input": {"csv": "missing.csv"}, "days": [1, 2]}"#,
    );
    let o = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("config ok"));
    assert!(stdout(&o).contains("5 selectors x 2 day spans"));
    assert!(!out.path().join("out").exists());
}

#[test]
fn synth_prints_segment_boundaries_and_honours_seed() {
    let cfg = fixture("piecewise_experiment.json");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let args = |dir: &Path, seed: Option<&str>| {
        let mut v = vec![
            "synth".to_string(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
        ];
        v.extend(["--out".into(), dir.to_str().unwrap().into()]);
        if let Some(s) = seed {
            v.extend(["--seed".into(), s.into()]);
        }
        v
    };
    let oa = bin().args(args(a.path(), None)).output().unwrap();
    let ob = bin().args(args(b.path(), Some("99"))).output().unwrap();
    let oc = bin().args(args(c.path(), Some("99"))).output().unwrap();
    assert!(oa.status.success() && ob.status.success() && oc.status.success());
    let text = stdout(&oa);
    let line = text
        .lines()
        .find(|l| l.starts_with("segment boundaries:"))
        .unwrap();
    assert_eq!(line.split_whitespace().count(), 2 + 4);

    let read = |d: &Path| fs::read(d.join("synthetic_trace.csv")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
    assert_eq!(read(b.path()), read(c.path()));
}

#[test]
fn zero_horizon_exits_1() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_config(
        out.path(),
        r#"{"input": {"synthetic": {"segments": [{"duration_minutes": 0}],
            "blocks": [{"regimes": [{"rate_per_minute": 1, "pass_probability": 1,
            "delay": {"kind": "fixed", "minutes": 5}}]}]}}}"#,
    );
    for cmd in ["synth", "run", "validate"] {
        let o = run(&[cmd, "--config", cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{cmd}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
    }
}

#[test]
fn missing_trace_exits_2() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_config(out.path(), r#"{"input": {"csv": "nope.csv"}, "days": [1]}"#);
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_field_exits_1() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_config(out.path(), r#"{"input": {"csv": "t.csv"}, "dayz": [1]}"#);
    let o = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
