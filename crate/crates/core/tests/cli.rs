use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const DEMO_SYNTH: &str = include_str!("../configs/novelty_synth.json");

fn oms_bench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oms-bench"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_bundle(dir: &Path) {
    fs::write(dir.join("synth.json"), DEMO_SYNTH).unwrap();
    let out = oms_bench(&["synth-gen", "--config", "synth.json", "--out", "demo.omsb"], dir);
    assert!(out.status.success(), "{}", stderr(&out));
}

fn bench_config(scenario: &str) -> String {
    format!(
        r#"{{
  "scenarios": [{scenario}],
  "monitors": [{{ "kind": "msp" }}, {{ "kind": "mahalanobis" }}, {{ "kind": "otb" }}],
  "include_perfect_ood": true,
  "output_dir": "report"
}}"#
    )
}

#[test]
fn synth_gen_then_validate() {
    let tmp = tempfile::tempdir().unwrap();
    write_bundle(tmp.path());
    let out = oms_bench(&["validate", "demo.omsb"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("novelty-demo"), "{text}");
    assert!(text.contains("3 classes"), "{text}");
}

#[test]
fn synth_gen_seed_override_changes_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    write_bundle(tmp.path());
    let out = oms_bench(
        &[
            "synth-gen",
            "--config",
            "synth.json",
            "--out",
            "other.omsb",
            "--seed",
            "99",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let a = fs::read(tmp.path().join("demo.omsb")).unwrap();
    let b = fs::read(tmp.path().join("other.omsb")).unwrap();
    assert_eq!(&a[..4], b"OMSB");
    assert_ne!(a, b);
}

#[test]
fn corrupt_bundle_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    write_bundle(tmp.path());
    let path = tmp.path().join("demo.omsb");
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&path, bytes).unwrap();
    let out = oms_bench(&["validate", "demo.omsb"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("format error"));
}

#[test]
fn missing_bundle_exits_2_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("bench.json"),
        bench_config(r#"{ "bundle": "absent.omsb" }"#),
    )
    .unwrap();
    let out = oms_bench(&["run", "--config", "bench.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("absent.omsb"));
    assert!(!tmp.path().join("report").exists());
}

#[test]
fn malformed_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bench.json"), r#"{ "scenarios": [], "monitors": [] "#).unwrap();
    let out = oms_bench(&["run", "--config", "bench.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = oms_bench(&["run", "--config", "nowhere.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_class_after_filtering_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = DEMO_SYNTH.replace("\"outlier_fraction\": 0.02", "\"outlier_fraction\": 0.98");
    let config = format!(
        r#"{{
  "scenarios": [{{ "synth": {synth} }}],
  "monitors": [{{ "kind": "otb", "filter_misclassified": true }}]
}}"#
    );
    fs::write(tmp.path().join("bench.json"), config).unwrap();
    let out = oms_bench(&["run", "--config", "bench.json"], tmp.path());
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("no training samples"));
    assert!(!tmp.path().join("oms-report").exists());
}

#[test]
fn run_then_compare_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    write_bundle(tmp.path());
    let grid = DEMO_SYNTH.trim();
    let scenarios = format!(r#"{{ "bundle": "demo.omsb" }}, {{ "synth_grid": {{ "base": {grid}, "count": 6 }} }}"#);
    fs::write(tmp.path().join("bench.json"), bench_config(&scenarios)).unwrap();
    let out = oms_bench(&["run", "--config", "bench.json"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));

    let report = tmp.path().join("report");
    for name in [
        "reports.csv",
        "reports.md",
        "perfect_ood.csv",
        "comparison_ood_recall.csv",
        "comparison_oms_precision.md",
    ] {
        assert!(report.join(name).exists(), "missing {name}");
    }
    let csv = fs::read_to_string(report.join("reports.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7 * 3 * 2);
    assert!(csv.lines().skip(1).all(|l| !l.contains("perfect_ood")));

    let out = oms_bench(
        &["compare", "--reports", "report/reports.csv", "--out", "again"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["comparison_ood_recall.csv", "comparison_oms_precision.md"] {
        assert_eq!(
            fs::read(report.join(name)).unwrap(),
            fs::read(tmp.path().join("again").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn compare_rejects_bad_csv() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("r.csv"), "not,a,report\n").unwrap();
    let out = oms_bench(&["compare", "--reports", "r.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn trick_study_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let config = include_str!("../configs/trick_study.json").replace("\"count\": 20", "\"count\": 4");
    fs::write(tmp.path().join("trick.json"), config).unwrap();
    let out = oms_bench(&["trick-study", "--config", "trick.json", "--out", "t"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let md = String::from_utf8(out.stdout).unwrap();
    assert!(md.contains("Only correct data"), "{md}");
    assert!(tmp.path().join("t/trick_study.csv").exists());
}
