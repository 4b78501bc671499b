use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vapitest::workflow::{CASES_FILE, MATCHES_FILE, OUTCOMES_FILE, PLAN_FILE, REPORT_RECORD_FILE, REPORT_TEXT_FILE};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vapitest")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn forge_into(dir: &Path, profile: &str, size: &str, faults: &str) {
    let out = bin(&["forge", "--seed", "5", "--profile", profile, "--size", size, "--faults", faults, "--out", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_table_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    forge_into(tmp.path(), "clean", "2", "0");
    let out = bin(&[
        "e2e",
        "--spec",
        s(&tmp.path().join("spec.yaml")),
        "--can-table",
        s(&tmp.path().join("absent.txt")),
        "--vv-table",
        s(&tmp.path().join("vv_table.txt")),
        "--out",
        s(&tmp.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.txt"));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn unknown_flag_value_is_a_usage_error() {
    let out = bin(&["forge", "--seed", "1", "--profile", "bogus", "--size", "2", "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_on_empty_matches_writes_an_empty_plan() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join(MATCHES_FILE), r#"{"results": [], "skipped": []}"#).unwrap();
    let out = bin(&["gen", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let plan = fs::read_to_string(tmp.path().join(PLAN_FILE)).unwrap();
    let parsed = vapitest::testgen::parse_test_plan(&plan).unwrap();
    assert!(parsed.cases.is_empty());
}

#[test]
fn stage_error_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["gen", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

fn stages(corpus: &Path, run: &Path) {
    let spec = corpus.join("spec.yaml");
    let can = corpus.join("can_table.txt");
    let vv = corpus.join("vv_table.txt");
    let steps: [Vec<&str>; 4] = [
        vec!["ingest", "--spec", s(&spec)],
        vec!["match", "--can-table", s(&can), "--vv-table", s(&vv)],
        vec!["gen"],
        vec!["run"],
    ];
    for mut step in steps {
        step.extend(["--out", s(run)]);
        let out = bin(&step);
        assert!(out.status.success(), "{step:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn stages_compose_to_the_same_artifacts_as_e2e() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    forge_into(&corpus, "mixed", "10", "2");
    let e2e = tmp.path().join("e2e");
    let out = bin(&[
        "e2e",
        "--spec",
        s(&corpus.join("spec.yaml")),
        "--can-table",
        s(&corpus.join("can_table.txt")),
        "--vv-table",
        s(&corpus.join("vv_table.txt")),
        "--out",
        s(&e2e),
    ]);
    // Faults are seeded, so the run reports failures.
    assert_eq!(out.status.code(), Some(1));
    let staged = tmp.path().join("staged");
    stages(&corpus, &staged);
    for f in [MATCHES_FILE, CASES_FILE, PLAN_FILE, OUTCOMES_FILE] {
        assert_eq!(fs::read(e2e.join(f)).unwrap(), fs::read(staged.join(f)).unwrap(), "{f} differs");
    }
    let report = bin(&["report", "--out", s(&staged)]);
    assert_eq!(report.status.code(), Some(1));
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.contains("FAIL"));
}

#[test]
fn report_rerender_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    forge_into(&corpus, "clean", "4", "0");
    let run = tmp.path().join("run");
    let out = bin(&[
        "e2e",
        "--spec",
        s(&corpus.join("spec.yaml")),
        "--can-table",
        s(&corpus.join("can_table.txt")),
        "--vv-table",
        s(&corpus.join("vv_table.txt")),
        "--format",
        "record",
        "--out",
        s(&run),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let record = fs::read(run.join(REPORT_RECORD_FILE)).unwrap();
    let text = fs::read(run.join(REPORT_TEXT_FILE)).unwrap();
    assert_eq!(out.stdout, record);

    let again = bin(&["report", "--out", s(&run), "--format", "record"]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(again.stdout, record);
    assert_eq!(fs::read(run.join(REPORT_RECORD_FILE)).unwrap(), record);
    assert_eq!(fs::read(run.join(REPORT_TEXT_FILE)).unwrap(), text);
}

#[test]
fn report_with_manifest_scores_precision_and_recall() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    forge_into(&corpus, "clean", "3", "0");
    let run = tmp.path().join("run");
    stages(&corpus, &run);
    let out = bin(&["report", "--out", s(&run), "--manifest", s(&corpus.join("manifest.rec")), "--format", "record"]);
    assert_eq!(out.status.code(), Some(0));
    let report = vapitest::report::parse_report(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(report.metrics.precision, Some(1.0));
    assert_eq!(report.metrics.recall, Some(1.0));
}
