use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lyaq(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lyaq")).args(args).current_dir(dir).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn feasibility_reports_margins() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&lyaq(&["feasibility", "--profile", "reference"], dir.path()));
    assert!(!text.trim().is_empty());
}

#[test]
fn dpp_trace_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        ok(&lyaq(&["dpp", "--steps", "50", "--seed", "4", "--Vprime", "1e10", "--out", name], dir.path()));
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(a.iter().filter(|b| **b == b'\n').count(), 51);
    ok(&lyaq(&["plot", "--kind", "queue", "--input", "a.csv", "--out", "q.svg"], dir.path()));
    assert!(fs::read_to_string(dir.path().join("q.svg")).unwrap().contains("<polyline"));
}

#[test]
fn sweep_resumes_without_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let args = |grid| vec!["sweep", "--steps", "30", "--grid", grid, "--seeds", "2", "--out", "s.csv"];
    ok(&lyaq(&args("1e9"), dir.path()));
    ok(&lyaq(&args("1e9,1e10"), dir.path()));
    let text = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(dir.path().join("s.means.csv").exists());
}

#[test]
fn plot_of_empty_csv_renders() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("e.csv"), "step,reward_sum,avg_penalty,avg_queue\n").unwrap();
    ok(&lyaq(&["plot", "--kind", "learning", "--input", "e.csv", "--out", "e.svg"], dir.path()));
    assert!(fs::read_to_string(dir.path().join("e.svg")).unwrap().contains("<svg"));
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "step,reward_sum\n1,2\n3,oops\n").unwrap();
    let out = lyaq(&["plot", "--kind", "learning", "--input", "bad.csv", "--out", "x.svg"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn sac_needs_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = lyaq(&["simulate", "--controller", "sac", "--steps", "10"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
}

#[test]
fn train_then_evaluate_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lyaq(&["train", "--steps", "2000", "--V", "10", "--out", "run"], dir.path()));
    for f in ["learning_curve.csv", "checkpoint.json"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let text = ok(&lyaq(
        &["eval", "--controller", "sac", "--checkpoint", "run/checkpoint.json", "--episodes", "2", "--out", "e.csv"],
        dir.path(),
    ));
    assert_eq!(text.lines().filter(|l| l.contains("avg_queue")).count(), 2);
    assert_eq!(fs::read_to_string(dir.path().join("e.csv")).unwrap().lines().count(), 3);
}
