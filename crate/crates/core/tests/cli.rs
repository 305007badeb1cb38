use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use uilab::trainer::{self, RunRecord};

fn uilab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uilab"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = uilab(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(root: &Path, rel: &str) -> String {
    root.join(rel).display().to_string()
}

fn prepare(root: &Path) {
    ok(&[
        "scenario",
        "gen",
        "--classes",
        "4",
        "--domains",
        "3",
        "--tasks",
        "5",
        "--seed",
        "3",
        "--out",
        &p(root, "s.uil"),
    ]);
    ok(&[
        "data",
        "synth",
        "--scenario",
        &p(root, "s.uil"),
        "--dim",
        "6",
        "--profile",
        "geometric(30,0.5)",
        "--seed",
        "3",
        "--out",
        &p(root, "data"),
    ]);
}

#[test]
fn train_eval_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    prepare(root);
    ok(&[
        "train",
        "--data",
        &p(root, "data"),
        "--epochs",
        "3",
        "--method",
        "ablation(mobj=true,dir=false,mag=true)",
        "--gamma",
        "0.1",
        "--seed",
        "5",
        "--out",
        &p(root, "run"),
    ]);
    for t in 0..5 {
        assert!(root.join(format!("run/checkpoints/task_{t}.head")).exists());
    }
    assert!(root.join("run/scenario.uil").exists());

    let (record, meta) = RunRecord::load(&root.join("run")).unwrap();
    assert_eq!(record.config.seed, 5);
    assert_eq!(record.config.epochs_per_task, 3);
    assert_eq!(record.config.recal.gamma, 0.1);
    assert_eq!(trainer::config_from_meta(&meta).unwrap(), record.config);
    assert!(meta.iter().any(|(k, v)| k == "data" && v.ends_with("data")));

    ok(&[
        "eval",
        "--run",
        &p(root, "run"),
        "--data",
        &p(root, "data"),
        "-o",
        &p(root, "rep"),
    ]);
    let report = fs::read_to_string(root.join("rep/report.csv")).unwrap();
    assert!(report.starts_with("# forgetting:"));
    assert!(report.contains("\nmetric,task_index,value\n"));
    assert_eq!(report.lines().filter(|l| l.starts_with("avg_acc,")).count(), 5);

    let out = uilab(&[
        "analyze",
        "entropy",
        "--run",
        &p(root, "run"),
        "--data",
        &p(root, "data"),
    ]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    // mean/variance comment, header, 27 intervals
    assert_eq!(csv.lines().count(), 29);
    let ratios: f64 = csv
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((ratios - 1.0).abs() < 1e-12);

    ok(&[
        "analyze",
        "classes",
        "--run",
        &p(root, "run"),
        "--data",
        &p(root, "data"),
        "--task",
        "2",
        "--out",
        &p(root, "classes.csv"),
    ]);
    let classes = fs::read_to_string(root.join("classes.csv")).unwrap();
    assert!(classes.starts_with("# spearman="));
    assert!(classes.contains("class_id,n_train,mean_mag,final_acc"));
}

#[test]
fn ingest_round_trips_synthetic_data() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    prepare(root);
    ok(&[
        "data",
        "ingest",
        "--scenario",
        &p(root, "s.uil"),
        "--embeddings",
        &p(root, "data/embeddings.txt"),
        "--out",
        &p(root, "again"),
    ]);
    for f in ["embeddings.txt", "scenario.uil"] {
        assert_eq!(
            fs::read(root.join("data").join(f)).unwrap(),
            fs::read(root.join("again").join(f)).unwrap()
        );
    }
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let infeasible = uilab(&[
        "scenario",
        "gen",
        "--classes",
        "2",
        "--domains",
        "2",
        "--tasks",
        "5",
        "--out",
        &p(root, "x.uil"),
    ]);
    assert_eq!(infeasible.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&infeasible.stderr).contains("exceed"));

    prepare(root);
    let bad_cfg = uilab(&[
        "train",
        "--data",
        &p(root, "data"),
        "--lr",
        "-1",
        "--out",
        &p(root, "run"),
    ]);
    assert_eq!(bad_cfg.status.code(), Some(2));
    let bad_method = uilab(&[
        "train",
        "--data",
        &p(root, "data"),
        "--method",
        "ablation(mobj=false,dir=true,mag=false)",
        "--out",
        &p(root, "run"),
    ]);
    assert_eq!(bad_method.status.code(), Some(2));
    let bad_flag = uilab(&["data", "synth", "--scenario", &p(root, "s.uil"), "--profile", "zipf(3)"]);
    assert_eq!(bad_flag.status.code(), Some(2));

    fs::write(root.join("bad.txt"), "0 0 train 2 1.0\n").unwrap();
    let bad_rows = uilab(&[
        "data",
        "ingest",
        "--scenario",
        &p(root, "s.uil"),
        "--embeddings",
        &p(root, "bad.txt"),
        "--out",
        &p(root, "d2"),
    ]);
    assert_eq!(bad_rows.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_rows.stderr).contains("line 1"));
}

const PLAN: &str = "[plan]\nseeds = 0,1\n\n[scenario]\nclasses = 3\ndomains = 2\ntasks = 3\n\n[data]\ndim = 4\nprofile = constant(12)\n\n[train]\nepochs = 2\n\n[method a]\nmethod = baseline\n\n[method b]\nmethod = mico\n";

#[test]
fn plan_resume_reproduces_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("p.plan"), PLAN).unwrap();
    ok(&["plan", "run", &p(root, "p.plan"), "--out", &p(root, "out")]);
    let first = fs::read(root.join("out/summary.csv")).unwrap();
    let report = fs::read(root.join("out/b/seed_1/report.csv")).unwrap();
    ok(&["plan", "run", &p(root, "p.plan"), "--out", &p(root, "out"), "--resume"]);
    assert_eq!(fs::read(root.join("out/summary.csv")).unwrap(), first);
    assert_eq!(fs::read(root.join("out/b/seed_1/report.csv")).unwrap(), report);

    // a fresh, non-resumed run gives the same table as well
    ok(&["plan", "run", &p(root, "p.plan"), "--out", &p(root, "fresh")]);
    assert_eq!(fs::read(root.join("fresh/summary.csv")).unwrap(), first);
}

#[test]
fn plan_partial_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("p.plan"), PLAN).unwrap();
    fs::create_dir_all(root.join("out")).unwrap();
    // a file where method b's directory should go makes only its cells fail
    fs::write(root.join("out/b"), "").unwrap();
    let out = uilab(&["plan", "run", &p(root, "p.plan"), "--out", &p(root, "out")]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cell b/seed_0 failed"));
    let summary = fs::read_to_string(root.join("out/summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert!(rows[0].starts_with("a,2,0,"));
    assert!(rows[1].starts_with("b,0,2,"));
    assert!(root.join("out/a/seed_1/DONE").exists());
}

#[test]
fn plan_validation_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("p.plan"), "[plan]\nseeds = 0\n[train]\nlr = fast\n").unwrap();
    let out = uilab(&["plan", "run", &p(tmp.path(), "p.plan")]);
    assert_eq!(out.status.code(), Some(2));
}
