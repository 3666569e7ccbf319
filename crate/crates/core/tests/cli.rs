mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::synthetic_set;
use smallnet::dataio::{serialize_idx_images, serialize_idx_labels};
use smallnet::report::ComparisonReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smallnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn smallnet")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        for (name, n, seed) in [("train", 300, 1), ("test", 40, 2)] {
            let set = synthetic_set(n, seed);
            std::fs::write(dir.path().join(format!("{name}-images")), serialize_idx_images(set.images())).unwrap();
            std::fs::write(dir.path().join(format!("{name}-labels")), serialize_idx_labels(set.labels())).unwrap();
        }
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, seed: &str) -> Output {
        run(&[
            "train",
            "--train-images",
            s(&self.path("train-images")),
            "--train-labels",
            s(&self.path("train-labels")),
            "--out",
            s(&self.path(out)),
            "--epochs",
            "1",
            "--seed",
            seed,
            "--holdout",
            "50",
        ])
    }

    fn test_args(&self) -> Vec<String> {
        ["--test-images", s(&self.path("test-images")), "--test-labels", s(&self.path("test-labels"))]
            .map(String::from)
            .to_vec()
    }
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_is_deterministic_and_writes_history() {
    let f = Fixture::new();
    ok(&f.train("a.snw", "7"));
    ok(&f.train("b.snw", "7"));
    assert_eq!(std::fs::read(f.path("a.snw")).unwrap(), std::fs::read(f.path("b.snw")).unwrap());
    let hist = std::fs::read_to_string(f.path("a.snw.history.csv")).unwrap();
    let lines: Vec<&str> = hist.lines().collect();
    assert_eq!(lines[0], "epoch,loss,val_accuracy");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn train_failure_leaves_no_output() {
    let f = Fixture::new();
    let out = f.path("w.snw");
    let o = run(&[
        "train",
        "--train-images",
        s(&f.path("train-images")),
        "--train-labels",
        s(&f.path("missing-labels")),
        "--out",
        s(&out),
    ]);
    assert!(!o.status.success());
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    let left: Vec<_> = std::fs::read_dir(f.dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(left.iter().all(|n| !n.to_string_lossy().starts_with("w.snw")), "{left:?}");
}

#[test]
fn train_default_recipe_is_in_help() {
    let o = run(&["train", "--help"]);
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("--epochs <EPOCHS>") && text.contains("[default: 8]"));
    assert!(text.contains("[default: 64]"));
}

#[test]
fn evaluate_engines_agree_and_reject_bad_flags() {
    let f = Fixture::new();
    ok(&f.train("w.snw", "1"));
    let mut reports = Vec::new();
    for engine in ["fixed", "pipeline"] {
        let out = f.path(&format!("{engine}.json"));
        let mut args = vec!["evaluate".to_string(), "--weights".into(), s(&f.path("w.snw")).into()];
        args.extend(f.test_args());
        args.extend(["--engine", engine, "--limit", "23", "--out", s(&out)].map(String::from));
        ok(&bin().args(&args).output().unwrap());
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
        assert_eq!(v["images"], 23);
        reports.push((v["accuracy"].clone(), v["confusion"].clone(), v["predictions"].clone()));
    }
    assert_eq!(reports[0], reports[1]);

    let csv = f.path("conf.csv");
    let mut args = vec!["evaluate".to_string(), "--weights".into(), s(&f.path("w.snw")).into()];
    args.extend(f.test_args());
    args.extend(["--engine", "float", "--out", s(&csv)].map(String::from));
    ok(&bin().args(&args).output().unwrap());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 11);
    let total: u64 = text.lines().skip(1).flat_map(|l| l.split(',').skip(1)).map(|c| c.parse::<u64>().unwrap()).sum();
    assert_eq!(total, 40);

    for bad in [vec!["--limit", "0"], vec!["--engine", "gpu"]] {
        let mut args = vec!["evaluate".to_string(), "--weights".into(), s(&f.path("w.snw")).into()];
        args.extend(f.test_args());
        args.extend(bad.iter().map(|a| a.to_string()));
        let o = bin().args(&args).output().unwrap();
        assert!(!o.status.success(), "accepted {bad:?}");
    }
}

#[test]
fn compare_report_is_complete() {
    let f = Fixture::new();
    ok(&f.train("w.snw", "2"));
    let out = f.path("cmp.json");
    let mut args = vec!["compare".to_string(), "--weights".into(), s(&f.path("w.snw")).into()];
    args.extend(f.test_args());
    args.extend(["--out", s(&out)].map(String::from));
    ok(&bin().args(&args).output().unwrap());
    let r: ComparisonReport = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(r.images, 40);
    assert_eq!(r.agreement_rate, 1.0);
    for e in [&r.float, &r.fixed, &r.pipeline] {
        assert_eq!(e.confusion.iter().flatten().sum::<u64>(), 40);
        assert!((0.0..=1.0).contains(&e.accuracy));
    }
    assert_eq!(r.mean_cycles, 4695.0);
    assert!((r.fixed_minus_float_pp - 100.0 * (r.fixed_accuracy - r.float_accuracy)).abs() < 1e-12);
}

#[test]
fn emit_rom_prints_counts_and_verifies() {
    let f = Fixture::new();
    ok(&f.train("w.snw", "3"));
    let rom = f.path("rom");
    let o = run(&["emit-rom", "--weights", s(&f.path("w.snw")), "--out", s(&rom), "--verify"]);
    ok(&o);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "5 5 490 10");
    let first = std::fs::read(rom.join("dense_w.mem")).unwrap();
    ok(&run(&["emit-rom", "--weights", s(&f.path("w.snw")), "--out", s(&rom)]));
    assert_eq!(std::fs::read(rom.join("dense_w.mem")).unwrap(), first);

    let o = run(&["emit-rom", "--weights", s(&f.path("nope.snw")), "--out", s(&f.path("rom2"))]);
    assert!(!o.status.success());
}

#[test]
fn simulate_dumps_one_line_per_cycle() {
    let f = Fixture::new();
    ok(&f.train("w.snw", "4"));
    let trace = f.path("trace.txt");
    let mut args = vec!["simulate".to_string(), "--weights".into(), s(&f.path("w.snw")).into()];
    args.extend(f.test_args());
    args.extend(["--index", "3", "--out", s(&trace)].map(String::from));
    let o = bin().args(&args).output().unwrap();
    ok(&o);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["cycles"]["cycles_total"], 4695);
    assert_eq!(v["done_flag"], true);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().count(), 4695);
    assert_eq!(text.lines().last(), Some("4694,DONE,dense"));
}
