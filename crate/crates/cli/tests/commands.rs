//! End-to-end runs of the `clda` binary on a tiny configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clda_cli::checkpoint;
use clda_cli::config::RunConfig;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clda"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "clda {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.data.n_source = 128;
    c.data.n_target = 128;
    c.data.n_eval = 64;
    c.model.width = 8;
    c.model.mlp_width = 16;
    c.model.teacher_depth = 4;
    c.model.student_depth = 2;
    c.teacher.total_steps = 20;
    c.teacher.eval_every = 10;
    c.clda.total_steps = 30;
    c.clda.stage2_start = 10;
    c.clda.stage3_start = 15;
    c.clda.eval_every = 10;
    c.clda.lsr_threshold = 0.5;
    c.analysis.eval_examples = 64;
    c.analysis.cka_examples = 64;
    c
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("config.json");
        fs::write(&config, serde_json::to_string_pretty(&tiny_config()).unwrap()).unwrap();
        Self { _dir: dir, root, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn cfg(&self) -> String {
        self.config.display().to_string()
    }

    fn gen_data(&self, name: &str) {
        ok(&["gen-data", "--config", &self.cfg(), "--out", &self.s(name)]);
    }

    fn teacher(&self) {
        self.gen_data("data");
        ok(&["train-teacher", "--config", &self.cfg(), "--data", &self.s("data"), "--out", &self.s("teacher")]);
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_schema(schema: &str, instance: &Value) {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(schema);
    let schema = read_json(&root);
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let w = Workspace::new();
    w.gen_data("a");
    w.gen_data("b");
    for f in ["source.csv", "target_train.csv", "target_eval.csv", "spec.json"] {
        assert_eq!(fs::read(w.path("a").join(f)).unwrap(), fs::read(w.path("b").join(f)).unwrap(), "{f}");
    }
    let rows = fs::read_to_string(w.path("a").join("source.csv")).unwrap().lines().count();
    assert_eq!(rows, 128 + 1);
}

#[test]
fn gen_data_records_zero_shift() {
    let w = Workspace::new();
    ok(&["gen-data", "--config", &w.cfg(), "--shift", "0", "--out", &w.s("d")]);
    assert_eq!(read_json(&w.path("d").join("spec.json"))["shift"], 0.0);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let w = Workspace::new();
    w.teacher();
    let first = w.path("teacher/seed-0/teacher.ckpt");
    let model = checkpoint::load(&first).unwrap();
    let second = w.path("again.ckpt");
    checkpoint::save(&second, &model).unwrap();
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn analyses_have_expected_shape_and_validate() {
    let w = Workspace::new();
    w.teacher();
    let ckpt = w.s("teacher/seed-0/teacher.ckpt");

    ok(&["analyze-lsr", "--config", &w.cfg(), "--model", &ckpt, "--data", &w.s("data"), "--out", &w.s("lsr")]);
    let lsr = read_json(&w.path("lsr/lsr.json"));
    assert_eq!(lsr["report"]["entries"].as_array().unwrap().len(), 4);
    assert_schema("lsr.schema.json", &lsr);

    ok(&["analyze-pvr", "--a", &ckpt, "--b", &ckpt, "--out", &w.s("pvr")]);
    let pvr = read_json(&w.path("pvr/pvr.json"));
    for e in pvr["report"]["entries"].as_array().unwrap() {
        assert_eq!(e["attn"], 0.0);
        assert_eq!(e["mlp"], 0.0);
    }
    assert_schema("pvr.schema.json", &pvr);
    let svg = fs::read_to_string(w.path("pvr/pvr.svg")).unwrap();
    assert!(svg.contains("class=\"cell\""));
    let cells: Vec<f64> = svg
        .split("data-value=\"")
        .skip(1)
        .map(|s| s[..s.find('"').unwrap()].parse().unwrap())
        .collect();
    assert_eq!(cells.len(), 8);
    assert!(cells.iter().all(|&v| v == 0.0), "{cells:?}");

    ok(&["analyze-cka", "--config", &w.cfg(), "--a", &ckpt, "--b", &ckpt, "--data", &w.s("data"), "--out", &w.s("cka")]);
    let cka = read_json(&w.path("cka/cka.json"));
    let values = cka["heatmap"]["values"].as_array().unwrap();
    let n = cka["heatmap"]["row_labels"].as_array().unwrap().len();
    assert_eq!(values.len(), n * n);
    for i in 0..n {
        assert!((values[i * n + i].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }
    assert_schema("cka.schema.json", &cka);
    let svg = fs::read_to_string(w.path("cka/cka.svg")).unwrap();
    assert!(svg.contains("class=\"row-label\"") && svg.contains("class=\"col-label\""));
}

#[test]
fn clda_outputs_validate_and_rerun_identically() {
    let w = Workspace::new();
    w.teacher();
    let clda = |out: &str| {
        ok(&[
            "train-clda",
            "--config",
            &w.cfg(),
            "--data",
            &w.s("data"),
            "--teacher",
            &w.s("teacher"),
            "--out",
            &w.s(out),
        ])
    };
    clda("r1");
    clda("r2");
    let m1 = fs::read(w.path("r1/seed-0/metrics.jsonl")).unwrap();
    assert_eq!(m1, fs::read(w.path("r2/seed-0/metrics.jsonl")).unwrap());
    assert_eq!(
        fs::read(w.path("r1/seed-0/student.ckpt")).unwrap(),
        fs::read(w.path("r2/seed-0/student.ckpt")).unwrap()
    );

    let records = jsonl(&w.path("r1/seed-0/metrics.jsonl"));
    assert_eq!(records.len(), 3);
    for r in &records {
        assert_schema("metrics_record.schema.json", r);
    }
    assert_schema("mapping.schema.json", &read_json(&w.path("r1/seed-0/mapping.json")));
    assert_schema("run.schema.json", &read_json(&w.path("r1/seed-0/run.json")));
    for r in jsonl(&w.path("teacher/seed-0/metrics.jsonl")) {
        assert_schema("metrics_record.schema.json", &r);
    }

    ok(&["report", "--out", &w.s("rep"), "--config", &w.cfg(), &w.s("r1/seed-0/metrics.jsonl")]);
    let rep = read_json(&w.path("rep/report.json"));
    assert_schema("report.schema.json", &rep);
    let agg = rep["aggregate"].as_array().unwrap();
    assert_eq!(agg.len(), records.len());
    for (a, r) in agg.iter().zip(&records) {
        assert_eq!(a["step"], r["step"]);
        assert_eq!(a["teacher_target_acc"]["mean"], r["teacher_target_acc"]);
        assert_eq!(a["student_target_acc"]["mean"], r["student_target_acc"]);
        assert_eq!(a["mean_q"]["mean"], r["mean_q"]);
        assert_eq!(a["mean_q"]["std"], 0.0);
    }
    assert!(fs::read_to_string(w.path("rep/curves.svg")).unwrap().starts_with("<svg"));

    let mismatch = run(&[
        "report",
        "--out",
        &w.s("bad"),
        &w.s("r1/seed-0/metrics.jsonl"),
        &w.s("teacher/seed-0/metrics.jsonl"),
    ]);
    assert_eq!(mismatch.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("error"));
}

#[test]
fn multi_seed_jobs_match_sequential() {
    let w = Workspace::new();
    w.gen_data("data");
    let teach = |out: &str, jobs: &str| {
        ok(&[
            "train-teacher",
            "--config",
            &w.cfg(),
            "--data",
            &w.s("data"),
            "--seeds",
            "1,2",
            "--jobs",
            jobs,
            "--out",
            &w.s(out),
        ])
    };
    teach("seq", "1");
    teach("par", "2");
    for s in [1, 2] {
        let f = format!("seed-{s}/teacher.ckpt");
        assert_eq!(fs::read(w.path("seq").join(&f)).unwrap(), fs::read(w.path("par").join(&f)).unwrap());
    }
    assert_ne!(
        fs::read(w.path("seq/seed-1/teacher.ckpt")).unwrap(),
        fs::read(w.path("seq/seed-2/teacher.ckpt")).unwrap()
    );
}

#[test]
fn exit_codes_follow_error_class() {
    let w = Workspace::new();
    fs::write(w.path("unknown.json"), r#"{"bogus": 1}"#).unwrap();
    let out = run(&["gen-data", "--config", &w.s("unknown.json"), "--out", &w.s("d")]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["gen-data", "--config", &w.cfg(), "--shift", "1.5", "--out", &w.s("d")]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["train-teacher", "--config", &w.cfg(), "--data", &w.s("missing"), "--out", &w.s("t")]);
    assert_eq!(out.status.code(), Some(3));

    w.gen_data("data");
    fs::write(w.path("data/source.csv"), "t0,t1,label\n1,x,0\n").unwrap();
    let out = run(&["train-teacher", "--config", &w.cfg(), "--data", &w.s("data"), "--out", &w.s("t")]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));

    w.gen_data("data2");
    let out = run(&["train-teacher", "--config", &w.cfg(), "--data", &w.s("data2"), "--lr", "1e30", "--out", &w.s("t")]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn mapping_none_matches_train_kd() {
    let w = Workspace::new();
    w.teacher();
    let common = ["--config", &w.cfg(), "--data", &w.s("data"), "--teacher", &w.s("teacher")];
    ok(&[&["train-kd"][..], &common, &["--out", &w.s("kd")]].concat());
    ok(&[&["train-clda", "--mapping", "none"][..], &common, &["--out", &w.s("none")]].concat());
    for f in ["student.ckpt", "metrics.jsonl"] {
        let p = format!("seed-0/{f}");
        assert_eq!(fs::read(w.path("kd").join(&p)).unwrap(), fs::read(w.path("none").join(&p)).unwrap(), "{f}");
    }
    assert_eq!(
        fs::read(w.path("teacher/seed-0/teacher.ckpt")).unwrap(),
        fs::read(w.path("none/seed-0/teacher.ckpt")).unwrap()
    );
}
