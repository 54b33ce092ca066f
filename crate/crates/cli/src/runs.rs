//! Commands as library functions. Each training command runs every
//! configured seed and writes `seed-<s>/` under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use clda_core::analysis::{accuracy, classify_layers, cross_model_cka, layer_saliency, pvr_report, LayerPartition, LsrReport, PvrReport};
use clda_core::analysis::CkaHeatmap;
use clda_core::data::{gen_synthetic_domains, LabeledBatch, LabeledSplit};
use clda_core::model::TransformerModel;
use clda_core::rng::SeededRng;
use clda_core::trainer::{self, BaselineOutcome, CldaOutcome, KdOutcome, MappingState, NoObserver, StepEvent};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::csv_io::{self, Dataset};
use crate::error::{CliError, Result};
use crate::report::{self, RunStamp, RUN_FILE};
use crate::svg;

pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const STUDENT_CKPT: &str = "student.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const MAPPING_FILE: &str = "mapping.json";
const STUDENT_INIT_STREAM: u64 = 21;

/// `CLDA_DETERMINISTIC=1`. Kernels here are sequential, so every run is
/// already bit-reproducible; the flag is recorded in run stamps.
pub fn deterministic_mode() -> bool {
    std::env::var("CLDA_DETERMINISTIC").is_ok_and(|v| v == "1")
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_stamp(dir: &Path, command: &str, seed: u64, config: &RunConfig) -> Result<()> {
    let stamp = RunStamp {
        command: command.into(),
        seed,
        version: env!("CARGO_PKG_VERSION").into(),
        deterministic: deterministic_mode(),
        config: serde_json::to_value(config).expect("config serializes"),
    };
    write_json(&dir.join(RUN_FILE), &stamp)
}

/// Runs `f` for every seed on up to `jobs` threads. Results come back in
/// seed order; the first failing seed's error wins.
pub fn for_seeds<T, F>(seeds: &[u64], jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let jobs = jobs.clamp(1, seeds.len().max(1));
    if jobs == 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let f = &f;
                scope.spawn(move || {
                    (j..seeds.len())
                        .step_by(jobs)
                        .map(|i| (i, f(seeds[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("seed worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every seed ran")).collect()
}

pub fn fresh_teacher(config: &RunConfig, dataset: &Dataset, seed: u64) -> Result<TransformerModel> {
    let cfg = config.model.model_config(&dataset.meta, config.model.teacher_depth);
    TransformerModel::new(cfg, seed).map_err(|e| CliError::Config(e.to_string()))
}

/// A randomly initialized student with the teacher's shape at the configured
/// student depth.
pub fn fresh_student(config: &RunConfig, teacher: &TransformerModel, seed: u64) -> Result<TransformerModel> {
    let cfg = teacher.config.with_depth(config.model.student_depth);
    let init = SeededRng::derived(seed, STUDENT_INIT_STREAM).next_u64();
    TransformerModel::new(cfg, init).map_err(|e| CliError::Config(e.to_string()))
}

fn check_teacher(teacher: &TransformerModel, dataset: &Dataset) -> Result<()> {
    let (c, m) = (&teacher.config, &dataset.meta);
    if c.vocab != m.vocab || c.seq_len != m.seq_len || c.classes != m.classes {
        return Err(CliError::Data(format!(
            "teacher expects vocab {} seq_len {} classes {}, dataset has {} {} {}",
            c.vocab, c.seq_len, c.classes, m.vocab, m.seq_len, m.classes
        )));
    }
    Ok(())
}

pub fn train_teacher_seed(config: &RunConfig, dataset: &Dataset, seed: u64) -> Result<BaselineOutcome> {
    let model = fresh_teacher(config, dataset, seed)?;
    Ok(trainer::train_teacher_baseline(&config.teacher_for(seed), model, &dataset.data)?)
}

pub fn train_kd_seed(config: &RunConfig, dataset: &Dataset, teacher: &TransformerModel, seed: u64) -> Result<KdOutcome> {
    check_teacher(teacher, dataset)?;
    let student = fresh_student(config, teacher, seed)?;
    Ok(trainer::train_kd(&config.clda_for(seed), teacher, student, &dataset.data)?)
}

pub fn train_clda_seed(config: &RunConfig, dataset: &Dataset, teacher: &TransformerModel, seed: u64) -> Result<CldaOutcome> {
    check_teacher(teacher, dataset)?;
    let student = fresh_student(config, teacher, seed)?;
    Ok(trainer::run_clda(
        &config.clda_for(seed),
        teacher.clone(),
        student,
        &dataset.data,
        &mut NoObserver,
    )?)
}

pub fn cmd_gen_data(config: &RunConfig, out: &Path) -> Result<()> {
    config.data.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let data = gen_synthetic_domains(&config.data)?;
    csv_io::write_dataset(out, &config.data, &data)
}

/// `path` is either one checkpoint for all seeds or a directory holding
/// `seed-<s>/teacher.ckpt`.
pub fn teacher_path(path: &Path, seed: u64) -> PathBuf {
    if path.is_dir() {
        seed_dir(path, seed).join(TEACHER_CKPT)
    } else {
        path.to_path_buf()
    }
}

fn load_teacher(path: &Path, seed: u64) -> Result<TransformerModel> {
    let p = teacher_path(path, seed);
    if !p.exists() {
        return Err(CliError::Data(format!("{}: teacher checkpoint not found", p.display())));
    }
    checkpoint::load(&p)
}

fn prepare(config: &RunConfig, data_dir: &Path) -> Result<Dataset> {
    config.validate()?;
    csv_io::read_dataset(data_dir)
}

pub fn cmd_train_teacher(config: &RunConfig, data_dir: &Path, out: &Path) -> Result<()> {
    let dataset = prepare(config, data_dir)?;
    for_seeds(&config.seeds, config.jobs, |seed| {
        let outcome = train_teacher_seed(config, &dataset, seed)?;
        let dir = seed_dir(out, seed);
        create_dir(&dir)?;
        checkpoint::save(&dir.join(TEACHER_CKPT), &outcome.model)?;
        report::write_metrics(&dir.join(METRICS_FILE), &outcome.metrics)?;
        write_stamp(&dir, "train-teacher", seed, config)
    })?;
    Ok(())
}

pub fn cmd_train_kd(config: &RunConfig, data_dir: &Path, teacher: &Path, out: &Path) -> Result<()> {
    let dataset = prepare(config, data_dir)?;
    for_seeds(&config.seeds, config.jobs, |seed| {
        let t = load_teacher(teacher, seed)?;
        let outcome = train_kd_seed(config, &dataset, &t, seed)?;
        let dir = seed_dir(out, seed);
        create_dir(&dir)?;
        checkpoint::save(&dir.join(STUDENT_CKPT), &outcome.student)?;
        report::write_metrics(&dir.join(METRICS_FILE), &outcome.metrics)?;
        write_stamp(&dir, "train-kd", seed, config)
    })?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingSummary {
    pub lsr: Option<LsrReport>,
    pub mapping: MappingState,
}

fn write_events(path: &Path, events: &[StepEvent]) -> Result<()> {
    let mut text = String::new();
    for e in events {
        text += &serde_json::to_string(e).map_err(|err| CliError::format(path, err.to_string()))?;
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn cmd_train_clda(config: &RunConfig, data_dir: &Path, teacher: &Path, out: &Path) -> Result<()> {
    let dataset = prepare(config, data_dir)?;
    for_seeds(&config.seeds, config.jobs, |seed| {
        let t = load_teacher(teacher, seed)?;
        let outcome = train_clda_seed(config, &dataset, &t, seed)?;
        let dir = seed_dir(out, seed);
        create_dir(&dir)?;
        checkpoint::save(&dir.join(STUDENT_CKPT), &outcome.student)?;
        checkpoint::save(&dir.join(TEACHER_CKPT), &outcome.teacher)?;
        report::write_metrics(&dir.join(METRICS_FILE), &outcome.metrics)?;
        write_events(&dir.join(EVENTS_FILE), &outcome.events)?;
        write_json(
            &dir.join(MAPPING_FILE),
            &MappingSummary {
                lsr: outcome.lsr.clone(),
                mapping: outcome.mapping.clone(),
            },
        )?;
        write_stamp(&dir, "train-clda", seed, config)
    })?;
    Ok(())
}

fn eval_head(split: &LabeledSplit, n: usize) -> Result<Vec<LabeledBatch>> {
    let head = split.head(n);
    Ok(LabeledSplit::new(head.tokens, head.labels)?.chunks(256))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsrAnalysis {
    pub model: String,
    pub eval_examples: usize,
    pub report: LsrReport,
    pub partition: LayerPartition,
}

pub fn analyze_lsr(config: &RunConfig, model: &TransformerModel, dataset: &Dataset) -> Result<(LsrReport, LayerPartition, usize)> {
    check_teacher(model, dataset)?;
    let eval = eval_head(&dataset.data.target_eval, config.analysis.eval_examples)?;
    let n = eval.iter().map(LabeledBatch::len).sum();
    let report = layer_saliency(model, &eval, config.analysis.lsr_threshold)?;
    let partition = classify_layers(&report);
    Ok((report, partition, n))
}

pub fn cmd_analyze_lsr(config: &RunConfig, model_path: &Path, data_dir: &Path, out: &Path) -> Result<LsrAnalysis> {
    let dataset = prepare(config, data_dir)?;
    let model = checkpoint::load(model_path)?;
    let (report, partition, eval_examples) = analyze_lsr(config, &model, &dataset)?;
    let analysis = LsrAnalysis {
        model: model_path.display().to_string(),
        eval_examples,
        report,
        partition,
    };
    create_dir(out)?;
    write_json(&out.join("lsr.json"), &analysis)?;
    let rows: Vec<String> = analysis.report.entries.iter().map(|e| format!("L{}", e.layer)).collect();
    let values: Vec<Vec<f64>> = analysis.report.entries.iter().map(|e| vec![e.lsr]).collect();
    let hi = values.iter().map(|v| v[0]).fold(analysis.report.threshold, f64::max);
    write_text(&out.join("lsr.svg"), &svg::heatmap("Layer saliency rate", &rows, &["LSR".into()], &values, (0.0, hi)))?;
    Ok(analysis)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaAnalysis {
    pub model_a: String,
    pub model_b: String,
    pub examples: usize,
    pub heatmap: CkaHeatmap,
}

pub fn cmd_analyze_cka(config: &RunConfig, a_path: &Path, b_path: &Path, data_dir: &Path, out: &Path) -> Result<CkaAnalysis> {
    let dataset = prepare(config, data_dir)?;
    let a = checkpoint::load(a_path)?;
    let b = checkpoint::load(b_path)?;
    check_teacher(&a, &dataset)?;
    check_teacher(&b, &dataset)?;
    let head = dataset.data.target_eval.head(config.analysis.cka_examples);
    let batches = LabeledSplit::new(head.tokens, head.labels)?.unlabeled().chunks(256);
    let refs: Vec<_> = batches.iter().collect();
    let heatmap = cross_model_cka(&a, &b, &refs)?;
    let analysis = CkaAnalysis {
        model_a: a_path.display().to_string(),
        model_b: b_path.display().to_string(),
        examples: batches.iter().map(|b| b.batch_size()).sum(),
        heatmap,
    };
    create_dir(out)?;
    write_json(&out.join("cka.json"), &analysis)?;
    let h = &analysis.heatmap;
    let values: Vec<Vec<f64>> = (0..h.rows()).map(|r| (0..h.cols()).map(|c| h.get(r, c)).collect()).collect();
    write_text(&out.join("cka.svg"), &svg::heatmap("Linear CKA", &h.row_labels, &h.col_labels, &values, (0.0, 1.0)))?;
    Ok(analysis)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvrAnalysis {
    pub model_a: String,
    pub model_b: String,
    pub report: PvrReport,
}

pub fn cmd_analyze_pvr(a_path: &Path, b_path: &Path, out: &Path) -> Result<PvrAnalysis> {
    let a = checkpoint::load(a_path)?;
    let b = checkpoint::load(b_path)?;
    if a.config.width != b.config.width || a.config.mlp_width != b.config.mlp_width || a.depth() != b.depth() {
        return Err(CliError::Data(format!(
            "pvr needs matching shapes: {:?} vs {:?}",
            a.config, b.config
        )));
    }
    let report = pvr_report(&a, &b)?;
    let analysis = PvrAnalysis {
        model_a: a_path.display().to_string(),
        model_b: b_path.display().to_string(),
        report,
    };
    create_dir(out)?;
    write_json(&out.join("pvr.json"), &analysis)?;
    let rows: Vec<String> = analysis.report.entries.iter().map(|e| format!("L{}", e.layer)).collect();
    let values: Vec<Vec<f64>> = analysis.report.entries.iter().map(|e| vec![e.attn, e.mlp]).collect();
    let hi = values.iter().flatten().copied().fold(0.0, f64::max);
    write_text(
        &out.join("pvr.svg"),
        &svg::heatmap("Parameter variation rate", &rows, &["attn".into(), "mlp".into()], &values, (0.0, hi)),
    )?;
    Ok(analysis)
}

pub fn cmd_report(logs: &[PathBuf], config: Option<&Path>, out: &Path) -> Result<report::ExperimentReport> {
    let snapshot = match config {
        Some(p) => Some(serde_json::to_value(RunConfig::from_file(p)?).expect("config serializes")),
        None => None,
    };
    let rep = report::build_report(logs, snapshot)?;
    create_dir(out)?;
    write_json(&out.join("report.json"), &rep)?;
    write_text(&out.join("curves.svg"), &report::curves_svg(&rep))?;
    Ok(rep)
}

/// Target accuracy of `model` on the dataset's evaluation split.
pub fn target_accuracy(model: &TransformerModel, dataset: &Dataset) -> Result<f64> {
    Ok(accuracy(model, &dataset.data.target_eval.chunks(256))?)
}
