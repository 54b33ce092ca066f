//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use clda_core::trainer::{LsrMode, MappingMode};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::runs;

#[derive(Debug, Parser)]
#[command(name = "clda", version, about = "Collaborative teacher-student domain adaptation on synthetic token data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single seed; replaces the configured seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    pub seeds: Option<Vec<u64>>,
    /// Seeds trained in parallel.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct Schedule {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Pseudo-label confidence threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct StudentArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Teacher checkpoint, or a train-teacher output directory.
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub student_depth: Option<usize>,
    #[command(flatten)]
    pub schedule: Schedule,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic source/target dataset directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        shift: Option<f64>,
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        seq_len: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        n_source: Option<usize>,
        #[arg(long)]
        n_target: Option<usize>,
        #[arg(long)]
        n_eval: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the teacher on source labels plus target self-training.
    TrainTeacher {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        mlp_width: Option<usize>,
        #[arg(long)]
        teacher_depth: Option<usize>,
        /// Source supervision only.
        #[arg(long)]
        no_self_training: bool,
        #[command(flatten)]
        schedule: Schedule,
        #[command(flatten)]
        common: Common,
    },
    /// Distill a frozen teacher into a fresh student.
    TrainKd(StudentArgs),
    /// Collaborative training: distillation, layer mapping and EMA teacher updates.
    TrainClda {
        #[command(flatten)]
        student: StudentArgs,
        #[arg(long)]
        mapping: Option<MappingMode>,
        #[arg(long)]
        alpha: Option<f64>,
        /// First step of the mapping window.
        #[arg(long)]
        t2: Option<usize>,
        /// Last step of the mapping window.
        #[arg(long)]
        t3: Option<usize>,
        #[arg(long)]
        selection_fraction: Option<f64>,
        #[arg(long)]
        lsr_threshold: Option<f64>,
        #[arg(long)]
        lsr_mode: Option<LsrMode>,
    },
    /// Layer saliency of one checkpoint on target-eval data.
    AnalyzeLsr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        eval_examples: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Module-by-module linear CKA between two checkpoints.
    AnalyzeCka {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        examples: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-layer parameter variation between two same-shape checkpoints.
    AnalyzePvr {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate metrics logs into a report with curves.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Configuration snapshot to embed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut c = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        c.seeds = vec![s];
        c.data.seed = s;
    }
    set(&mut c.seeds, common.seeds.clone());
    set(&mut c.jobs, common.jobs);
    Ok(c)
}

fn apply_student(c: &mut RunConfig, a: &StudentArgs) {
    let s = &a.schedule;
    set(&mut c.model.student_depth, a.student_depth);
    set(&mut c.clda.total_steps, s.steps);
    set(&mut c.clda.learning_rate, s.lr);
    set(&mut c.clda.batch_size, s.batch_size);
    set(&mut c.clda.eval_every, s.eval_every);
    set(&mut c.clda.confidence_threshold, s.threshold);
}

/// Parses flags into a fully validated configuration.
pub fn resolve(command: &Command) -> Result<Option<RunConfig>> {
    let c = match command {
        Command::GenData {
            shift,
            vocab,
            seq_len,
            classes,
            n_source,
            n_target,
            n_eval,
            common,
            ..
        } => {
            let mut c = load(common)?;
            let d = &mut c.data;
            set(&mut d.shift, *shift);
            set(&mut d.vocab, *vocab);
            set(&mut d.seq_len, *seq_len);
            set(&mut d.classes, *classes);
            set(&mut d.n_source, *n_source);
            set(&mut d.n_target, *n_target);
            set(&mut d.n_eval, *n_eval);
            c
        }
        Command::TrainTeacher {
            width,
            mlp_width,
            teacher_depth,
            no_self_training,
            schedule: s,
            common,
            ..
        } => {
            let mut c = load(common)?;
            set(&mut c.model.width, *width);
            set(&mut c.model.mlp_width, *mlp_width);
            set(&mut c.model.teacher_depth, *teacher_depth);
            if *no_self_training {
                c.teacher.self_training = false;
            }
            set(&mut c.teacher.total_steps, s.steps);
            set(&mut c.teacher.learning_rate, s.lr);
            set(&mut c.teacher.batch_size, s.batch_size);
            set(&mut c.teacher.eval_every, s.eval_every);
            set(&mut c.teacher.confidence_threshold, s.threshold);
            c
        }
        Command::TrainKd(a) => {
            let mut c = load(&a.common)?;
            apply_student(&mut c, a);
            c
        }
        Command::TrainClda {
            student,
            mapping,
            alpha,
            t2,
            t3,
            selection_fraction,
            lsr_threshold,
            lsr_mode,
        } => {
            let mut c = load(&student.common)?;
            apply_student(&mut c, student);
            set(&mut c.clda.mapping, *mapping);
            set(&mut c.clda.ema_alpha, *alpha);
            set(&mut c.clda.stage2_start, *t2);
            set(&mut c.clda.stage3_start, *t3);
            set(&mut c.clda.selection_fraction, *selection_fraction);
            set(&mut c.clda.lsr_threshold, *lsr_threshold);
            set(&mut c.clda.lsr_mode, *lsr_mode);
            c
        }
        Command::AnalyzeLsr {
            threshold,
            eval_examples,
            common,
            ..
        } => {
            let mut c = load(common)?;
            set(&mut c.analysis.lsr_threshold, *threshold);
            set(&mut c.analysis.eval_examples, *eval_examples);
            c
        }
        Command::AnalyzeCka { examples, common, .. } => {
            let mut c = load(common)?;
            set(&mut c.analysis.cka_examples, *examples);
            c
        }
        Command::AnalyzePvr { .. } | Command::Report { .. } => return Ok(None),
    };
    c.validate()?;
    Ok(Some(c))
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = resolve(&cli.command)?;
    let cfg = || config.as_ref().ok_or_else(|| CliError::Config("no configuration".into()));
    match &cli.command {
        Command::GenData { out, .. } => runs::cmd_gen_data(cfg()?, out),
        Command::TrainTeacher { data, out, .. } => runs::cmd_train_teacher(cfg()?, data, out),
        Command::TrainKd(a) => runs::cmd_train_kd(cfg()?, &a.data, &a.teacher, &a.out),
        Command::TrainClda { student: a, .. } => runs::cmd_train_clda(cfg()?, &a.data, &a.teacher, &a.out),
        Command::AnalyzeLsr { model, data, out, .. } => runs::cmd_analyze_lsr(cfg()?, model, data, out).map(drop),
        Command::AnalyzeCka { a, b, data, out, .. } => runs::cmd_analyze_cka(cfg()?, a, b, data, out).map(drop),
        Command::AnalyzePvr { a, b, out } => runs::cmd_analyze_pvr(a, b, out).map(drop),
        Command::Report { out, config, logs } => runs::cmd_report(logs, config.as_deref(), out).map(drop),
    }
}
