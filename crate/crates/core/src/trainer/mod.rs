//! Training procedures: the self-training baseline, plain distillation and
//! the collaborative loop that distills teacher to student, maps teacher
//! non-salient layers onto student layers and folds student weights back
//! into the teacher by EMA.

mod config;
mod losses;
mod mapping;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use config::{BaselineConfig, CldaConfig, LsrMode, MappingMode};
pub use losses::{
    cross_entropy, distill_loss, hard_labels, quality_estimate, softmax, target_weights, weighted_nll,
    PseudoLabelBatch,
};
pub use mapping::{
    argmax_first, channel_similarity, flat_similarity, select_mapping, token_similarity, MappingState,
};

use crate::analysis::{accuracy, classify_layers, layer_saliency, LsrReport};
use crate::data::{BatchStream, DomainData, LabeledBatch, LabeledSplit, Split, TokenBatch};
use crate::error::{Error, Result};
use crate::model::TransformerModel;
use crate::optim::Adam;
use crate::rng::SeededRng;
use crate::tape::Tape;
use crate::tensor::Tensor;

const SOURCE_STREAM: u64 = 11;
const TARGET_STREAM: u64 = 12;
const GAMMA_STREAM: u64 = 13;
const RANDOM_MAP_STREAM: u64 = 14;
/// Examples of the source split used for the source-accuracy metric.
const SOURCE_EVAL_EXAMPLES: usize = 512;
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Training without mapping or teacher updates.
    Distill,
    /// Inside the similarity-accumulation window.
    Mapping,
    /// After the window: the teacher receives EMA updates.
    TeacherUpdate,
    /// Baseline teacher training.
    Baseline,
}

/// One metrics-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    pub step: usize,
    pub teacher_target_acc: Option<f64>,
    pub student_target_acc: Option<f64>,
    pub student_source_acc: Option<f64>,
    pub mean_q: f64,
    pub stage: Stage,
    pub gamma_set: Vec<usize>,
    pub i_star_map: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    LayerSaliency { non_salient: Vec<usize> },
    GammaSelected { gamma: Vec<usize> },
    Accumulate { gamma: usize, scores: Vec<f64> },
    MappingFixed { i_star: BTreeMap<usize, usize> },
    EmaUpdate { gamma: usize, student_layer: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Hooks into the collaborative loop. All methods default to no-ops.
pub trait Observer {
    /// Called after each step with the current models.
    fn on_step(&mut self, _step: usize, _teacher: &TransformerModel, _student: &TransformerModel) {}
    /// Called for every EMA update with flattened block parameters.
    fn on_ema(&mut self, _step: usize, _gamma: usize, _before: &[f64], _student: &[f64], _after: &[f64]) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

/// `teacher[gamma] <- alpha * teacher[gamma] + (1 - alpha) * student[i_star]`
/// on the whole block parameter vector.
pub fn ema_update(
    teacher: &mut TransformerModel,
    gamma: usize,
    student: &TransformerModel,
    i_star: usize,
    alpha: f64,
) -> Result<()> {
    let (mut t, _) = teacher.read_layer_params(gamma)?;
    let (s, _) = student.read_layer_params(i_star)?;
    if t.len() != s.len() {
        return Err(Error::ShapeMismatch {
            op: "ema_update",
            lhs: vec![t.len()],
            rhs: vec![s.len()],
        });
    }
    for (tv, sv) in t.iter_mut().zip(&s) {
        *tv = alpha * *tv + (1.0 - alpha) * sv;
    }
    teacher.write_layer_params(gamma, &t)
}

fn concat_batches(a: &TokenBatch, b: &TokenBatch) -> Result<TokenBatch> {
    let mut tokens = a.tokens().to_vec();
    tokens.extend_from_slice(b.tokens());
    TokenBatch::new(a.seq_len(), tokens)
}

fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

fn eval_batches(split: &LabeledSplit, limit: usize) -> Vec<LabeledBatch> {
    let head = split.head(limit);
    LabeledSplit::new(head.tokens, head.labels)
        .map(|s| s.chunks(EVAL_CHUNK))
        .unwrap_or_default()
}

/// One optimizer step on `[source; target]` with per-row loss weights.
///
/// Returns the loss value and the pre-update student attention maps of the
/// target rows (`[B, N, C]` per block) when `want_maps` is set.
fn weighted_step(
    model: &mut TransformerModel,
    opt: &mut Adam,
    source: &LabeledBatch,
    target: Option<(&TokenBatch, &PseudoLabelBatch)>,
    want_maps: bool,
) -> Result<(f64, Option<Vec<Tensor>>)> {
    let classes = model.config.classes;
    let bs = source.len();
    let (inputs, weights) = match target {
        Some((tokens, pseudo)) => {
            let inputs = concat_batches(&source.tokens, tokens)?;
            let mut labels = source.labels.clone();
            labels.extend_from_slice(&pseudo.labels);
            let mut w: Vec<f64> = vec![1.0 / bs as f64; bs];
            let bt = tokens.batch_size() as f64;
            w.extend(pseudo.quality.iter().map(|q| q / bt));
            (inputs, target_weights(&labels, &w, classes, 1.0)?)
        }
        None => {
            let w = vec![1.0; bs];
            (source.tokens.clone(), target_weights(&source.labels, &w, classes, bs as f64)?)
        }
    };
    let mut tape = Tape::new();
    let pass = model.forward_on_tape(&mut tape, &inputs)?;
    let maps = match (want_maps, target) {
        (true, Some((tokens, _))) => {
            let (n, c) = (model.config.seq_len, model.config.width);
            let skip = bs * n * c;
            let bt = tokens.batch_size();
            Some(
                pass.attn_out
                    .iter()
                    .map(|&v| Tensor::new(vec![bt, n, c], tape.value(v).data()[skip..].to_vec()))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        _ => None,
    };
    let loss = weighted_nll(&mut tape, pass.logits, weights)?;
    let loss_value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    model.absorb_grads(&mut grads, &pass)?;
    let mut params = model.tensors_mut();
    opt.step(&mut params)?;
    Ok((loss_value, maps))
}

/// Teacher inference on target tokens. Returns logits, optional attention
/// maps and the number of gradient-requiring leaves seen (always zero for a
/// frozen teacher).
fn teacher_inference(teacher: &TransformerModel, tokens: &TokenBatch, want_maps: bool) -> Result<(Tensor, Option<Vec<Tensor>>, usize)> {
    let mut tape = Tape::new();
    let pass = teacher.forward_on_tape(&mut tape, tokens)?;
    let grad_leaves = tape.grad_leaves();
    let maps = if want_maps {
        let (b, n, c) = (tokens.batch_size(), teacher.config.seq_len, teacher.config.width);
        Some(
            pass.attn_out
                .iter()
                .map(|&v| tape.value(v).reshaped(&[b, n, c]))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok((tape.value(pass.logits).clone(), maps, grad_leaves))
}

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub model: TransformerModel,
    pub metrics: Vec<MetricRecord>,
}

/// Trains `model` with source cross-entropy plus, when enabled, a
/// self-training term on target data: the model's own confident hard
/// pseudo-labels, weighted like the distillation loss.
pub fn train_teacher_baseline(
    config: &BaselineConfig,
    mut model: TransformerModel,
    data: &DomainData,
) -> Result<BaselineOutcome> {
    config.validate()?;
    model.set_trainable(true);
    let mut opt = Adam::new(config.learning_rate);
    let mut src = BatchStream::new(&data.source, config.batch_size, SeededRng::derived(config.seed, SOURCE_STREAM).next_u64())?;
    let mut tgt = BatchStream::new(&data.target_train, config.batch_size, SeededRng::derived(config.seed, TARGET_STREAM).next_u64())?;
    let target_eval = eval_batches(&data.target_eval, usize::MAX);
    let mut metrics = Vec::new();
    let mut q_sum = 0.0;
    let mut q_count = 0usize;
    for step in 0..config.total_steps {
        let s = src.next_batch();
        let (loss, _) = if config.self_training {
            let t = tgt.next_batch();
            let logits = model.forward(&t, false)?.logits;
            let pseudo = PseudoLabelBatch::from_logits(&logits, config.confidence_threshold);
            q_sum += pseudo.mean_quality();
            q_count += 1;
            weighted_step(&mut model, &mut opt, &s, Some((&t, &pseudo)), false)?
        } else {
            weighted_step(&mut model, &mut opt, &s, None, false)?
        };
        check_finite(loss, step)?;
        if (step + 1) % config.eval_every == 0 || step + 1 == config.total_steps {
            metrics.push(MetricRecord {
                step: step + 1,
                teacher_target_acc: Some(accuracy(&model, &target_eval)?),
                student_target_acc: None,
                student_source_acc: None,
                mean_q: if q_count > 0 { q_sum / q_count as f64 } else { 0.0 },
                stage: Stage::Baseline,
                gamma_set: Vec::new(),
                i_star_map: BTreeMap::new(),
            });
            q_sum = 0.0;
            q_count = 0;
        }
    }
    model.set_trainable(false);
    Ok(BaselineOutcome { model, metrics })
}

#[derive(Clone, Debug)]
pub struct CldaOutcome {
    pub student: TransformerModel,
    pub teacher: TransformerModel,
    pub metrics: Vec<MetricRecord>,
    pub events: Vec<StepEvent>,
    pub mapping: MappingState,
    pub lsr: Option<LsrReport>,
    /// Gradient-requiring leaves registered on any teacher tape.
    pub teacher_grad_leaves: usize,
}

#[derive(Clone, Debug)]
pub struct KdOutcome {
    pub student: TransformerModel,
    pub metrics: Vec<MetricRecord>,
}

struct Metrics {
    target_eval: Vec<LabeledBatch>,
    source_eval: Vec<LabeledBatch>,
    every: usize,
    total: usize,
    q_sum: f64,
    q_count: usize,
    records: Vec<MetricRecord>,
}

impl Metrics {
    fn new(data: &DomainData, every: usize, total: usize) -> Self {
        Self {
            target_eval: eval_batches(&data.target_eval, usize::MAX),
            source_eval: eval_batches(&data.source, SOURCE_EVAL_EXAMPLES),
            every,
            total,
            q_sum: 0.0,
            q_count: 0,
            records: Vec::new(),
        }
    }

    fn add_q(&mut self, q: f64) {
        self.q_sum += q;
        self.q_count += 1;
    }

    fn maybe_record(
        &mut self,
        step: usize,
        teacher: &TransformerModel,
        student: &TransformerModel,
        stage: Stage,
        mapping: &MappingState,
    ) -> Result<()> {
        if (step + 1) % self.every != 0 && step + 1 != self.total {
            return Ok(());
        }
        self.records.push(MetricRecord {
            step: step + 1,
            teacher_target_acc: Some(accuracy(teacher, &self.target_eval)?),
            student_target_acc: Some(accuracy(student, &self.target_eval)?),
            student_source_acc: Some(accuracy(student, &self.source_eval)?),
            mean_q: if self.q_count > 0 { self.q_sum / self.q_count as f64 } else { 0.0 },
            stage,
            gamma_set: mapping.gamma.clone(),
            i_star_map: mapping.i_star.clone(),
        });
        self.q_sum = 0.0;
        self.q_count = 0;
        Ok(())
    }
}

/// Distillation baseline: the student minimizes source cross-entropy plus
/// the quality-weighted distillation loss against a frozen teacher.
pub fn train_kd(
    config: &CldaConfig,
    teacher: &TransformerModel,
    mut student: TransformerModel,
    data: &DomainData,
) -> Result<KdOutcome> {
    config.validate()?;
    let teacher = teacher.frozen_copy();
    student.set_trainable(true);
    let mut opt = Adam::new(config.learning_rate);
    let mut src = BatchStream::new(&data.source, config.batch_size, SeededRng::derived(config.seed, SOURCE_STREAM).next_u64())?;
    let mut tgt = BatchStream::new(&data.target_train, config.batch_size, SeededRng::derived(config.seed, TARGET_STREAM).next_u64())?;
    let mut metrics = Metrics::new(data, config.eval_every, config.total_steps);
    let empty = MappingState::default();
    for step in 0..config.total_steps {
        let s = src.next_batch();
        let t = tgt.next_batch();
        let (logits, _, _) = teacher_inference(&teacher, &t, false)?;
        let pseudo = PseudoLabelBatch::from_logits(&logits, config.confidence_threshold);
        metrics.add_q(pseudo.mean_quality());
        let (loss, _) = weighted_step(&mut student, &mut opt, &s, Some((&t, &pseudo)), false)?;
        check_finite(loss, step)?;
        metrics.maybe_record(step, &teacher, &student, Stage::Distill, &empty)?;
    }
    student.set_trainable(false);
    Ok(KdOutcome {
        student,
        metrics: metrics.records,
    })
}

/// Labeled batches used for layer saliency during training.
fn saliency_batches(config: &CldaConfig, teacher: &TransformerModel, data: &DomainData) -> Result<Vec<LabeledBatch>> {
    match config.lsr_mode {
        LsrMode::Oracle => Ok(eval_batches(&data.target_eval, usize::MAX)),
        LsrMode::Proxy => {
            let n = data.target_eval.len().min(data.target_train.len());
            let mut out = Vec::new();
            for chunk in data.target_train.chunks(EVAL_CHUNK) {
                if out.iter().map(LabeledBatch::len).sum::<usize>() >= n {
                    break;
                }
                let (logits, _, _) = teacher_inference(teacher, &chunk, false)?;
                let pseudo = PseudoLabelBatch::from_logits(&logits, config.confidence_threshold);
                let keep: Vec<usize> = (0..chunk.batch_size()).filter(|&i| pseudo.quality[i] > 0.0).collect();
                if keep.is_empty() {
                    continue;
                }
                let labels = keep.iter().map(|&i| pseudo.labels[i]).collect();
                out.push(LabeledBatch::new(chunk.select(&keep), labels)?);
            }
            Ok(out)
        }
    }
}

/// Number of layers drawn from `n` non-salient candidates.
pub fn selection_count(n: usize, fraction: f64) -> usize {
    if n == 0 {
        0
    } else {
        (libm::ceil(fraction * n as f64) as usize).clamp(1, n)
    }
}

/// The collaborative loop.
///
/// Per step `t` (0-based, `T` steps): the student is updated on
/// source cross-entropy plus distillation from the teacher. At `t == T2`
/// teacher layer saliency is measured once and a seeded random fraction of
/// the non-salient layers becomes the updated set. While `T2 <= t <= T3`
/// similarities between teacher and student attention maps on the same
/// target batch are accumulated; at `t == T3` each selected teacher layer
/// is mapped to its best student layer, and every later step EMA-blends the
/// student layer into the teacher layer. The teacher never receives
/// gradients.
pub fn run_clda(
    config: &CldaConfig,
    teacher: TransformerModel,
    mut student: TransformerModel,
    data: &DomainData,
    observer: &mut dyn Observer,
) -> Result<CldaOutcome> {
    config.validate()?;
    if teacher.config.width != student.config.width || teacher.config.mlp_width != student.config.mlp_width {
        return Err(Error::ShapeMismatch {
            op: "run_clda",
            lhs: vec![teacher.config.width, teacher.config.mlp_width],
            rhs: vec![student.config.width, student.config.mlp_width],
        });
    }
    let mut teacher = teacher.frozen_copy();
    student.set_trainable(true);
    let mode = config.mapping;
    let (t2, t3) = (config.stage2_start, config.stage3_start);
    let mut opt = Adam::new(config.learning_rate);
    let mut src = BatchStream::new(&data.source, config.batch_size, SeededRng::derived(config.seed, SOURCE_STREAM).next_u64())?;
    let mut tgt = BatchStream::new(&data.target_train, config.batch_size, SeededRng::derived(config.seed, TARGET_STREAM).next_u64())?;
    let mut gamma_rng = SeededRng::derived(config.seed, GAMMA_STREAM);
    let mut random_map_rng = SeededRng::derived(config.seed, RANDOM_MAP_STREAM);
    let mut metrics = Metrics::new(data, config.eval_every, config.total_steps);
    let mut mapping = MappingState::default();
    let mut events = Vec::new();
    let mut lsr = None;
    let mut teacher_grad_leaves = 0;

    for step in 0..config.total_steps {
        let in_window = mode != MappingMode::None && (t2..=t3).contains(&step);
        if in_window && step == t2 {
            let eval = saliency_batches(config, &teacher, data)?;
            let report = layer_saliency(&teacher, &eval, config.lsr_threshold)?;
            let part = classify_layers(&report);
            events.push(StepEvent {
                step,
                kind: EventKind::LayerSaliency {
                    non_salient: part.non_salient.clone(),
                },
            });
            let k = selection_count(part.non_salient.len(), config.selection_fraction);
            let mut gamma = gamma_rng.choose_k(&part.non_salient, k);
            gamma.sort_unstable();
            events.push(StepEvent {
                step,
                kind: EventKind::GammaSelected { gamma: gamma.clone() },
            });
            mapping = MappingState::new(gamma, student.depth());
            lsr = Some(report);
        }
        let accumulate = in_window && mode.uses_similarity() && !mapping.gamma.is_empty();

        let s = src.next_batch();
        let t = tgt.next_batch();
        let (logits, teacher_maps, leaves) = teacher_inference(&teacher, &t, accumulate)?;
        teacher_grad_leaves += leaves;
        let pseudo = PseudoLabelBatch::from_logits(&logits, config.confidence_threshold);
        metrics.add_q(pseudo.mean_quality());
        let (loss, student_maps) = weighted_step(&mut student, &mut opt, &s, Some((&t, &pseudo)), accumulate)?;
        check_finite(loss, step)?;

        if let (Some(tm), Some(sm)) = (&teacher_maps, &student_maps) {
            let sim = match mode {
                MappingMode::Channel => channel_similarity,
                MappingMode::Token => token_similarity,
                _ => flat_similarity,
            };
            for g in mapping.gamma.clone() {
                let scores = sm.iter().map(|m| sim(&tm[g], m)).collect::<Result<Vec<f64>>>()?;
                mapping.accumulate(g, &scores)?;
                events.push(StepEvent {
                    step,
                    kind: EventKind::Accumulate { gamma: g, scores },
                });
            }
            mapping.steps_accumulated += 1;
        }

        if mode != MappingMode::None && step == t3 && !mapping.gamma.is_empty() {
            mapping.i_star = if mode == MappingMode::Random {
                mapping
                    .gamma
                    .iter()
                    .map(|&g| (g, random_map_rng.below(student.depth())))
                    .collect()
            } else {
                select_mapping(&mapping)?
            };
            events.push(StepEvent {
                step,
                kind: EventKind::MappingFixed {
                    i_star: mapping.i_star.clone(),
                },
            });
        }

        if mode != MappingMode::None && step > t3 {
            for (&g, &i) in &mapping.i_star {
                let (before, _) = teacher.read_layer_params(g)?;
                ema_update(&mut teacher, g, &student, i, config.ema_alpha)?;
                let (after, _) = teacher.read_layer_params(g)?;
                let (sv, _) = student.read_layer_params(i)?;
                observer.on_ema(step, g, &before, &sv, &after);
                events.push(StepEvent {
                    step,
                    kind: EventKind::EmaUpdate {
                        gamma: g,
                        student_layer: i,
                    },
                });
            }
        }

        let stage = match mode {
            MappingMode::None => Stage::Distill,
            _ if step < t2 => Stage::Distill,
            _ if step <= t3 => Stage::Mapping,
            _ => Stage::TeacherUpdate,
        };
        metrics.maybe_record(step, &teacher, &student, stage, &mapping)?;
        observer.on_step(step, &teacher, &student);
    }
    student.set_trainable(false);
    Ok(CldaOutcome {
        student,
        teacher,
        metrics: metrics.records,
        events,
        mapping,
        lsr,
        teacher_grad_leaves,
    })
}

/// Source-only baseline at any depth: `train_teacher_baseline` without the
/// self-training term.
pub fn train_source_only(config: &BaselineConfig, model: TransformerModel, data: &DomainData) -> Result<BaselineOutcome> {
    let cfg = BaselineConfig {
        self_training: false,
        ..config.clone()
    };
    train_teacher_baseline(&cfg, model, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_domains, DomainDatasetSpec};
    use crate::model::ModelConfig;

    fn tiny_model(depth: usize) -> ModelConfig {
        ModelConfig {
            vocab: 32,
            seq_len: 6,
            width: 8,
            mlp_width: 12,
            depth,
            classes: 4,
        }
    }

    fn tiny_data() -> DomainData {
        gen_synthetic_domains(&DomainDatasetSpec {
            vocab: 32,
            seq_len: 6,
            n_source: 64,
            n_target: 64,
            n_eval: 32,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn ema_examples() {
        let cfg = tiny_model(2);
        let mut t = TransformerModel::new(cfg.clone(), 1).unwrap();
        let s = TransformerModel::new(cfg.clone(), 2).unwrap();
        let orig = t.clone();
        ema_update(&mut t, 0, &s, 1, 1.0).unwrap();
        assert!(t.params_bitwise_eq(&orig));
        ema_update(&mut t, 0, &s, 1, 0.0).unwrap();
        assert_eq!(t.read_layer_params(0).unwrap().0, s.read_layer_params(1).unwrap().0);
        assert!(t.blocks[1].tensors().iter().zip(orig.blocks[1].tensors()).all(|(a, b)| a.bitwise_eq(b)));

        let mut one = TransformerModel::zeros(cfg.clone()).unwrap();
        one.write_layer_params(0, &vec![1.0; cfg.block_param_count()]).unwrap();
        let zero = TransformerModel::zeros(cfg).unwrap();
        ema_update(&mut one, 0, &zero, 0, 0.9).unwrap();
        assert!(one.read_layer_params(0).unwrap().0.iter().all(|&v| (v - 0.9).abs() < 1e-15));
    }

    #[test]
    fn ema_rejects_width_mismatch() {
        let mut t = TransformerModel::new(tiny_model(2), 1).unwrap();
        let s = TransformerModel::new(ModelConfig { width: 4, ..tiny_model(2) }, 2).unwrap();
        assert!(ema_update(&mut t, 0, &s, 0, 0.5).is_err());
    }

    #[test]
    fn selection_count_rounds_up() {
        assert_eq!(selection_count(0, 0.3), 0);
        assert_eq!(selection_count(1, 0.3), 1);
        assert_eq!(selection_count(8, 0.3), 3);
        assert_eq!(selection_count(10, 0.3), 3);
        assert_eq!(selection_count(4, 1.0), 4);
    }

    #[test]
    fn none_mode_equals_kd() {
        let data = tiny_data();
        let teacher = TransformerModel::new(tiny_model(4), 3).unwrap();
        let student = TransformerModel::new(tiny_model(2), 4).unwrap();
        let cfg = CldaConfig {
            total_steps: 12,
            stage2_start: 3,
            stage3_start: 6,
            batch_size: 8,
            eval_every: 4,
            mapping: MappingMode::None,
            ..Default::default()
        };
        let kd = train_kd(&cfg, &teacher, student.clone(), &data).unwrap();
        let clda = run_clda(&cfg, teacher.clone(), student, &data, &mut NoObserver).unwrap();
        assert!(kd.student.params_bitwise_eq(&clda.student));
        assert_eq!(kd.metrics, clda.metrics);
        assert!(clda.teacher.params_bitwise_eq(&teacher));
        assert!(clda.events.is_empty());
    }

    #[test]
    fn rejects_bad_window() {
        let data = tiny_data();
        let teacher = TransformerModel::new(tiny_model(4), 3).unwrap();
        let student = TransformerModel::new(tiny_model(2), 4).unwrap();
        let cfg = CldaConfig {
            total_steps: 5,
            stage2_start: 4,
            stage3_start: 3,
            ..Default::default()
        };
        assert!(matches!(
            run_clda(&cfg, teacher, student, &data, &mut NoObserver),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let data = tiny_data();
        let mut model = TransformerModel::new(tiny_model(1), 3).unwrap();
        model.head.w.data_mut()[0] = f64::NAN;
        let cfg = BaselineConfig {
            total_steps: 2,
            batch_size: 8,
            ..Default::default()
        };
        assert!(matches!(
            train_teacher_baseline(&cfg, model, &data),
            Err(Error::Diverged { step: 0 })
        ));
    }
}
