//! Pseudo-labels, quality weights and the weighted negative log-likelihood
//! used by both supervised and distillation terms.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::argmax_rows;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Teacher hard labels together with per-example quality weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelBatch {
    pub labels: Vec<usize>,
    /// 1 where the teacher's top probability reaches the confidence
    /// threshold, 0 elsewhere.
    pub quality: Vec<f64>,
}

impl PseudoLabelBatch {
    pub fn from_logits(teacher_logits: &Tensor, threshold: f64) -> Self {
        let probs = softmax(teacher_logits);
        Self {
            labels: hard_labels(teacher_logits),
            quality: quality_estimate(&probs, threshold),
        }
    }

    pub fn mean_quality(&self) -> f64 {
        if self.quality.is_empty() {
            0.0
        } else {
            self.quality.iter().sum::<f64>() / self.quality.len() as f64
        }
    }
}

/// Row-wise softmax of plain values.
pub fn softmax(logits: &Tensor) -> Tensor {
    let cols = logits.last_dim();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Most confident class per row; ties go to the lowest class index.
pub fn hard_labels(teacher_logits: &Tensor) -> Vec<usize> {
    argmax_rows(teacher_logits)
}

/// Binary confidence indicator per row of `[B, N_C]` probabilities.
pub fn quality_estimate(probs: &Tensor, threshold: f64) -> Vec<f64> {
    let cols = probs.last_dim();
    probs
        .data()
        .chunks(cols)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max >= threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Weight matrix `W[i, c] = weight_i * [c == label_i] / denom`.
pub fn target_weights(labels: &[usize], weights: &[f64], classes: usize, denom: f64) -> Result<Tensor> {
    if labels.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            op: "target_weights",
            lhs: vec![labels.len()],
            rhs: vec![weights.len()],
        });
    }
    let mut w = Tensor::zeros(&[labels.len(), classes]);
    for (i, (&l, &q)) in labels.iter().zip(weights).enumerate() {
        if l >= classes {
            return Err(Error::IndexOutOfRange {
                what: "class label",
                index: l,
                len: classes,
            });
        }
        w.data_mut()[i * classes + l] = q / denom;
    }
    Ok(w)
}

/// `-sum(W * log_softmax(logits))` recorded on the tape.
pub fn weighted_nll(tape: &mut Tape, logits: Var, weights: Tensor) -> Result<Var> {
    let logp = tape.log_softmax(logits)?;
    let w = tape.constant(weights);
    let prod = tape.mul(logp, w)?;
    let s = tape.sum(prod)?;
    tape.scale(s, -1.0)
}

/// Mean over the batch of `q_i * -log softmax(student)_{label_i}`.
pub fn distill_loss(tape: &mut Tape, student_logits: Var, pseudo: &PseudoLabelBatch) -> Result<Var> {
    let shape = tape.value(student_logits).shape().to_vec();
    let [b, classes] = shape[..] else {
        return Err(Error::InvalidShape {
            op: "distill_loss",
            shape,
            reason: "expected [B, N_C] logits",
        });
    };
    if pseudo.labels.len() != b {
        return Err(Error::ShapeMismatch {
            op: "distill_loss",
            lhs: shape,
            rhs: vec![pseudo.labels.len()],
        });
    }
    let w = target_weights(&pseudo.labels, &pseudo.quality, classes, b as f64)?;
    weighted_nll(tape, student_logits, w)
}

/// Mean cross-entropy against ground-truth labels.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let classes = tape.value(logits).last_dim();
    let ones = vec![1.0; labels.len()];
    let w = target_weights(labels, &ones, classes, labels.len() as f64)?;
    weighted_nll(tape, logits, w)
}
