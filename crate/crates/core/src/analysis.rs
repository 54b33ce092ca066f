//! Layer analysis instruments: layer saliency rate, per-module parameter
//! variation rate and linear CKA.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, BlockModule, TransformerModel};
use crate::tensor::Tensor;

/// Non-salient cut for classification models (0.3%).
pub const LSR_THRESHOLD_CLASSIFICATION: f64 = 0.003;
/// Non-salient cut for segmentation models (0.1%).
pub const LSR_THRESHOLD_SEGMENTATION: f64 = 0.001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsrEntry {
    pub layer: usize,
    pub lsr: f64,
    pub is_salient: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsrReport {
    pub entries: Vec<LsrEntry>,
    pub baseline_accuracy: f64,
    pub threshold: f64,
}

/// Fractional accuracy of `model` over all `batches`.
pub fn accuracy(model: &TransformerModel, batches: &[LabeledBatch]) -> Result<f64> {
    let total: usize = batches.iter().map(LabeledBatch::len).sum();
    if total == 0 {
        return Err(Error::EmptyEvalSet);
    }
    let mut correct = 0usize;
    for b in batches.iter().filter(|b| !b.is_empty()) {
        let logits = model.forward(&b.tokens, false)?.logits;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&b.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / total as f64)
}

/// Accuracy change when each layer in turn is zeroed out.
///
/// The input model is never modified; each ablation runs on a copy.
pub fn layer_saliency(model: &TransformerModel, eval: &[LabeledBatch], threshold: f64) -> Result<LsrReport> {
    let baseline = accuracy(model, eval)?;
    let mut entries = Vec::with_capacity(model.depth());
    for i in 0..model.depth() {
        let ablated = model.ablate_layer(i)?;
        let lsr = libm::fabs(baseline - accuracy(&ablated, eval)?);
        entries.push(LsrEntry {
            layer: i,
            lsr,
            is_salient: lsr >= threshold,
        });
    }
    Ok(LsrReport {
        entries,
        baseline_accuracy: baseline,
        threshold,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayerPartition {
    pub salient: Vec<usize>,
    pub non_salient: Vec<usize>,
}

pub fn classify_layers(report: &LsrReport) -> LayerPartition {
    let mut out = LayerPartition::default();
    for e in &report.entries {
        if e.lsr >= report.threshold {
            out.salient.push(e.layer);
        } else {
            out.non_salient.push(e.layer);
        }
    }
    out
}

/// Mean absolute difference between two parameter vectors.
pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "pvr",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    if a.is_empty() {
        return Err(Error::Degenerate("pvr over an empty module"));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Parameter variation rate of module `module` of block `layer`.
pub fn pvr(a: &TransformerModel, b: &TransformerModel, layer: usize, module: BlockModule) -> Result<f64> {
    let get = |m: &TransformerModel| {
        m.blocks.get(layer).map(|blk| blk.module_params(module)).ok_or(Error::IndexOutOfRange {
            what: "layer",
            index: layer,
            len: m.depth(),
        })
    };
    if a.config.width != b.config.width || a.config.mlp_width != b.config.mlp_width {
        return Err(Error::ShapeMismatch {
            op: "pvr",
            lhs: vec![a.config.width, a.config.mlp_width],
            rhs: vec![b.config.width, b.config.mlp_width],
        });
    }
    mean_abs_diff(&get(a)?, &get(b)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvrEntry {
    pub layer: usize,
    pub attn: f64,
    pub mlp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvrReport {
    pub entries: Vec<PvrEntry>,
}

pub fn pvr_report(a: &TransformerModel, b: &TransformerModel) -> Result<PvrReport> {
    if a.depth() != b.depth() {
        return Err(Error::ShapeMismatch {
            op: "pvr",
            lhs: vec![a.depth()],
            rhs: vec![b.depth()],
        });
    }
    let entries = (0..a.depth())
        .map(|i| {
            Ok(PvrEntry {
                layer: i,
                attn: pvr(a, b, i, BlockModule::Attn)?,
                mlp: pvr(a, b, i, BlockModule::Mlp)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PvrReport { entries })
}

/// Centered Gram matrix `K = X~ X~^T` of an `[n, p]` matrix.
fn centered_gram(x: &[f64], n: usize, p: usize) -> Vec<f64> {
    let mut centered = x.to_vec();
    for j in 0..p {
        let mean = (0..n).map(|i| x[i * p + j]).sum::<f64>() / n as f64;
        for i in 0..n {
            centered[i * p + j] -= mean;
        }
    }
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for k in i..n {
            let dot: f64 = centered[i * p..(i + 1) * p]
                .iter()
                .zip(&centered[k * p..(k + 1) * p])
                .map(|(a, b)| a * b)
                .sum();
            gram[i * n + k] = dot;
            gram[k * n + i] = dot;
        }
    }
    gram
}

/// Precomputed representation for repeated CKA comparisons.
#[derive(Clone, Debug)]
pub struct CkaFeatures {
    n: usize,
    gram: Vec<f64>,
    /// `||X~^T X~||_F`, equal to `||K||_F`.
    self_norm: f64,
}

impl CkaFeatures {
    pub fn new(x: &Tensor) -> Result<Self> {
        let [n, p] = x.shape()[..] else {
            return Err(Error::InvalidShape {
                op: "linear_cka",
                shape: x.shape().to_vec(),
                reason: "expected [n, p]",
            });
        };
        if n < 2 {
            return Err(Error::Degenerate("linear CKA needs at least two examples"));
        }
        let gram = centered_gram(x.data(), n, p);
        let self_norm = libm::sqrt(gram.iter().map(|v| v * v).sum::<f64>());
        if !(self_norm > 0.0) {
            return Err(Error::Degenerate("linear CKA input has zero variance"));
        }
        Ok(Self { n, gram, self_norm })
    }

    pub fn similarity(&self, other: &CkaFeatures) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::ShapeMismatch {
                op: "linear_cka",
                lhs: vec![self.n],
                rhs: vec![other.n],
            });
        }
        // ||Y~^T X~||_F^2 = tr(K L) for symmetric centered Grams.
        let cross: f64 = self.gram.iter().zip(&other.gram).map(|(a, b)| a * b).sum();
        Ok(cross / (self.self_norm * other.self_norm))
    }
}

/// Linear CKA between `[n, p1]` and `[n, p2]` representations of the same
/// `n` inputs.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    CkaFeatures::new(x)?.similarity(&CkaFeatures::new(y)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaHeatmap {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major `[rows, cols]`.
    pub values: Vec<f64>,
}

impl CkaHeatmap {
    pub fn rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }
}

fn module_features(model: &TransformerModel, batches: &[&crate::data::TokenBatch]) -> Result<(Vec<String>, Vec<CkaFeatures>)> {
    let mut attn: Vec<Vec<f64>> = vec![Vec::new(); model.depth()];
    let mut mlp: Vec<Vec<f64>> = vec![Vec::new(); model.depth()];
    let mut n = 0;
    let width = model.config.seq_len * model.config.width;
    for b in batches {
        let acts = model.module_activations(b)?;
        for (i, t) in acts.attn.iter().enumerate() {
            attn[i].extend_from_slice(t.data());
        }
        for (i, t) in acts.mlp.iter().enumerate() {
            mlp[i].extend_from_slice(t.data());
        }
        n += b.batch_size();
    }
    let mut labels = Vec::new();
    let mut feats = Vec::new();
    for i in 0..model.depth() {
        for (name, data) in [("attn", &attn[i]), ("mlp", &mlp[i])] {
            labels.push(format!("L{i}.{name}"));
            feats.push(CkaFeatures::new(&Tensor::new(vec![n, width], data.clone())?)?);
        }
    }
    Ok((labels, feats))
}

/// CKA between every (module of `a`, module of `b`) pair, where the modules
/// are each block's attention and MLP outputs on the same inputs.
pub fn cross_model_cka(
    a: &TransformerModel,
    b: &TransformerModel,
    batches: &[&crate::data::TokenBatch],
) -> Result<CkaHeatmap> {
    if batches.is_empty() || batches.iter().all(|b| b.batch_size() == 0) {
        return Err(Error::EmptyBatches);
    }
    let (row_labels, rows) = module_features(a, batches)?;
    let (col_labels, cols) = module_features(b, batches)?;
    let mut values = Vec::with_capacity(rows.len() * cols.len());
    for r in &rows {
        for c in &cols {
            values.push(r.similarity(c)?);
        }
    }
    Ok(CkaHeatmap {
        row_labels,
        col_labels,
        values,
    })
}
