//! Tiny pre-norm transformer encoder classifier.
//!
//! Each [`EncoderBlock`] is
//!
//! ```text
//! a = Attn(LN1(x))      <- attention feature map, [B, N, C]
//! x = x + a
//! m = MLP(LN2(x))
//! x = x + m
//! ```
//!
//! with single-head attention. The head mean-pools tokens, applies a final
//! layer norm and a linear classifier. Zeroing every parameter of a block
//! turns it into the identity (LN outputs vanish and so do both branches),
//! which is how a layer is "removed" for saliency analysis.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::TokenBatch;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab: usize,
    pub seq_len: usize,
    pub width: usize,
    pub mlp_width: usize,
    pub depth: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn teacher_default() -> Self {
        Self {
            vocab: 64,
            seq_len: 16,
            width: 32,
            mlp_width: 64,
            depth: 8,
            classes: 4,
        }
    }

    pub fn student_default() -> Self {
        Self {
            depth: 4,
            ..Self::teacher_default()
        }
    }

    pub fn with_depth(&self, depth: usize) -> Self {
        Self { depth, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.seq_len == 0 || self.width == 0 || self.mlp_width == 0 || self.classes < 2 {
            return Err(Error::InvalidConfig(format!("degenerate model config {self:?}")));
        }
        Ok(())
    }

    /// Parameter count of one encoder block.
    pub fn block_param_count(&self) -> usize {
        let c = self.width;
        let m = self.mlp_width;
        (4 * c * c + 4 * c) + (2 * c * m + c + m) + 4 * c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl NormParams {
    fn identity(width: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[width], 1.0),
            beta: Tensor::zeros(&[width]),
        }
    }
}

/// Which part of a block a parameter (or activation) belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockModule {
    Attn,
    Mlp,
    Norm,
}

/// Tensor names within a block, in the fixed flattening order used by
/// [`TransformerModel::read_layer_params`]: attention, then MLP, then norms.
pub const BLOCK_TENSOR_NAMES: [&str; 16] = [
    "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo", "mlp.w1",
    "mlp.b1", "mlp.w2", "mlp.b2", "norm1.gamma", "norm1.beta", "norm2.gamma", "norm2.beta",
];

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub attn: AttentionParams,
    pub mlp: MlpParams,
    pub norm1: NormParams,
    pub norm2: NormParams,
    /// Attention feature map `[B, N, C]` from the last capturing forward.
    pub last_attn_map: Option<Tensor>,
}

impl EncoderBlock {
    fn init(cfg: &ModelConfig, rng: &mut SeededRng) -> Self {
        let c = cfg.width;
        let m = cfg.mlp_width;
        let proj = |rng: &mut SeededRng| Tensor::randn(&[c, c], 1.0 / libm::sqrt(c as f64), rng);
        Self {
            attn: AttentionParams {
                wq: proj(rng),
                bq: Tensor::zeros(&[c]),
                wk: proj(rng),
                bk: Tensor::zeros(&[c]),
                wv: proj(rng),
                bv: Tensor::zeros(&[c]),
                wo: proj(rng),
                bo: Tensor::zeros(&[c]),
            },
            mlp: MlpParams {
                w1: Tensor::randn(&[c, m], 1.0 / libm::sqrt(c as f64), rng),
                b1: Tensor::zeros(&[m]),
                w2: Tensor::randn(&[m, c], 1.0 / libm::sqrt(m as f64), rng),
                b2: Tensor::zeros(&[c]),
            },
            norm1: NormParams::identity(c),
            norm2: NormParams::identity(c),
            last_attn_map: None,
        }
    }

    pub fn tensors(&self) -> [&Tensor; 16] {
        let (a, m) = (&self.attn, &self.mlp);
        [
            &a.wq,
            &a.bq,
            &a.wk,
            &a.bk,
            &a.wv,
            &a.bv,
            &a.wo,
            &a.bo,
            &m.w1,
            &m.b1,
            &m.w2,
            &m.b2,
            &self.norm1.gamma,
            &self.norm1.beta,
            &self.norm2.gamma,
            &self.norm2.beta,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        let (a, m) = (&mut self.attn, &mut self.mlp);
        [
            &mut a.wq,
            &mut a.bq,
            &mut a.wk,
            &mut a.bk,
            &mut a.wv,
            &mut a.bv,
            &mut a.wo,
            &mut a.bo,
            &mut m.w1,
            &mut m.b1,
            &mut m.w2,
            &mut m.b2,
            &mut self.norm1.gamma,
            &mut self.norm1.beta,
            &mut self.norm2.gamma,
            &mut self.norm2.beta,
        ]
    }

    /// Parameters of one module, flattened in [`BLOCK_TENSOR_NAMES`] order.
    pub fn module_params(&self, module: BlockModule) -> Vec<f64> {
        let range = match module {
            BlockModule::Attn => 0..8,
            BlockModule::Mlp => 8..12,
            BlockModule::Norm => 12..16,
        };
        self.tensors()[range].iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn is_all_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub token: Tensor,
    pub position: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub norm: NormParams,
    pub w: Tensor,
    pub b: Tensor,
}

/// Offset and shape of one tensor inside a flattened block vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub slots: Vec<TensorSlot>,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel {
    pub config: ModelConfig,
    pub embed: Embedding,
    pub blocks: Vec<EncoderBlock>,
    pub head: Head,
}

/// Tape handles produced by [`TransformerModel::forward_on_tape`].
#[derive(Debug)]
pub struct ForwardPass {
    /// `[B, N_C]`.
    pub logits: Var,
    /// Parameter leaves in [`TransformerModel::tensors`] order.
    pub params: Vec<Var>,
    /// Per block, the attention output before the residual add, `[B*N, C]`.
    pub attn_out: Vec<Var>,
    /// Per block, the MLP output before the residual add, `[B*N, C]`.
    pub mlp_out: Vec<Var>,
}

/// Plain-value result of [`TransformerModel::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Tensor,
    /// Per block `[B, N, C]` attention maps when captured.
    pub attn_maps: Option<Vec<Tensor>>,
}

/// Per-example module outputs, used for representation similarity.
#[derive(Clone, Debug)]
pub struct ModuleActivations {
    /// Per block, `[B, N*C]` attention outputs.
    pub attn: Vec<Tensor>,
    /// Per block, `[B, N*C]` MLP outputs.
    pub mlp: Vec<Tensor>,
}

impl TransformerModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        let c = config.width;
        let embed = Embedding {
            token: Tensor::randn(&[config.vocab, c], 1.0, &mut rng),
            position: Tensor::randn(&[config.seq_len, c], 0.1, &mut rng),
        };
        let blocks = (0..config.depth).map(|_| EncoderBlock::init(&config, &mut rng)).collect();
        let head = Head {
            norm: NormParams::identity(c),
            w: Tensor::randn(&[c, config.classes], 1.0 / libm::sqrt(c as f64), &mut rng),
            b: Tensor::zeros(&[config.classes]),
        };
        Ok(Self {
            config,
            embed,
            blocks,
            head,
        })
    }

    /// A model of the given shape with every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        for t in m.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(m)
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// All parameters: embedding, blocks in order, head.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed.token, &self.embed.position];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.extend([&self.head.norm.gamma, &self.head.norm.beta, &self.head.w, &self.head.b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embed.token, &mut self.embed.position];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        let h = &mut self.head;
        out.extend([&mut h.norm.gamma, &mut h.norm.beta, &mut h.w, &mut h.b]);
        out
    }

    /// Names matching [`Self::tensors`] order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec![String::from("embed.token"), String::from("embed.position")];
        for i in 0..self.blocks.len() {
            out.extend(BLOCK_TENSOR_NAMES.iter().map(|n| format!("blocks.{i}.{n}")));
        }
        out.extend(["head.norm.gamma", "head.norm.beta", "head.w", "head.b"].map(String::from));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn set_trainable(&mut self, on: bool) {
        for t in self.tensors_mut() {
            t.set_requires_grad(on);
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.tensors().iter().any(|t| t.requires_grad())
    }

    /// Moves gradients for this model's leaves out of `grads` into the
    /// parameter tensors.
    pub fn absorb_grads(&mut self, grads: &mut Gradients, pass: &ForwardPass) -> Result<()> {
        for (t, &v) in self.tensors_mut().into_iter().zip(&pass.params) {
            if let Some(g) = grads.take(v) {
                t.set_grad(g)?;
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &TokenBatch) -> Result<()> {
        if batch.seq_len() != self.config.seq_len {
            return Err(Error::SeqLenMismatch {
                expected: self.config.seq_len,
                got: batch.seq_len(),
            });
        }
        if let Some(&tok) = batch.tokens().iter().find(|&&t| t >= self.config.vocab) {
            return Err(Error::TokenOutOfVocab {
                token: tok,
                vocab: self.config.vocab,
            });
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. Parameters flagged
    /// `requires_grad` become differentiable leaves; the rest are constants.
    pub fn forward_on_tape(&self, tape: &mut Tape, batch: &TokenBatch) -> Result<ForwardPass> {
        self.check_batch(batch)?;
        let cfg = &self.config;
        let (b, n, c) = (batch.batch_size(), cfg.seq_len, cfg.width);
        if b == 0 {
            return Err(Error::EmptyBatches);
        }
        let params: Vec<Var> = self.tensors().into_iter().map(|t| tape.leaf(t)).collect();
        let mut p = params.iter().copied();
        let mut next = || p.next().expect("parameter list length is fixed");

        let tok_table = next();
        let pos_table = next();
        let tok = tape.gather_rows(tok_table, batch.tokens())?;
        let positions: Vec<usize> = (0..b * n).map(|i| i % n).collect();
        let pos = tape.gather_rows(pos_table, &positions)?;
        let mut x = tape.add(tok, pos)?;

        let scale = 1.0 / libm::sqrt(c as f64);
        let mut attn_out = Vec::with_capacity(self.blocks.len());
        let mut mlp_out = Vec::with_capacity(self.blocks.len());
        for _ in &self.blocks {
            let [wq, bq, wk, bk, wv, bv, wo, bo, w1, b1, w2, b2, g1, be1, g2, be2] = core::array::from_fn(|_| next());
            let h = tape.layer_norm(x, g1, be1)?;
            let q = tape.matmul(h, wq)?;
            let q = tape.add_bias(q, bq)?;
            let k = tape.matmul(h, wk)?;
            let k = tape.add_bias(k, bk)?;
            let v = tape.matmul(h, wv)?;
            let v = tape.add_bias(v, bv)?;
            let q3 = tape.reshape(q, &[b, n, c])?;
            let k3 = tape.reshape(k, &[b, n, c])?;
            let v3 = tape.reshape(v, &[b, n, c])?;
            let kt = tape.transpose(k3)?;
            let scores = tape.matmul(q3, kt)?;
            let scores = tape.scale(scores, scale)?;
            let probs = tape.softmax(scores)?;
            let ctx = tape.matmul(probs, v3)?;
            let ctx = tape.reshape(ctx, &[b * n, c])?;
            let o = tape.matmul(ctx, wo)?;
            let o = tape.add_bias(o, bo)?;
            attn_out.push(o);
            x = tape.add(x, o)?;

            let h2 = tape.layer_norm(x, g2, be2)?;
            let u = tape.matmul(h2, w1)?;
            let u = tape.add_bias(u, b1)?;
            let u = tape.gelu(u)?;
            let m = tape.matmul(u, w2)?;
            let m = tape.add_bias(m, b2)?;
            mlp_out.push(m);
            x = tape.add(x, m)?;
        }

        let (hg, hb, hw, hbias) = (next(), next(), next(), next());
        let mut pool = Tensor::zeros(&[b, b * n]);
        for i in 0..b {
            for j in 0..n {
                pool.data_mut()[i * b * n + i * n + j] = 1.0 / n as f64;
            }
        }
        let pool = tape.constant(pool);
        let pooled = tape.matmul(pool, x)?;
        let pooled = tape.layer_norm(pooled, hg, hb)?;
        let logits = tape.matmul(pooled, hw)?;
        let logits = tape.add_bias(logits, hbias)?;
        Ok(ForwardPass {
            logits,
            params,
            attn_out,
            mlp_out,
        })
    }

    /// Evaluates the model. Gradients are never recorded here.
    pub fn forward(&self, batch: &TokenBatch, capture_attn: bool) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let frozen;
        let model = if self.is_trainable() {
            frozen = self.frozen_copy();
            &frozen
        } else {
            self
        };
        let pass = model.forward_on_tape(&mut tape, batch)?;
        let attn_maps = if capture_attn {
            let (b, n, c) = (batch.batch_size(), self.config.seq_len, self.config.width);
            Some(
                pass.attn_out
                    .iter()
                    .map(|&v| tape.value(v).reshaped(&[b, n, c]))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(ForwardOutput {
            logits: tape.value(pass.logits).clone(),
            attn_maps,
        })
    }

    /// Forward that also stores each block's attention map in
    /// [`EncoderBlock::last_attn_map`].
    pub fn forward_capture(&mut self, batch: &TokenBatch) -> Result<Tensor> {
        let out = self.forward(batch, true)?;
        let maps = out.attn_maps.expect("captured");
        for (block, map) in self.blocks.iter_mut().zip(maps) {
            block.last_attn_map = Some(map);
        }
        Ok(out.logits)
    }

    /// Attention and MLP outputs per example, flattened over tokens.
    pub fn module_activations(&self, batch: &TokenBatch) -> Result<ModuleActivations> {
        let mut tape = Tape::new();
        let frozen = self.frozen_copy();
        let pass = frozen.forward_on_tape(&mut tape, batch)?;
        let (b, n, c) = (batch.batch_size(), self.config.seq_len, self.config.width);
        let flat = |v: Var| tape.value(v).reshaped(&[b, n * c]);
        Ok(ModuleActivations {
            attn: pass.attn_out.iter().map(|&v| flat(v)).collect::<Result<_>>()?,
            mlp: pass.mlp_out.iter().map(|&v| flat(v)).collect::<Result<_>>()?,
        })
    }

    /// Copy with `requires_grad` cleared on every parameter.
    pub fn frozen_copy(&self) -> Self {
        let mut m = self.clone();
        m.set_trainable(false);
        for b in &mut m.blocks {
            b.last_attn_map = None;
        }
        m
    }

    fn check_layer(&self, i: usize) -> Result<()> {
        if i >= self.blocks.len() {
            return Err(Error::IndexOutOfRange {
                what: "layer",
                index: i,
                len: self.blocks.len(),
            });
        }
        Ok(())
    }

    /// Copy of the model with every parameter of block `i` set to zero.
    pub fn ablate_layer(&self, i: usize) -> Result<Self> {
        self.check_layer(i)?;
        let mut m = self.clone();
        for t in m.blocks[i].tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(m)
    }

    pub fn block_layout(&self) -> BlockLayout {
        let mut slots = Vec::with_capacity(16);
        let mut offset = 0;
        let reference = EncoderBlock::init(&self.config, &mut SeededRng::new(0));
        for (name, t) in BLOCK_TENSOR_NAMES.iter().zip(reference.tensors()) {
            slots.push(TensorSlot {
                name: String::from(*name),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.numel();
        }
        BlockLayout { slots, len: offset }
    }

    /// Block `i` flattened: attention, MLP, norms (see [`BLOCK_TENSOR_NAMES`]).
    pub fn read_layer_params(&self, i: usize) -> Result<(Vec<f64>, BlockLayout)> {
        self.check_layer(i)?;
        let flat = self.blocks[i].tensors().iter().flat_map(|t| t.data().iter().copied()).collect();
        Ok((flat, self.block_layout()))
    }

    pub fn write_layer_params(&mut self, i: usize, flat: &[f64]) -> Result<()> {
        self.check_layer(i)?;
        let expected = self.config.block_param_count();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch {
                op: "write_layer_params",
                lhs: vec![expected],
                rhs: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for t in self.blocks[i].tensors_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// A shallower model that shares this model's embedding and head and
    /// copies the listed blocks, in the given order.
    pub fn with_blocks(&self, layers: &[usize]) -> Result<Self> {
        let mut blocks = Vec::with_capacity(layers.len());
        for &i in layers {
            self.check_layer(i)?;
            blocks.push(self.blocks[i].clone());
        }
        let mut m = self.frozen_copy();
        m.config.depth = layers.len();
        m.blocks = blocks;
        for b in &mut m.blocks {
            b.last_attn_map = None;
            for t in b.tensors_mut() {
                t.set_requires_grad(false);
            }
        }
        Ok(m)
    }

    /// `depth` evenly spaced blocks of this model (see [`Self::with_blocks`]).
    pub fn strided_subset(&self, depth: usize) -> Result<Self> {
        if depth == 0 || depth > self.depth() {
            return Err(Error::IndexOutOfRange {
                what: "student depth",
                index: depth,
                len: self.depth(),
            });
        }
        let layers: Vec<usize> = (0..depth).map(|i| i * self.depth() / depth).collect();
        self.with_blocks(&layers)
    }

    /// Bitwise parameter equality (ignores cached maps and grads).
    pub fn params_bitwise_eq(&self, other: &Self) -> bool {
        let (a, b) = (self.tensors(), other.tensors());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.bitwise_eq(y))
    }
}

/// Per-row argmax with ties broken toward the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let cols = logits.last_dim();
    logits
        .data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab: 10,
            seq_len: 4,
            width: 6,
            mlp_width: 8,
            depth: 2,
            classes: 3,
        }
    }

    fn batch(rows: &[[usize; 4]]) -> TokenBatch {
        TokenBatch::new(4, rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn zero_model_gives_uniform_logits() {
        let m = TransformerModel::zeros(tiny()).unwrap();
        let out = m.forward(&batch(&[[1, 2, 3, 4], [0, 0, 9, 9]]), false).unwrap();
        assert_eq!(out.logits.shape(), &[2, 3]);
        for row in out.logits.data().chunks(3) {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let m = TransformerModel::new(tiny(), 5).unwrap();
        let both = m.forward(&batch(&[[1, 2, 3, 4], [5, 6, 7, 8]]), false).unwrap().logits;
        let a = m.forward(&batch(&[[1, 2, 3, 4]]), false).unwrap().logits;
        let b = m.forward(&batch(&[[5, 6, 7, 8]]), false).unwrap().logits;
        for (x, y) in both.data()[..3].iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in both.data()[3..].iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn capture_does_not_change_logits() {
        let m = TransformerModel::new(tiny(), 9).unwrap();
        let bt = batch(&[[1, 2, 3, 4], [5, 6, 7, 8], [0, 1, 0, 1]]);
        let a = m.forward(&bt, false).unwrap();
        let b = m.forward(&bt, true).unwrap();
        assert!(a.logits.bitwise_eq(&b.logits));
        let maps = b.attn_maps.unwrap();
        assert_eq!(maps.len(), 2);
        assert!(maps.iter().all(|t| t.shape() == [3, 4, 6]));
    }

    #[test]
    fn forward_capture_populates_blocks() {
        let mut m = TransformerModel::new(tiny(), 9).unwrap();
        m.forward_capture(&batch(&[[1, 2, 3, 4]])).unwrap();
        assert!(m.blocks.iter().all(|b| b.last_attn_map.as_ref().unwrap().shape() == [1, 4, 6]));
    }

    #[test]
    fn bad_inputs_rejected() {
        let m = TransformerModel::new(tiny(), 1).unwrap();
        assert_eq!(
            m.forward(&batch(&[[1, 2, 3, 10]]), false).unwrap_err(),
            Error::TokenOutOfVocab { token: 10, vocab: 10 }
        );
        let short = TokenBatch::new(3, alloc::vec![1, 2, 3]).unwrap();
        assert_eq!(
            m.forward(&short, false).unwrap_err(),
            Error::SeqLenMismatch { expected: 4, got: 3 }
        );
    }

    #[test]
    fn ablate_zeroes_only_that_block() {
        let m = TransformerModel::new(tiny(), 2).unwrap();
        let a = m.ablate_layer(1).unwrap();
        assert!(a.blocks[1].is_all_zero());
        assert!(!m.blocks[1].is_all_zero());
        assert!(a.blocks[0].tensors().iter().zip(m.blocks[0].tensors()).all(|(x, y)| x.bitwise_eq(y)));
        assert!(a.embed.token.bitwise_eq(&m.embed.token));
        assert!(a.head.w.bitwise_eq(&m.head.w));
        assert!(matches!(m.ablate_layer(2), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn ablating_zero_block_is_noop() {
        let m = TransformerModel::new(tiny(), 2).unwrap().ablate_layer(0).unwrap();
        let again = m.ablate_layer(0).unwrap();
        let bt = batch(&[[3, 1, 4, 1]]);
        let a = m.forward(&bt, false).unwrap().logits;
        let b = again.forward(&bt, false).unwrap().logits;
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn layer_params_round_trip_and_count() {
        let cfg = tiny();
        let mut m = TransformerModel::new(cfg.clone(), 4).unwrap();
        let before = m.clone();
        let (flat, layout) = m.read_layer_params(1).unwrap();
        let (c, mm) = (cfg.width, cfg.mlp_width);
        assert_eq!(flat.len(), 4 * c * c + 4 * c + 2 * c * mm + c + mm + 4 * c);
        assert_eq!(layout.len, flat.len());
        assert_eq!(m.read_layer_params(0).unwrap().0.len(), flat.len());
        m.write_layer_params(1, &flat).unwrap();
        assert!(m.params_bitwise_eq(&before));
        assert!(m.write_layer_params(1, &flat[1..]).is_err());
        assert!(m.read_layer_params(5).is_err());
    }

    #[test]
    fn names_match_tensors() {
        let m = TransformerModel::new(tiny(), 0).unwrap();
        assert_eq!(m.tensor_names().len(), m.tensors().len());
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::new(alloc::vec![2, 3], alloc::vec![2.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&t), alloc::vec![0, 0]);
    }
}
