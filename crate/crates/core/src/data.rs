//! Token datasets: batches, splits, seeded batch iteration and the synthetic
//! source/target domain generator.
//!
//! Labeled data lives in [`LabeledSplit`]; the unlabeled target training
//! split is an [`UnlabeledSplit`], which has no label storage at all, so no
//! trainer can read target labels by construction.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Token ids laid out row-major as `[batch, seq_len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    seq_len: usize,
    tokens: Vec<usize>,
}

impl TokenBatch {
    pub fn new(seq_len: usize, tokens: Vec<usize>) -> Result<Self> {
        if seq_len == 0 || tokens.len() % seq_len != 0 {
            return Err(Error::SeqLenMismatch {
                expected: seq_len,
                got: tokens.len(),
            });
        }
        Ok(Self { seq_len, tokens })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn batch_size(&self) -> usize {
        self.tokens.len() / self.seq_len
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.tokens[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.batch_size(), self.seq_len]
    }

    pub fn select(&self, rows: &[usize]) -> TokenBatch {
        let mut tokens = Vec::with_capacity(rows.len() * self.seq_len);
        for &r in rows {
            tokens.extend_from_slice(self.row(r));
        }
        TokenBatch {
            seq_len: self.seq_len,
            tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledBatch {
    pub tokens: TokenBatch,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(tokens: TokenBatch, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != tokens.batch_size() {
            return Err(Error::ShapeMismatch {
                op: "labeled_batch",
                lhs: tokens.shape().to_vec(),
                rhs: alloc::vec![labels.len()],
            });
        }
        Ok(Self { tokens, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Common surface of the two split kinds.
pub trait Split {
    type Batch;
    fn len(&self) -> usize;
    fn seq_len(&self) -> usize;
    fn gather(&self, rows: &[usize]) -> Self::Batch;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSplit {
    tokens: TokenBatch,
    labels: Vec<usize>,
}

impl LabeledSplit {
    pub fn new(tokens: TokenBatch, labels: Vec<usize>) -> Result<Self> {
        let b = LabeledBatch::new(tokens, labels)?;
        Ok(Self {
            tokens: b.tokens,
            labels: b.labels,
        })
    }

    pub fn tokens(&self) -> &TokenBatch {
        &self.tokens
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn as_batch(&self) -> LabeledBatch {
        LabeledBatch {
            tokens: self.tokens.clone(),
            labels: self.labels.clone(),
        }
    }

    /// The first `n` examples (or all of them).
    pub fn head(&self, n: usize) -> LabeledBatch {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        self.gather(&rows)
    }

    /// Consecutive chunks of at most `size` examples, in order.
    pub fn chunks(&self, size: usize) -> Vec<LabeledBatch> {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(|start| {
                let rows: Vec<usize> = (start..(start + size).min(self.len())).collect();
                self.gather(&rows)
            })
            .collect()
    }

    /// Drops the labels, e.g. to treat a labeled split as target input.
    pub fn unlabeled(&self) -> UnlabeledSplit {
        UnlabeledSplit {
            tokens: self.tokens.clone(),
        }
    }
}

impl Split for LabeledSplit {
    type Batch = LabeledBatch;

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn seq_len(&self) -> usize {
        self.tokens.seq_len()
    }

    fn gather(&self, rows: &[usize]) -> LabeledBatch {
        LabeledBatch {
            tokens: self.tokens.select(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnlabeledSplit {
    tokens: TokenBatch,
}

impl UnlabeledSplit {
    pub fn new(tokens: TokenBatch) -> Self {
        Self { tokens }
    }

    pub fn tokens(&self) -> &TokenBatch {
        &self.tokens
    }

    pub fn chunks(&self, size: usize) -> Vec<TokenBatch> {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(|start| {
                let rows: Vec<usize> = (start..(start + size).min(self.len())).collect();
                self.gather(&rows)
            })
            .collect()
    }
}

impl Split for UnlabeledSplit {
    type Batch = TokenBatch;

    fn len(&self) -> usize {
        self.tokens.batch_size()
    }

    fn seq_len(&self) -> usize {
        self.tokens.seq_len()
    }

    fn gather(&self, rows: &[usize]) -> TokenBatch {
        self.tokens.select(rows)
    }
}

/// One shuffled epoch over a split; the trailing partial batch is dropped.
pub struct BatchIter<'a, S: Split> {
    split: &'a S,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<S: Split> Iterator for BatchIter<'_, S> {
    type Item = S::Batch;

    fn next(&mut self) -> Option<S::Batch> {
        if self.pos + self.batch_size > self.order.len() {
            return None;
        }
        let rows = &self.order[self.pos..self.pos + self.batch_size];
        self.pos += self.batch_size;
        Some(self.split.gather(rows))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos) / self.batch_size;
        (left, Some(left))
    }
}

impl<S: Split> ExactSizeIterator for BatchIter<'_, S> {}

pub fn batch_iter<S: Split>(split: &S, batch_size: usize, seed: u64) -> Result<BatchIter<'_, S>> {
    if batch_size == 0 || batch_size > split.len() {
        return Err(Error::BatchTooLarge {
            batch: batch_size,
            len: split.len(),
        });
    }
    let order = SeededRng::new(seed).permutation(split.len());
    Ok(BatchIter {
        split,
        order,
        batch_size,
        pos: 0,
    })
}

/// Endless batch stream: epoch `e` is a permutation seeded by `(seed, e)`.
pub struct BatchStream<'a, S: Split> {
    split: &'a S,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    current: BatchIter<'a, S>,
}

impl<'a, S: Split> BatchStream<'a, S> {
    pub fn new(split: &'a S, batch_size: usize, seed: u64) -> Result<Self> {
        let current = batch_iter(split, batch_size, epoch_seed(seed, 0))?;
        Ok(Self {
            split,
            batch_size,
            seed,
            epoch: 0,
            current,
        })
    }

    pub fn next_batch(&mut self) -> S::Batch {
        loop {
            if let Some(b) = self.current.next() {
                return b;
            }
            self.epoch += 1;
            self.current = batch_iter(self.split, self.batch_size, epoch_seed(self.seed, self.epoch))
                .expect("batch size validated at construction");
        }
    }
}

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Parameters of the synthetic domain pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainDatasetSpec {
    pub seed: u64,
    pub vocab: usize,
    pub seq_len: usize,
    pub classes: usize,
    /// Domain shift strength in `[0, 1]`; 0 makes the domains identical.
    pub shift: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub n_eval: usize,
}

impl Default for DomainDatasetSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab: 64,
            seq_len: 16,
            classes: 4,
            shift: 0.6,
            n_source: 2048,
            n_target: 2048,
            n_eval: 512,
        }
    }
}

impl DomainDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidSpec(msg));
        if !(0.0..=1.0).contains(&self.shift) {
            return bad(format!("shift {} outside [0, 1]", self.shift));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.vocab < 4 * self.classes {
            return bad(format!(
                "vocab {} too small for {} classes (need >= {})",
                self.vocab,
                self.classes,
                4 * self.classes
            ));
        }
        if self.seq_len == 0 {
            return bad("seq_len must be positive".into());
        }
        if self.n_source == 0 || self.n_target == 0 || self.n_eval == 0 {
            return bad("split sizes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainData {
    pub source: LabeledSplit,
    pub target_train: UnlabeledSplit,
    pub target_eval: LabeledSplit,
}

/// Probability that a position carries a domain-invariant class token.
const SHARED_RATE: f64 = 0.03;
/// Probability that a position carries a domain-specific class token.
const SPECIFIC_RATE: f64 = 0.2;

/// Token pools of the class prototypes.
///
/// Each class owns three disjoint pools: `shared` tokens mean the same
/// thing in both domains, `source` tokens are how the class shows up in the
/// source domain, and `target` tokens replace them in the target domain with
/// probability equal to the shift strength. Everything else is noise.
#[derive(Clone, Debug)]
struct Prototypes {
    shared: Vec<Vec<usize>>,
    source: Vec<Vec<usize>>,
    target: Vec<Vec<usize>>,
    noise: Vec<usize>,
}

impl Prototypes {
    fn new(spec: &DomainDatasetSpec, rng: &mut SeededRng) -> Self {
        let k = (spec.vocab / (4 * spec.classes)).max(1);
        let ids = rng.permutation(spec.vocab);
        let mut it = ids.into_iter();
        let mut take = |n: usize| -> Vec<usize> { it.by_ref().take(n).collect() };
        let shared = (0..spec.classes).map(|_| take(k)).collect();
        let source = (0..spec.classes).map(|_| take(k)).collect();
        let target = (0..spec.classes).map(|_| take(k)).collect();
        let noise = take(spec.vocab);
        Self {
            shared,
            source,
            target,
            noise,
        }
    }

    fn sample(&self, class: usize, shift: f64, seq_len: usize, rng: &mut SeededRng, out: &mut Vec<usize>) {
        for _ in 0..seq_len {
            let u = rng.uniform();
            let pick = |pool: &[usize], rng: &mut SeededRng| pool[rng.below(pool.len())];
            let tok = if u < SHARED_RATE {
                pick(&self.shared[class], rng)
            } else if u < SHARED_RATE + SPECIFIC_RATE {
                if rng.uniform() < shift {
                    pick(&self.target[class], rng)
                } else {
                    pick(&self.source[class], rng)
                }
            } else {
                pick(&self.noise, rng)
            };
            out.push(tok);
        }
    }
}

fn balanced_labels(n: usize, classes: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    rng.shuffle(&mut labels);
    labels
}

fn gen_split(
    protos: &Prototypes,
    spec: &DomainDatasetSpec,
    n: usize,
    shift: f64,
    rng: &mut SeededRng,
) -> (TokenBatch, Vec<usize>) {
    let labels = balanced_labels(n, spec.classes, rng);
    let mut tokens = Vec::with_capacity(n * spec.seq_len);
    for &c in &labels {
        protos.sample(c, shift, spec.seq_len, rng, &mut tokens);
    }
    (
        TokenBatch {
            seq_len: spec.seq_len,
            tokens,
        },
        labels,
    )
}

/// Generates the source, target-train and target-eval splits.
///
/// Splits are independent draws from separate random streams, so they are
/// disjoint as samples; every split is exactly class balanced (up to
/// rounding when the size is not a multiple of the class count).
pub fn gen_synthetic_domains(spec: &DomainDatasetSpec) -> Result<DomainData> {
    spec.validate()?;
    let protos = Prototypes::new(spec, &mut SeededRng::derived(spec.seed, 0));
    let (src_tokens, src_labels) = gen_split(&protos, spec, spec.n_source, 0.0, &mut SeededRng::derived(spec.seed, 1));
    let (tgt_tokens, _) = gen_split(&protos, spec, spec.n_target, spec.shift, &mut SeededRng::derived(spec.seed, 2));
    let (eval_tokens, eval_labels) = gen_split(&protos, spec, spec.n_eval, spec.shift, &mut SeededRng::derived(spec.seed, 3));
    Ok(DomainData {
        source: LabeledSplit::new(src_tokens, src_labels)?,
        target_train: UnlabeledSplit::new(tgt_tokens),
        target_eval: LabeledSplit::new(eval_tokens, eval_labels)?,
    })
}
