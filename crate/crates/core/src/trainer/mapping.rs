//! Attention-map similarity and teacher-to-student layer mapping.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_maps(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() || a.shape().len() != 3 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let s = a.shape();
    Ok((s[0], s[1], s[2]))
}

fn cosine_parts(dot: f64, na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (libm::sqrt(na) * libm::sqrt(nb))
    }
}

/// Sum over channels of the cosine between channel `j` of the two maps,
/// each channel flattened over batch and tokens.
pub fn channel_similarity(teacher: &Tensor, student: &Tensor) -> Result<f64> {
    let (b, n, c) = check_maps("channel_similarity", teacher, student)?;
    let (ta, sa) = (teacher.data(), student.data());
    let mut dot = vec![0.0; c];
    let mut nt = vec![0.0; c];
    let mut ns = vec![0.0; c];
    for row in 0..b * n {
        for j in 0..c {
            let (x, y) = (ta[row * c + j], sa[row * c + j]);
            dot[j] += x * y;
            nt[j] += x * x;
            ns[j] += y * y;
        }
    }
    Ok((0..c).map(|j| cosine_parts(dot[j], nt[j], ns[j])).sum())
}

/// Sum over every (example, token) of the cosine between channel vectors.
pub fn token_similarity(teacher: &Tensor, student: &Tensor) -> Result<f64> {
    let (_, _, c) = check_maps("token_similarity", teacher, student)?;
    Ok(teacher
        .data()
        .chunks(c)
        .zip(student.data().chunks(c))
        .map(|(x, y)| {
            let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            let nx: f64 = x.iter().map(|a| a * a).sum();
            let ny: f64 = y.iter().map(|a| a * a).sum();
            cosine_parts(dot, nx, ny)
        })
        .sum())
}

/// Cosine between the two maps flattened whole.
pub fn flat_similarity(teacher: &Tensor, student: &Tensor) -> Result<f64> {
    check_maps("flat_similarity", teacher, student)?;
    let (x, y) = (teacher.data(), student.data());
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum();
    let ny: f64 = y.iter().map(|a| a * a).sum();
    Ok(cosine_parts(dot, nx, ny))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Accumulated similarity per selected teacher layer and the resulting
/// student layer choice.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct MappingState {
    /// Selected teacher layers, ascending.
    pub gamma: Vec<usize>,
    /// For each teacher layer in `gamma`, summed similarity per student layer.
    pub accumulators: BTreeMap<usize, Vec<f64>>,
    /// Number of accumulation steps so far.
    pub steps_accumulated: usize,
    /// Chosen student layer per teacher layer, fixed at the end of the window.
    pub i_star: BTreeMap<usize, usize>,
}

impl MappingState {
    pub fn new(gamma: Vec<usize>, student_depth: usize) -> Self {
        let accumulators = gamma.iter().map(|&g| (g, vec![0.0; student_depth])).collect();
        Self {
            gamma,
            accumulators,
            steps_accumulated: 0,
            i_star: BTreeMap::new(),
        }
    }

    pub fn accumulate(&mut self, gamma: usize, scores: &[f64]) -> Result<()> {
        let acc = self.accumulators.get_mut(&gamma).ok_or(Error::IndexOutOfRange {
            what: "teacher layer (not selected)",
            index: gamma,
            len: 0,
        })?;
        if acc.len() != scores.len() {
            return Err(Error::ShapeMismatch {
                op: "accumulate",
                lhs: vec![acc.len()],
                rhs: vec![scores.len()],
            });
        }
        for (a, s) in acc.iter_mut().zip(scores) {
            *a += s;
        }
        Ok(())
    }

    pub fn is_fixed(&self) -> bool {
        !self.i_star.is_empty() || self.gamma.is_empty()
    }
}

/// `argmax_i` of the accumulated similarity for every selected teacher
/// layer.
pub fn select_mapping(state: &MappingState) -> Result<BTreeMap<usize, usize>> {
    let mut out = BTreeMap::new();
    for &g in &state.gamma {
        let acc = state.accumulators.get(&g).ok_or(Error::EmptyAccumulator)?;
        let best = argmax_first(acc).ok_or(Error::EmptyAccumulator)?;
        out.insert(g, best);
    }
    Ok(out)
}
