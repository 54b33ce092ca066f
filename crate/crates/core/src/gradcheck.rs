//! Finite-difference gradient checking.
//!
//! [`relative_errors`] compares tape gradients with central differences of
//! `sum(out * probe)` for a fixed random probe. [`cases`] lists one case per
//! differentiable op kind plus a chain through all of them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::rng::SeededRng;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

pub type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

fn probe_loss(inputs: &[Tensor], seed: u64, build: Build, grads: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(&x.clone().with_requires_grad())).collect();
    let out = build(&mut tape, &vars)?;
    let shape = tape.value(out).shape().to_vec();
    let probe = Tensor::randn(&shape, 1.0, &mut SeededRng::derived(seed, 99));
    let p = tape.constant(probe);
    let prod = tape.mul(out, p)?;
    let loss = tape.sum(prod)?;
    let value = tape.value(loss).data()[0];
    if !grads {
        return Ok((value, Vec::new()));
    }
    let g = tape.backward(loss)?;
    Ok((value, vars.iter().map(|&v| g.get(v).map(<[f64]>::to_vec).unwrap_or_default()).collect()))
}

/// Per input, `|g_tape - g_fd| / max(|g_tape|, |g_fd|)` in the 2-norm,
/// with central differences of step `h`.
pub fn relative_errors(inputs: &[Tensor], seed: u64, h: f64, build: Build) -> Result<Vec<f64>> {
    let (_, analytic) = probe_loss(inputs, seed, build, true)?;
    let mut out = Vec::with_capacity(inputs.len());
    for (k, x) in inputs.iter().enumerate() {
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nn = 0.0;
        for i in 0..x.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let fd = (probe_loss(&plus, seed, build, false)?.0 - probe_loss(&minus, seed, build, false)?.0) / (2.0 * h);
            let a = analytic[k][i];
            diff += (a - fd) * (a - fd);
            na += a * a;
            nn += fd * fd;
        }
        let scale = libm::sqrt(na).max(libm::sqrt(nn));
        out.push(if scale == 0.0 { 0.0 } else { libm::sqrt(diff) / scale });
    }
    Ok(out)
}

pub struct GradCase {
    pub name: &'static str,
    /// The op kinds the case exercises.
    pub kinds: &'static [OpKind],
    pub inputs: fn(u64) -> Vec<Tensor>,
    pub build: Build,
}

fn randn(shape: &[usize], seed: u64, stream: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut SeededRng::derived(seed, stream))
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SeededRng::derived(seed, 7);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| 0.5 + 2.0 * rng.uniform()).collect()).expect("sized")
}

fn chain(t: &mut Tape, v: &[Var]) -> Result<Var> {
    let x = t.gather_rows(v[0], &[1, 3, 5, 1])?;
    let x = t.reshape(x, &[2, 2, 4])?;
    let n = t.layer_norm(x, v[3], v[4])?;
    let w = t.gather_rows(v[1], &[0, 1, 2, 3, 0, 1, 2, 3])?;
    let w = t.reshape(w, &[2, 4, 4])?;
    let h = t.matmul(n, w)?;
    let h = t.add_bias(h, v[2])?;
    let g = t.gelu(h)?;
    let gt = t.transpose(g)?;
    let att = t.matmul(g, gt)?;
    let att = t.scale(att, 0.5)?;
    let p = t.softmax(att)?;
    let y = t.matmul(p, g)?;
    let y = t.add(y, x)?;
    let y = t.mul(y, y)?;
    let ls = t.log_softmax(y)?;
    let sp = t.softmax(ls)?;
    let lg = t.log(sp)?;
    let m = t.mean(lg)?;
    let total = t.sum(ls)?;
    let both = t.add(m, total)?;
    t.reshape(both, &[1])
}

pub fn cases() -> Vec<GradCase> {
    use OpKind as K;
    vec![
        GradCase {
            name: "matmul",
            kinds: &[K::MatMul],
            inputs: |s| vec![randn(&[3, 4], s, 1), randn(&[4, 5], s, 2)],
            build: |t, v| t.matmul(v[0], v[1]),
        },
        GradCase {
            name: "matmul_batched",
            kinds: &[K::MatMul],
            inputs: |s| vec![randn(&[2, 3, 4], s, 1), randn(&[2, 4, 3], s, 2)],
            build: |t, v| t.matmul(v[0], v[1]),
        },
        GradCase {
            name: "add",
            kinds: &[K::Add],
            inputs: |s| vec![randn(&[2, 3, 2], s, 1), randn(&[2, 3, 2], s, 2)],
            build: |t, v| t.add(v[0], v[1]),
        },
        GradCase {
            name: "add_bias",
            kinds: &[K::AddBias],
            inputs: |s| vec![randn(&[2, 3, 4], s, 1), randn(&[4], s, 2)],
            build: |t, v| t.add_bias(v[0], v[1]),
        },
        GradCase {
            name: "mul",
            kinds: &[K::Mul],
            inputs: |s| vec![randn(&[3, 4], s, 1), randn(&[3, 4], s, 2)],
            build: |t, v| t.mul(v[0], v[1]),
        },
        GradCase {
            name: "mul_self",
            kinds: &[K::Mul],
            inputs: |s| vec![randn(&[5], s, 1)],
            build: |t, v| t.mul(v[0], v[0]),
        },
        GradCase {
            name: "scale",
            kinds: &[K::Scale],
            inputs: |s| vec![randn(&[3, 3], s, 1)],
            build: |t, v| t.scale(v[0], -0.37),
        },
        GradCase {
            name: "softmax",
            kinds: &[K::Softmax],
            inputs: |s| vec![randn(&[2, 3, 5], s, 1)],
            build: |t, v| t.softmax(v[0]),
        },
        GradCase {
            name: "log_softmax",
            kinds: &[K::LogSoftmax],
            inputs: |s| vec![randn(&[4, 6], s, 1)],
            build: |t, v| t.log_softmax(v[0]),
        },
        GradCase {
            name: "layer_norm",
            kinds: &[K::LayerNorm],
            inputs: |s| vec![randn(&[2, 3, 6], s, 1), randn(&[6], s, 2), randn(&[6], s, 3)],
            build: |t, v| t.layer_norm(v[0], v[1], v[2]),
        },
        GradCase {
            name: "gelu",
            kinds: &[K::Gelu],
            inputs: |s| vec![randn(&[4, 5], s, 1)],
            build: |t, v| t.gelu(v[0]),
        },
        GradCase {
            name: "transpose",
            kinds: &[K::Transpose],
            inputs: |s| vec![randn(&[3, 5], s, 1)],
            build: |t, v| t.transpose(v[0]),
        },
        GradCase {
            name: "transpose_batched",
            kinds: &[K::Transpose],
            inputs: |s| vec![randn(&[2, 3, 4], s, 1)],
            build: |t, v| t.transpose(v[0]),
        },
        GradCase {
            name: "reshape",
            kinds: &[K::Reshape],
            inputs: |s| vec![randn(&[2, 6], s, 1)],
            build: |t, v| t.reshape(v[0], &[3, 4]),
        },
        GradCase {
            name: "mean",
            kinds: &[K::Mean],
            inputs: |s| vec![randn(&[3, 4], s, 1)],
            build: |t, v| t.mean(v[0]),
        },
        GradCase {
            name: "sum",
            kinds: &[K::Sum],
            inputs: |s| vec![randn(&[2, 2, 3], s, 1)],
            build: |t, v| t.sum(v[0]),
        },
        GradCase {
            name: "log",
            kinds: &[K::Log],
            inputs: |s| vec![positive(&[3, 4], s)],
            build: |t, v| t.log(v[0]),
        },
        GradCase {
            name: "gather_rows",
            kinds: &[K::Gather],
            inputs: |s| vec![randn(&[5, 3], s, 1)],
            build: |t, v| t.gather_rows(v[0], &[4, 0, 4, 2, 4]),
        },
        GradCase {
            name: "chain",
            kinds: &[
                K::MatMul,
                K::Add,
                K::AddBias,
                K::Mul,
                K::Scale,
                K::Softmax,
                K::LogSoftmax,
                K::LayerNorm,
                K::Gelu,
                K::Transpose,
                K::Reshape,
                K::Mean,
                K::Sum,
                K::Log,
                K::Gather,
            ],
            inputs: |s| {
                vec![
                    randn(&[6, 4], s, 1),
                    randn(&[4, 4], s, 2),
                    randn(&[4], s, 3),
                    randn(&[4], s, 4),
                    randn(&[4], s, 5),
                ]
            },
            build: chain,
        },
    ]
}
