//! Straight-line reference implementations, written from the definitions
//! with plain loops and no tape.
#![allow(dead_code)]

use clda_core::model::TransformerModel;

fn param<'a>(model: &'a TransformerModel, name: &str) -> &'a [f64] {
    let idx = model.tensor_names().iter().position(|n| n == name).unwrap_or_else(|| panic!("no tensor {name}"));
    model.tensors()[idx].data()
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let c = x.len() as f64;
    let mu = x.iter().sum::<f64>() / c;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c;
    let r = 1.0 / (var + 1e-5).sqrt();
    x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mu) * r * g + b).collect()
}

/// `x [rows] (len k) @ w [k, n] + bias`.
fn affine(x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = bias.len();
    (0..n)
        .map(|j| bias[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * n + j]).sum::<f64>())
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

pub struct Trace {
    pub logits: Vec<f64>,
    /// Per block, `[N][C]` attention output.
    pub attn: Vec<Vec<Vec<f64>>>,
}

/// One example through the encoder. When `ablate` names a block, that
/// block's parameters are read as zeros.
pub fn forward_one(model: &TransformerModel, tokens: &[usize], ablate: Option<usize>) -> Trace {
    let cfg = &model.config;
    let (n, c) = (cfg.seq_len, cfg.width);
    let tok = param(model, "embed.token");
    let pos = param(model, "embed.position");
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|t| (0..c).map(|j| tok[tokens[t] * c + j] + pos[t * c + j]).collect())
        .collect();
    let mut attn = Vec::new();
    for l in 0..cfg.depth {
        let get = |name: &str| -> Vec<f64> {
            let v = param(model, &format!("blocks.{l}.{name}"));
            if ablate == Some(l) { vec![0.0; v.len()] } else { v.to_vec() }
        };
        let (wq, bq, wk, bk, wv, bv, wo, bo) = (
            get("attn.wq"), get("attn.bq"), get("attn.wk"), get("attn.bk"),
            get("attn.wv"), get("attn.bv"), get("attn.wo"), get("attn.bo"),
        );
        let (w1, b1, w2, b2) = (get("mlp.w1"), get("mlp.b1"), get("mlp.w2"), get("mlp.b2"));
        let (g1, be1, g2, be2) = (get("norm1.gamma"), get("norm1.beta"), get("norm2.gamma"), get("norm2.beta"));
        let h: Vec<Vec<f64>> = x.iter().map(|r| layer_norm(r, &g1, &be1)).collect();
        let q: Vec<Vec<f64>> = h.iter().map(|r| affine(r, &wq, &bq)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|r| affine(r, &wk, &bk)).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|r| affine(r, &wv, &bv)).collect();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (c as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let ctx: Vec<f64> = (0..c).map(|d| (0..n).map(|j| e[j] / z * v[j][d]).sum()).collect();
            out.push(affine(&ctx, &wo, &bo));
        }
        for i in 0..n {
            for d in 0..c {
                x[i][d] += out[i][d];
            }
        }
        attn.push(out);
        for row in x.iter_mut() {
            let h2 = layer_norm(row, &g2, &be2);
            let u: Vec<f64> = affine(&h2, &w1, &b1).into_iter().map(gelu).collect();
            let m = affine(&u, &w2, &b2);
            for d in 0..c {
                row[d] += m[d];
            }
        }
    }
    let pooled: Vec<f64> = (0..c).map(|d| x.iter().map(|r| r[d]).sum::<f64>() / n as f64).collect();
    let pooled = layer_norm(&pooled, param(model, "head.norm.gamma"), param(model, "head.norm.beta"));
    Trace {
        logits: affine(&pooled, param(model, "head.w"), param(model, "head.b")),
        attn,
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(model: &TransformerModel, examples: &[(Vec<usize>, usize)], ablate: Option<usize>) -> f64 {
    let hits = examples
        .iter()
        .filter(|(t, y)| argmax(&forward_one(model, t, ablate).logits) == *y)
        .count();
    hits as f64 / examples.len() as f64
}

/// `|acc - acc with block i zeroed|` for every block.
pub fn lsr(model: &TransformerModel, examples: &[(Vec<usize>, usize)]) -> Vec<f64> {
    let base = accuracy(model, examples, None);
    (0..model.config.depth)
        .map(|i| (base - accuracy(model, examples, Some(i))).abs())
        .collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n).map(|i| (0..m).map(|j| (0..k).map(|t| a[i][t] * b[t][j]).sum()).collect()).collect()
}

fn gram_centered(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let h: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) - 1.0 / n as f64).collect())
        .collect();
    matmul(&matmul(&h, &k), &h)
}

/// `HSIC(K, L) / sqrt(HSIC(K, K) HSIC(L, L))` with explicit centering
/// matrices.
pub fn linear_cka(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let (k, l) = (gram_centered(x), gram_centered(y));
    let dot = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u * v).sum::<f64>()).sum()
    };
    dot(&k, &l) / (dot(&k, &k) * dot(&l, &l)).sqrt()
}

/// Mean absolute difference of the named group (`"attn"` or `"mlp"`) of
/// block `layer`.
pub fn pvr(a: &TransformerModel, b: &TransformerModel, layer: usize, group: &str) -> f64 {
    let prefix = format!("blocks.{layer}.{group}.");
    let mut total = 0.0;
    let mut count = 0usize;
    for name in a.tensor_names().iter().filter(|n| n.starts_with(&prefix)) {
        for (x, y) in param(a, name).iter().zip(param(b, name)) {
            total += (x - y).abs();
            count += 1;
        }
    }
    total / count as f64
}

fn cos(x: &[f64], y: &[f64]) -> f64 {
    let d: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 { 0.0 } else { d / (nx * ny) }
}

/// Maps indexed `[b][n][c]`.
pub fn channel_similarity(t: &[Vec<Vec<f64>>], s: &[Vec<Vec<f64>>]) -> f64 {
    let c = t[0][0].len();
    (0..c)
        .map(|j| {
            let col = |m: &[Vec<Vec<f64>>]| -> Vec<f64> { m.iter().flat_map(|ex| ex.iter().map(move |tok| tok[j])).collect() };
            cos(&col(t), &col(s))
        })
        .sum()
}

pub fn token_similarity(t: &[Vec<Vec<f64>>], s: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    for (et, es) in t.iter().zip(s) {
        for (vt, vs) in et.iter().zip(es) {
            total += cos(vt, vs);
        }
    }
    total
}
