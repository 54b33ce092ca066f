//! Parameter updates.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `param <- param - lr * grad`, then zero the gradients.
///
/// Fails without touching anything if any parameter lacks a gradient.
pub fn sgd_step(params: &mut [&mut Tensor], lr: f64) -> Result<()> {
    if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::MissingGrad(i));
    }
    for p in params.iter_mut() {
        let grad = p.take_grad().expect("checked above");
        for (w, g) in p.data_mut().iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        let zeros = vec![0.0; grad.len()];
        p.set_grad(zeros)?;
    }
    Ok(())
}

/// Adam with bias correction. Moment buffers are allocated lazily on the
/// first step and keyed by parameter position, so the parameter list must be
/// passed in the same order every step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::MissingGrad(i));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = p.take_grad().expect("checked above");
            if grad.len() != m.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: vec![m.len()],
                    rhs: vec![grad.len()],
                });
            }
            for (((w, g), mi), vi) in p.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
            p.set_grad(vec![0.0; grad.len()])?;
        }
        Ok(())
    }
}
