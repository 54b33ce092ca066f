//! Collaborative teacher-student learning for unsupervised domain adaptation.
//!
//! This crate is `no_std` (it needs `alloc`) and carries all of the numeric
//! work: a small reverse-mode tensor engine, a tiny transformer encoder
//! classifier, the synthetic domain-shift generator, the layer analysis
//! instruments (saliency, CKA, parameter variation) and the trainers.
//! File formats, the CLI and plotting live in the `clda-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod analysis;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{ModelConfig, TransformerModel};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
