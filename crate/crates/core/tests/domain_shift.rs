//! The synthetic domain pair behaves as a domain-adaptation benchmark:
//! no shift means no gap, shift 0.6 opens a gap that self-training narrows.
//!
//! Models are the small acceptance-scale encoders; splits use the default
//! vocabulary, sequence length and class count.

use clda_core::analysis::accuracy;
use clda_core::data::{gen_synthetic_domains, DomainDatasetSpec};
use clda_core::model::{ModelConfig, TransformerModel};
use clda_core::trainer::{train_source_only, train_teacher_baseline, BaselineConfig};

const SEEDS: u64 = 5;

fn spec(seed: u64, shift: f64) -> DomainDatasetSpec {
    DomainDatasetSpec {
        seed,
        shift,
        n_source: 1024,
        n_target: 1024,
        n_eval: 512,
        ..Default::default()
    }
}

fn model(depth: usize) -> ModelConfig {
    ModelConfig {
        vocab: 64,
        seq_len: 16,
        width: 16,
        mlp_width: 32,
        depth,
        classes: 4,
    }
}

fn baseline(seed: u64, steps: usize) -> BaselineConfig {
    BaselineConfig {
        total_steps: steps,
        seed,
        eval_every: steps,
        ..Default::default()
    }
}

/// `(source accuracy, target accuracy)` of a source-only model, both on
/// held-out data. Prototypes depend only on the seed, so the source split of
/// a twin spec with a different size is a fresh source-domain sample.
fn source_only(seed: u64, shift: f64, depth: usize) -> (f64, f64) {
    let data = gen_synthetic_domains(&spec(seed, shift)).unwrap();
    let source_eval = gen_synthetic_domains(&DomainDatasetSpec { n_source: 512, ..spec(seed, shift) }).unwrap().source;
    let m = train_source_only(&baseline(seed, 300), TransformerModel::new(model(depth), seed).unwrap(), &data)
        .unwrap()
        .model;
    (
        accuracy(&m, &source_eval.chunks(256)).unwrap(),
        accuracy(&m, &data.target_eval.chunks(256)).unwrap(),
    )
}

#[test]
fn no_shift_no_gap() {
    let mut gap = 0.0;
    for seed in 0..SEEDS {
        let (src, tgt) = source_only(seed, 0.0, 4);
        gap += (src - tgt) / SEEDS as f64;
    }
    assert!(gap.abs() < 0.02, "mean gap {gap}");
}

#[test]
fn shift_drops_source_only_accuracy() {
    let mut drop = 0.0;
    for seed in 0..SEEDS {
        let (src, tgt) = source_only(seed, 0.6, 4);
        drop += (src - tgt) / SEEDS as f64;
    }
    assert!(drop >= 0.10, "mean drop {drop}");
}

#[test]
fn self_training_beats_source_only_under_shift() {
    let mut gain = 0.0;
    for seed in 0..SEEDS {
        let data = gen_synthetic_domains(&spec(seed, 0.6)).unwrap();
        let st = train_teacher_baseline(&baseline(seed, 400), TransformerModel::new(model(8), seed).unwrap(), &data)
            .unwrap()
            .model;
        let so = train_source_only(&baseline(seed, 400), TransformerModel::new(model(8), seed).unwrap(), &data)
            .unwrap()
            .model;
        let eval = data.target_eval.chunks(256);
        gain += (accuracy(&st, &eval).unwrap() - accuracy(&so, &eval).unwrap()) / SEEDS as f64;
    }
    assert!(gain > 0.03, "mean gain {gain}");
}

#[test]
fn fixed_seed_teacher_is_bitwise_reproducible() {
    let data = gen_synthetic_domains(&DomainDatasetSpec {
        n_source: 128,
        n_target: 128,
        n_eval: 64,
        ..spec(3, 0.6)
    })
    .unwrap();
    let run = || train_teacher_baseline(&baseline(3, 20), TransformerModel::new(model(2), 3).unwrap(), &data).unwrap();
    let (a, b) = (run(), run());
    assert!(a.model.params_bitwise_eq(&b.model));
    assert_eq!(a.metrics, b.metrics);
}
