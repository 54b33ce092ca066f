//! Structural checks of one collaborative run, observed step by step.
#![allow(dead_code)]

use clda_core::data::DomainData;
use clda_core::model::TransformerModel;
use clda_core::trainer::{run_clda, CldaConfig, CldaOutcome, EventKind, Observer};

#[derive(Debug)]
pub struct Check {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

struct Watch {
    initial: Vec<Vec<f64>>,
    non_gamma_changed: Vec<(usize, usize)>,
    convex_violations: usize,
    ema_calls: usize,
    gamma: Vec<usize>,
}

impl Observer for Watch {
    fn on_step(&mut self, step: usize, teacher: &TransformerModel, _student: &TransformerModel) {
        for l in 0..teacher.depth() {
            if self.gamma.contains(&l) {
                continue;
            }
            let (now, _) = teacher.read_layer_params(l).unwrap();
            let same = now.iter().zip(&self.initial[l]).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                self.non_gamma_changed.push((step, l));
            }
        }
    }

    fn on_ema(&mut self, _step: usize, gamma: usize, before: &[f64], student: &[f64], after: &[f64]) {
        self.ema_calls += 1;
        if !self.gamma.contains(&gamma) {
            self.gamma.push(gamma);
        }
        for ((a, b), x) in before.iter().zip(student).zip(after) {
            let slack = 2.0 * f64::EPSILON * a.abs().max(b.abs());
            if !(*x >= a.min(*b) - slack && *x <= a.max(*b) + slack) {
                self.convex_violations += 1;
            }
        }
    }
}

/// Runs the loop and returns one check per structural property, plus the
/// outcome for further inspection.
pub fn run_and_check(config: &CldaConfig, teacher: TransformerModel, student: TransformerModel, data: &DomainData) -> (Vec<Check>, CldaOutcome) {
    let initial_teacher = teacher.clone();
    let mut watch = Watch {
        initial: (0..teacher.depth()).map(|l| teacher.read_layer_params(l).unwrap().0).collect(),
        non_gamma_changed: Vec::new(),
        convex_violations: 0,
        ema_calls: 0,
        gamma: Vec::new(),
    };
    let out = run_clda(config, teacher, student, data, &mut watch).expect("run succeeds");
    let (t2, t3, total) = (config.stage2_start, config.stage3_start, config.total_steps);
    let gamma = out.mapping.gamma.clone();
    let mut checks = Vec::new();

    checks.push(Check {
        name: "teacher tapes register no gradient leaves",
        ok: out.teacher_grad_leaves == 0 && !out.teacher.is_trainable(),
        detail: format!("{} leaves", out.teacher_grad_leaves),
    });

    // layers outside gamma are compared against the starting teacher every step
    let late_changes: Vec<_> = watch.non_gamma_changed.iter().filter(|(_, l)| !gamma.contains(l)).collect();
    let final_non_gamma_same = (0..initial_teacher.depth()).filter(|l| !gamma.contains(l)).all(|l| {
        let a = initial_teacher.read_layer_params(l).unwrap().0;
        let b = out.teacher.read_layer_params(l).unwrap().0;
        a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let rest_same = {
        let names = initial_teacher.tensor_names();
        initial_teacher
            .tensors()
            .iter()
            .zip(out.teacher.tensors())
            .zip(&names)
            .filter(|(_, n)| !n.starts_with("blocks."))
            .all(|((a, b), _)| a.bitwise_eq(b))
    };
    checks.push(Check {
        name: "teacher parameters outside gamma bitwise constant",
        ok: late_changes.is_empty() && final_non_gamma_same && rest_same,
        detail: format!("gamma {gamma:?}, {} changed (step, layer) pairs", late_changes.len()),
    });

    let mut order_errors = Vec::new();
    for e in &out.events {
        let ok = match &e.kind {
            EventKind::LayerSaliency { .. } | EventKind::GammaSelected { .. } => e.step == t2,
            EventKind::Accumulate { .. } => (t2..=t3).contains(&e.step),
            EventKind::MappingFixed { .. } => e.step == t3,
            EventKind::EmaUpdate { .. } => e.step > t3 && e.step < total,
        };
        if !ok {
            order_errors.push(format!("{:?} at {}", e.kind, e.step));
        }
    }
    let saliency_count = out.events.iter().filter(|e| matches!(e.kind, EventKind::LayerSaliency { .. })).count();
    let fixed_count = out.events.iter().filter(|e| matches!(e.kind, EventKind::MappingFixed { .. })).count();
    let accumulate_steps = out
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Accumulate { .. }))
        .map(|e| e.step)
        .collect::<std::collections::BTreeSet<_>>();
    let ema_expected = gamma.len() * (total - t3 - 1);
    let windows_ok = order_errors.is_empty()
        && saliency_count == 1
        && (gamma.is_empty() || (fixed_count == 1 && accumulate_steps.len() == t3 - t2 + 1))
        && watch.ema_calls == ema_expected;
    checks.push(Check {
        name: "stage windows ordered",
        ok: windows_ok,
        detail: format!(
            "{} misplaced events, {} accumulate steps, {} ema updates (expected {ema_expected})",
            order_errors.len(),
            accumulate_steps.len(),
            watch.ema_calls
        ),
    });

    checks.push(Check {
        name: "EMA stays within the convex hull",
        ok: watch.convex_violations == 0,
        detail: format!("{} violations over {} updates", watch.convex_violations, watch.ema_calls),
    });
    (checks, out)
}
