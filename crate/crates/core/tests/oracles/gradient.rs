//! Hand-derived gradients against central finite differences.

use cafata_core::data::Interaction;
use cafata_core::model::{TableKind, Variant};
use cafata_core::synth::{random_world, World, WorldLimits};
use cafata_core::train::{loss, Trainable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;

/// A d=4 world with context, learned type importance, and a batch that
/// touches all five embedding tables.
pub fn instance(rng: &mut ChaCha8Rng) -> (World, Vec<Interaction>) {
    let limits = WorldLimits {
        max_dim: 4,
        max_factors: 3,
        max_items: 4,
        ..WorldLimits::default()
    };
    loop {
        let mut w = random_world(&limits, rng);
        if w.catalog.schema.num_factors() == 0 || w.model.space.dim != 4 {
            continue;
        }
        w.model.config.variant = Variant::CaFata;
        let mut batch = Vec::new();
        for _ in 0..rng.random_range(1..=4) {
            let mut cs = w.random_situation(rng);
            while cs.is_empty() {
                cs = w.random_situation(rng);
            }
            batch.push(Interaction {
                user: rng.random_range(0..w.catalog.users.len()),
                item: rng.random_range(0..w.catalog.num_items()),
                context: cs,
                rating: rng.random_range(-1.0..1.0),
            });
        }
        // Keep clear of the LeakyReLU kink so central differences stay smooth.
        let near_kink = batch.iter().any(|r| {
            let b = w
                .model
                .predict(&w.catalog, r.user, r.item, &r.context, &Default::default())
                .unwrap();
            b.factors.iter().any(|f| f.score.abs() < 1e-2)
                || b.types.iter().any(|t| t.score.is_some_and(|s| s.abs() < 1e-2))
        });
        if !near_kink {
            return (w, batch);
        }
    }
}

pub fn max_relative_error(w: &World, batch: &[Interaction], l2: f64) -> (f64, Vec<TableKind>) {
    let refs: Vec<&Interaction> = batch.iter().collect();
    let (_, grads) = w.model.loss_and_gradients(&w.catalog, &refs, l2).unwrap();
    let mut worst: f64 = 0.0;
    let mut kinds = Vec::new();
    for kind in TableKind::ALL {
        let rows = w.model.space.table(kind).rows();
        for row in 0..rows {
            for j in 0..w.model.space.dim {
                let mut plus = w.model.clone();
                plus.space.table_mut(kind).row_mut(row)[j] += EPS;
                let mut minus = w.model.clone();
                minus.space.table_mut(kind).row_mut(row)[j] -= EPS;
                let fd = (loss(&plus, &w.catalog, &refs, l2).unwrap() - loss(&minus, &w.catalog, &refs, l2).unwrap())
                    / (2.0 * EPS);
                let g = grads.get(kind, row).map_or(0.0, |r| r[j]);
                if grads.get(kind, row).is_some() && !kinds.contains(&kind) {
                    kinds.push(kind);
                }
                let denom = g.abs().max(fd.abs()).max(1e-6);
                worst = worst.max((g - fd).abs() / denom);
            }
        }
    }
    (worst, kinds)
}

#[derive(Debug, Default)]
pub struct Sweep {
    pub trials: usize,
    pub worst: f64,
    pub covered: Vec<TableKind>,
    pub failures: Vec<String>,
}

/// `trials` random d=4 instances, alternating between no weight decay and
/// `l2 = 1e-2`.
pub fn sweep(seed: u64, trials: usize) -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Sweep {
        trials,
        ..Sweep::default()
    };
    for trial in 0..trials {
        let (w, batch) = instance(&mut rng);
        let l2 = if trial % 2 == 0 { 0.0 } else { 1e-2 };
        let (err, kinds) = max_relative_error(&w, &batch, l2);
        if !(err < REL_TOL) {
            out.failures.push(format!("trial {trial}: relative error {err}"));
        }
        out.worst = out.worst.max(err);
        for k in kinds {
            if !out.covered.contains(&k) {
                out.covered.push(k);
            }
        }
    }
    out
}
