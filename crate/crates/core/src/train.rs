//! Mini-batch SGD with L2 weight decay against scaled ratings, plus
//! RMSE/MAE evaluation on the raw rating scale.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::data::{Dataset, Interaction, RatingScale};
use crate::error::{Error, Result};
use crate::model::{dot, leaky_relu_grad, FeatureOverrides, MfModel, Model, ModelConfig, TableKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            learning_rate: 0.05,
            l2_reg: 1e-5,
            seed: 0,
            early_stop_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(Error::invalid("l2 regularization must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Sparse per-row gradients, ordered by key so updates are reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<K: Ord = TableKind> {
    rows: BTreeMap<(K, usize), Vec<f64>>,
    dim: usize,
}

impl<K: Ord + Copy> Gradients<K> {
    pub fn new(dim: usize) -> Self {
        Self {
            rows: BTreeMap::new(),
            dim,
        }
    }

    fn entry(&mut self, kind: K, row: usize) -> &mut Vec<f64> {
        let dim = self.dim;
        self.rows.entry((kind, row)).or_insert_with(|| vec![0.0; dim])
    }

    fn add_scaled(&mut self, kind: K, row: usize, scale: f64, v: &[f64]) {
        for (g, x) in self.entry(kind, row).iter_mut().zip(v) {
            *g += scale * x;
        }
    }

    pub fn get(&self, kind: K, row: usize) -> Option<&[f64]> {
        self.rows.get(&(kind, row)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = ((K, usize), &[f64])> + '_ {
        self.rows.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Anything that maps an observed interaction to a scaled rating.
pub trait Scorer {
    fn score(&self, catalog: &Catalog, r: &Interaction) -> Result<f64>;
    fn label(&self) -> String;
}

impl Scorer for Model {
    fn score(&self, catalog: &Catalog, r: &Interaction) -> Result<f64> {
        Ok(self
            .predict(catalog, r.user, r.item, &r.context, &FeatureOverrides::new())?
            .rating)
    }

    fn label(&self) -> String {
        self.config.variant.to_string()
    }
}

impl Scorer for MfModel {
    fn score(&self, _catalog: &Catalog, r: &Interaction) -> Result<f64> {
        self.predict(r.user, r.item)
    }

    fn label(&self) -> String {
        "mf".to_owned()
    }
}

/// Rows touched by one batch; the L2 term is charged once per row.
fn rows_touched<K: Ord + Copy>(grads: &Gradients<K>) -> Vec<(K, usize)> {
    grads.rows.keys().copied().collect()
}

/// Models trainable by the shared SGD loop.
pub trait Trainable: Scorer + Clone {
    type Key: Ord + Copy;

    /// Mean squared error plus L2 on touched rows, and its gradient.
    fn loss_and_gradients(&self, catalog: &Catalog, batch: &[&Interaction], l2: f64) -> Result<(f64, Gradients<Self::Key>)>;

    fn row(&self, key: (Self::Key, usize)) -> &[f64];

    fn row_mut(&mut self, key: (Self::Key, usize)) -> &mut [f64];

    fn is_finite(&self) -> bool;
}

impl Trainable for Model {
    type Key = TableKind;

    fn loss_and_gradients(&self, catalog: &Catalog, batch: &[&Interaction], l2: f64) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let slope = self.config.leaky_relu_slope;
        let space = &self.space;
        let scale = 1.0 / batch.len() as f64;
        let mut grads = Gradients::new(space.dim);
        let mut mse = 0.0;

        for r in batch {
            let item = catalog.item(r.item)?;
            let b = self.forward(&catalog.schema, r.user, item, &r.context, &FeatureOverrides::new())?;
            let residual = b.rating - r.rating;
            mse += residual * residual;
            let d_rating = 2.0 * residual * scale;
            let u_cs = &b.contextual_user;
            let mut d_ucs = vec![0.0; space.dim];

            // Aggregation, feature ratings and type importance.
            let mut d_importance = Vec::with_capacity(b.types.len());
            for t in &b.types {
                d_importance.push(d_rating * t.contribution);
                let d_p = d_rating * t.feature_weight();
                for f in &t.features {
                    grads.add_scaled(TableKind::Feature, f.feature, d_p, u_cs);
                    for (d, a) in d_ucs.iter_mut().zip(space.features.row(f.feature)) {
                        *d += d_p * a;
                    }
                }
            }
            if self.config.variant.learns_type_importance() {
                let s: f64 = b.types.iter().zip(&d_importance).map(|(t, d)| t.importance * d).sum();
                for (t, d_pi) in b.types.iter().zip(&d_importance) {
                    let beta = t.score.expect("learned variants record type scores");
                    let d_beta = t.importance * (d_pi - s) * leaky_relu_grad(beta, slope);
                    grads.add_scaled(TableKind::Type, t.type_idx, d_beta, u_cs);
                    for (d, x) in d_ucs.iter_mut().zip(space.types.row(t.type_idx)) {
                        *d += d_beta * x;
                    }
                }
            }

            // Context: u_cs = u + sum_f pi_f * cd_f.
            let mut d_user = d_ucs.clone();
            if !b.factors.is_empty() {
                let u = space.users.row(r.user);
                let mut d_pi = vec![0.0; b.factors.len()];
                for f in &b.factors {
                    if let Some(c) = f.condition {
                        grads.add_scaled(TableKind::Condition, c, f.importance, &d_ucs);
                        d_pi[f.factor] = dot(&d_ucs, space.conditions.row(c));
                    }
                }
                let s: f64 = b.factors.iter().map(|f| f.importance * d_pi[f.factor]).sum();
                for f in &b.factors {
                    let d_beta = f.importance * (d_pi[f.factor] - s) * leaky_relu_grad(f.score, slope);
                    grads.add_scaled(TableKind::Factor, f.factor, d_beta, u);
                    for (d, x) in d_user.iter_mut().zip(space.factors.row(f.factor)) {
                        *d += d_beta * x;
                    }
                }
            }
            grads.add_scaled(TableKind::User, r.user, 1.0, &d_user);
        }

        let mut loss = mse * scale;
        if l2 > 0.0 {
            for key in rows_touched(&grads) {
                let row = self.row(key);
                loss += l2 * dot(row, row);
                grads.add_scaled(key.0, key.1, 2.0 * l2, row);
            }
        }
        Ok((loss, grads))
    }

    fn row(&self, (kind, row): (TableKind, usize)) -> &[f64] {
        self.space.table(kind).row(row)
    }

    fn row_mut(&mut self, (kind, row): (TableKind, usize)) -> &mut [f64] {
        self.space.table_mut(kind).row_mut(row)
    }

    fn is_finite(&self) -> bool {
        self.space.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MfTable {
    User,
    Item,
}

impl Trainable for MfModel {
    type Key = MfTable;

    fn loss_and_gradients(&self, _catalog: &Catalog, batch: &[&Interaction], l2: f64) -> Result<(f64, Gradients<MfTable>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads = Gradients::new(self.dim);
        let mut mse = 0.0;
        for r in batch {
            let residual = self.predict(r.user, r.item)? - r.rating;
            mse += residual * residual;
            let d = 2.0 * residual * scale;
            grads.add_scaled(MfTable::User, r.user, d, self.items.row(r.item));
            grads.add_scaled(MfTable::Item, r.item, d, self.users.row(r.user));
        }
        let mut loss = mse * scale;
        if l2 > 0.0 {
            for key in rows_touched(&grads) {
                let row = self.row(key);
                loss += l2 * dot(row, row);
                grads.add_scaled(key.0, key.1, 2.0 * l2, row);
            }
        }
        Ok((loss, grads))
    }

    fn row(&self, (kind, row): (MfTable, usize)) -> &[f64] {
        match kind {
            MfTable::User => self.users.row(row),
            MfTable::Item => self.items.row(row),
        }
    }

    fn row_mut(&mut self, (kind, row): (MfTable, usize)) -> &mut [f64] {
        match kind {
            MfTable::User => self.users.row_mut(row),
            MfTable::Item => self.items.row_mut(row),
        }
    }

    fn is_finite(&self) -> bool {
        self.users.is_finite() && self.items.is_finite()
    }
}

pub fn loss<M: Trainable>(model: &M, catalog: &Catalog, batch: &[&Interaction], l2: f64) -> Result<f64> {
    Ok(model.loss_and_gradients(catalog, batch, l2)?.0)
}

pub fn gradients<M: Trainable>(model: &M, catalog: &Catalog, batch: &[&Interaction], l2: f64) -> Result<Gradients<M::Key>> {
    Ok(model.loss_and_gradients(catalog, batch, l2)?.1)
}

/// One plain SGD update `row -= lr * grad`.
pub fn sgd_step<M: Trainable>(model: &mut M, grads: &Gradients<M::Key>, learning_rate: f64) {
    for (key, g) in grads.iter() {
        for (w, g) in model.row_mut(key).iter_mut().zip(g) {
            *w -= learning_rate * g;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_rmse_raw: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub mode: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingLog {
    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record serializes") + "\n")
            .collect()
    }
}

/// Fits `model` in place of a fresh one, returning the epoch with the best
/// validation RMSE (the training split stands in when validation is empty).
pub fn fit<M: Trainable>(
    mut model: M,
    dataset: &Dataset,
    catalog: &Catalog,
    scale: &RatingScale,
    config: &TrainConfig,
) -> Result<(M, TrainingLog)> {
    config.validate()?;
    if dataset.split.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut order = dataset.split.train.clone();
    let valid_idx = if dataset.split.valid.is_empty() {
        &dataset.split.train
    } else {
        &dataset.split.valid
    };
    let valid: Vec<&Interaction> = valid_idx.iter().map(|&i| &dataset.interactions[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut best = model.clone();
    let mut best_rmse = evaluate(&model, catalog, valid.iter().copied(), scale)?.rmse_raw;
    let mut log = TrainingLog {
        mode: "sequential".to_owned(),
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut stale = 0usize;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Interaction> = chunk.iter().map(|&i| &dataset.interactions[i]).collect();
            let (loss, grads) = model.loss_and_gradients(catalog, &batch, config.l2_reg)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss;
            batches += 1;
            sgd_step(&mut model, &grads, config.learning_rate);
        }
        if !model.is_finite() {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        let rmse = evaluate(&model, catalog, valid.iter().copied(), scale)?.rmse_raw;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            valid_rmse_raw: rmse,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        if rmse < best_rmse {
            best_rmse = rmse;
            best = model.clone();
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if config.early_stop_patience > 0 && stale >= config.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, log))
}

pub fn train(
    dataset: &Dataset,
    catalog: &Catalog,
    model_config: ModelConfig,
    train_config: &TrainConfig,
    scale: &RatingScale,
) -> Result<(Model, TrainingLog)> {
    let model = Model::init(model_config, catalog)?;
    fit(model, dataset, catalog, scale, train_config)
}

pub fn train_mf(
    dataset: &Dataset,
    catalog: &Catalog,
    dim: usize,
    seed: u64,
    train_config: &TrainConfig,
    scale: &RatingScale,
) -> Result<(MfModel, TrainingLog)> {
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let model = MfModel::init(dim, catalog.users.len(), catalog.num_items(), seed);
    fit(model, dataset, catalog, scale, train_config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub n_test: usize,
    pub rmse_raw: f64,
    pub mae_raw: f64,
    pub rmse_scaled: f64,
    pub mae_scaled: f64,
}

/// RMSE/MAE with predictions clamped to `[-1, 1]`; raw-scale errors use the
/// inverse scale map on both prediction and target.
pub fn evaluate<'a, M: Scorer + ?Sized>(
    model: &M,
    catalog: &Catalog,
    interactions: impl IntoIterator<Item = &'a Interaction>,
    scale: &RatingScale,
) -> Result<EvalReport> {
    let mut n = 0usize;
    let (mut se_raw, mut ae_raw, mut se, mut ae) = (0.0, 0.0, 0.0, 0.0);
    for r in interactions {
        let pred = model.score(catalog, r)?.clamp(-1.0, 1.0);
        let err = pred - r.rating;
        let err_raw = scale.inverse(pred) - scale.inverse(r.rating);
        se += err * err;
        ae += err.abs();
        se_raw += err_raw * err_raw;
        ae_raw += err_raw.abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let n_f = n as f64;
    Ok(EvalReport {
        variant: model.label(),
        n_test: n,
        rmse_raw: (se_raw / n_f).sqrt(),
        mae_raw: ae_raw / n_f,
        rmse_scaled: (se / n_f).sqrt(),
        mae_scaled: ae / n_f,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::context::ContextualSituation;
    use crate::model::{EmbeddingSpace, SpaceShape, Variant};
    use crate::synth;

    fn toy() -> (Catalog, Model, Vec<Interaction>) {
        let catalog = Catalog::from_triples(
            [("a", "genre", "x"), ("a", "cast", "y"), ("b", "genre", "z")],
            crate::ContextSchema::empty(),
        )
        .map(|mut c| {
            c.users.intern("u");
            c
        })
        .unwrap();
        let model = Model::init(
            ModelConfig {
                dim: 3,
                variant: Variant::Fata,
                ..ModelConfig::default()
            },
            &catalog,
        )
        .unwrap();
        let rs = vec![
            Interaction {
                user: 0,
                item: 0,
                context: ContextualSituation::empty(),
                rating: 1.0,
            },
            Interaction {
                user: 0,
                item: 1,
                context: ContextualSituation::empty(),
                rating: -1.0,
            },
        ];
        (catalog, model, rs)
    }

    #[test]
    fn loss_examples() {
        let (catalog, mut model, mut rs) = toy();
        model.space = EmbeddingSpace::zeros(3, SpaceShape::of(&catalog));
        // r_hat = 0 everywhere.
        rs[0].rating = 0.0;
        assert_eq!(loss(&model, &catalog, &[&rs[0]], 0.0).unwrap(), 0.0);
        rs[0].rating = 1.0;
        assert_eq!(loss(&model, &catalog, &[&rs[0]], 0.0).unwrap(), 1.0);
        rs[0].rating = 0.5;
        rs[1].rating = -0.5;
        assert_eq!(loss(&model, &catalog, &[&rs[0], &rs[1]], 0.0).unwrap(), 0.25);
    }

    #[test]
    fn zero_embeddings_give_zero_feature_gradient() {
        let (catalog, mut model, rs) = toy();
        model.space = EmbeddingSpace::zeros(3, SpaceShape::of(&catalog));
        let g = gradients(&model, &catalog, &[&rs[0], &rs[1]], 0.0).unwrap();
        for f in 0..3 {
            if let Some(row) = g.get(TableKind::Feature, f) {
                assert!(row.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn l2_only_gradient() {
        let (catalog, model, mut rs) = toy();
        for r in &mut rs {
            r.rating = model.score(&catalog, r).unwrap();
        }
        let l2 = 0.3;
        let g = gradients(&model, &catalog, &[&rs[0]], l2).unwrap();
        assert!(!g.is_empty());
        for ((kind, row), grad) in g.iter() {
            let w = model.space.table(kind).row(row);
            for (gi, wi) in grad.iter().zip(w) {
                assert_abs_diff_eq!(*gi, 2.0 * l2 * wi, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn only_referenced_rows_get_gradients() {
        let (catalog, model, rs) = toy();
        let g = gradients(&model, &catalog, &[&rs[1]], 0.0).unwrap();
        // item b: one feature (z), one type (genre), one user.
        let keys: Vec<_> = g.iter().map(|(k, _)| k).collect();
        assert_eq!(keys.len(), 3);
        assert!(g.get(TableKind::Feature, catalog.features.get("x").unwrap()).is_none());
    }

    #[test]
    fn evaluate_examples() {
        let (catalog, model, mut rs) = toy();
        for r in &mut rs {
            r.rating = model.score(&catalog, r).unwrap();
        }
        let scale = RatingScale::new(1.0, 5.0).unwrap();
        let rep = evaluate(&model, &catalog, &rs, &scale).unwrap();
        assert_abs_diff_eq!(rep.rmse_raw, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.mae_raw, 0.0, epsilon = 1e-12);
        assert!(evaluate(&model, &catalog, &[], &scale).is_err());
    }

    struct Fixed(f64);
    impl Scorer for Fixed {
        fn score(&self, _: &Catalog, _: &Interaction) -> Result<f64> {
            Ok(self.0)
        }
        fn label(&self) -> String {
            "fixed".into()
        }
    }

    #[test]
    fn symmetric_raw_residuals() {
        let (catalog, _, mut rs) = toy();
        // raw scale [1, 5]: scaled 0 is raw 3; targets raw 2 and 4.
        let scale = RatingScale::new(1.0, 5.0).unwrap();
        rs[0].rating = scale.scale(2.0).unwrap();
        rs[1].rating = scale.scale(4.0).unwrap();
        let rep = evaluate(&Fixed(0.0), &catalog, &rs, &scale).unwrap();
        assert_abs_diff_eq!(rep.rmse_raw, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.mae_raw, 1.0, epsilon = 1e-12);
        assert!(rep.rmse_raw >= rep.mae_raw);
    }

    #[test]
    fn zero_learning_rate_keeps_embeddings() {
        let inst = synth::planted(&synth::PlantedSpec::small(), 11).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let start = Model::init(ModelConfig { dim: 4, ..ModelConfig::default() }, &inst.catalog).unwrap();
        let (out, log) = fit(start.clone(), &inst.dataset, &inst.catalog, &inst.scale, &cfg).unwrap();
        assert_eq!(out.space, start.space);
        assert_eq!(log.epochs.len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let inst = synth::planted(&synth::PlantedSpec::small(), 5).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let mc = ModelConfig {
            dim: 4,
            seed: 9,
            ..ModelConfig::default()
        };
        let (a, _) = train(&inst.dataset, &inst.catalog, mc, &cfg, &inst.scale).unwrap();
        let (b, _) = train(&inst.dataset, &inst.catalog, mc, &cfg, &inst.scale).unwrap();
        assert_eq!(a.space, b.space);
    }

    #[test]
    fn divergence_is_reported() {
        let inst = synth::planted(&synth::PlantedSpec::small(), 5).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 1,
            learning_rate: 1e6,
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        let err = train(&inst.dataset, &inst.catalog, ModelConfig::default(), &cfg, &inst.scale).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn small_step_does_not_increase_batch_loss() {
        let inst = synth::planted(&synth::PlantedSpec::small(), 21).unwrap();
        let model = Model::init(ModelConfig { dim: 8, ..ModelConfig::default() }, &inst.catalog).unwrap();
        let batch: Vec<&Interaction> = inst.dataset.train().take(32).collect();
        let (before, grads) = model.loss_and_gradients(&inst.catalog, &batch, 1e-5).unwrap();
        let mut stepped = model.clone();
        sgd_step(&mut stepped, &grads, 1e-4);
        let after = loss(&stepped, &inst.catalog, &batch, 1e-5).unwrap();
        assert!(after <= before, "{after} > {before}");
    }

    #[test]
    fn mf_baseline_learns() {
        let inst = synth::planted(&synth::PlantedSpec::small(), 2).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let (mf, log) = train_mf(&inst.dataset, &inst.catalog, 4, 1, &cfg, &inst.scale).unwrap();
        let first = log.epochs.first().unwrap().train_loss;
        let last = log.epochs.last().unwrap().train_loss;
        assert!(last < first);
        assert_eq!(mf.label(), "mf");
    }
}
