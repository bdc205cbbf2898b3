//! The forward pass: context-adapted user vector, feature-type importance,
//! per-feature ratings and their importance-weighted aggregation.
//!
//! Every intermediate quantity is kept in a [`PredictionBreakdown`] so the
//! argumentation and explanation layers can read them back without
//! recomputation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ItemFeatures};
use crate::context::{ContextSchema, ContextualSituation};
use crate::error::{Error, Result};

/// Model family. The `avg-*` variants fix type importance to `1/|types|`;
/// `fata` variants ignore context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    CaFata,
    Fata,
    AvgCaFata,
    AvgFata,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::CaFata, Variant::Fata, Variant::AvgCaFata, Variant::AvgFata];

    pub fn uses_context(self) -> bool {
        matches!(self, Variant::CaFata | Variant::AvgCaFata)
    }

    pub fn learns_type_importance(self) -> bool {
        matches!(self, Variant::CaFata | Variant::Fata)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CaFata => "ca-fata",
            Variant::Fata => "fata",
            Variant::AvgCaFata => "avg-ca-fata",
            Variant::AvgFata => "avg-fata",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::unknown("variant", s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub variant: Variant,
    pub leaky_relu_slope: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            variant: Variant::CaFata,
            leaky_relu_slope: 0.01,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if !(self.leaky_relu_slope > 0.0 && self.leaky_relu_slope < 1.0) {
            return Err(Error::invalid("leaky ReLU slope must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    User,
    Feature,
    Type,
    Factor,
    Condition,
}

impl TableKind {
    pub const ALL: [TableKind; 5] = [
        TableKind::User,
        TableKind::Feature,
        TableKind::Type,
        TableKind::Factor,
        TableKind::Condition,
    ];

    fn label(self) -> &'static str {
        match self {
            TableKind::User => "user",
            TableKind::Feature => "feature",
            TableKind::Type => "feature type",
            TableKind::Factor => "context factor",
            TableKind::Condition => "context condition",
        }
    }
}

/// Dense row-major embedding matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::invalid(format!("row of length {} in a {dim}-dim table", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            dim,
            data,
        })
    }

    /// Entries drawn from `uniform(-bound, bound)`.
    pub fn uniform(rows: usize, dim: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { rows, dim, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Row counts for each table of an [`EmbeddingSpace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceShape {
    pub users: usize,
    pub features: usize,
    pub types: usize,
    pub factors: usize,
    pub conditions: usize,
}

impl SpaceShape {
    pub fn of(catalog: &Catalog) -> Self {
        Self {
            users: catalog.users.len(),
            features: catalog.features.len(),
            types: catalog.types.len(),
            factors: catalog.schema.num_factors(),
            conditions: catalog.schema.num_conditions(),
        }
    }
}

/// All learned vectors: users, features, feature types, contextual factors
/// and contextual conditions, in one `dim`-dimensional space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpace {
    pub dim: usize,
    pub users: Table,
    pub features: Table,
    pub types: Table,
    pub factors: Table,
    pub conditions: Table,
}

impl EmbeddingSpace {
    pub fn zeros(dim: usize, shape: SpaceShape) -> Self {
        Self {
            dim,
            users: Table::zeros(shape.users, dim),
            features: Table::zeros(shape.features, dim),
            types: Table::zeros(shape.types, dim),
            factors: Table::zeros(shape.factors, dim),
            conditions: Table::zeros(shape.conditions, dim),
        }
    }

    /// Uniform `(-1/sqrt(dim), 1/sqrt(dim))` initialization, one table after
    /// another from a single seeded stream.
    pub fn random(dim: usize, shape: SpaceShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::uniform(dim, shape, 1.0 / (dim as f64).sqrt(), &mut rng)
    }

    pub fn uniform(dim: usize, shape: SpaceShape, bound: f64, rng: &mut impl Rng) -> Self {
        Self {
            dim,
            users: Table::uniform(shape.users, dim, bound, rng),
            features: Table::uniform(shape.features, dim, bound, rng),
            types: Table::uniform(shape.types, dim, bound, rng),
            factors: Table::uniform(shape.factors, dim, bound, rng),
            conditions: Table::uniform(shape.conditions, dim, bound, rng),
        }
    }

    pub fn table(&self, kind: TableKind) -> &Table {
        match kind {
            TableKind::User => &self.users,
            TableKind::Feature => &self.features,
            TableKind::Type => &self.types,
            TableKind::Factor => &self.factors,
            TableKind::Condition => &self.conditions,
        }
    }

    pub fn table_mut(&mut self, kind: TableKind) -> &mut Table {
        match kind {
            TableKind::User => &mut self.users,
            TableKind::Feature => &mut self.features,
            TableKind::Type => &mut self.types,
            TableKind::Factor => &mut self.factors,
            TableKind::Condition => &mut self.conditions,
        }
    }

    pub fn shape(&self) -> SpaceShape {
        SpaceShape {
            users: self.users.rows(),
            features: self.features.rows(),
            types: self.types.rows(),
            factors: self.factors.rows(),
            conditions: self.conditions.rows(),
        }
    }

    pub fn is_finite(&self) -> bool {
        TableKind::ALL.iter().all(|&k| self.table(k).is_finite())
    }

    pub(crate) fn check(&self, kind: TableKind, index: usize) -> Result<()> {
        let len = self.table(kind).rows();
        if index < len {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                kind: kind.label(),
                index,
                len,
            })
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub(crate) fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Per-user replacements for feature ratings, applied before aggregation.
/// Muting a feature is an override to `0.0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureOverrides(BTreeMap<usize, f64>);

impl FeatureOverrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, feature: usize) -> Option<f64> {
        self.0.get(&feature).copied()
    }

    pub fn set(&mut self, feature: usize, rating: f64) {
        self.0.insert(feature, rating);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|(&f, &r)| (f, r))
    }
}

impl FromIterator<(usize, f64)> for FeatureOverrides {
    fn from_iter<T: IntoIterator<Item = (usize, f64)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTerm {
    pub factor: usize,
    /// Condition the situation assigns to this factor, if any.
    pub condition: Option<usize>,
    pub score: f64,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTerm {
    pub feature: usize,
    pub rating: f64,
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeTerm {
    pub type_idx: usize,
    /// Absent for the uniform-importance variants.
    pub score: Option<f64>,
    pub importance: f64,
    pub contribution: f64,
    pub features: Vec<FeatureTerm>,
}

impl TypeTerm {
    /// `importance / |features of this type|`: the coefficient of each of
    /// this type's feature ratings in the final rating.
    pub fn feature_weight(&self) -> f64 {
        self.importance / self.features.len() as f64
    }
}

/// One feature's additive share of a prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attribution {
    pub feature: usize,
    pub type_idx: usize,
    pub rating: f64,
    pub weight: f64,
    pub type_importance: f64,
}

impl Attribution {
    pub fn contribution(&self) -> f64 {
        self.weight * self.rating
    }
}

/// Full trace of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBreakdown {
    pub user: usize,
    /// Catalog item, when the features came from one.
    pub item: Option<usize>,
    pub context: ContextualSituation,
    /// Empty when context is not used.
    pub factors: Vec<FactorTerm>,
    pub contextual_user: Vec<f64>,
    pub types: Vec<TypeTerm>,
    pub rating: f64,
}

impl PredictionBreakdown {
    pub fn attributions(&self) -> impl Iterator<Item = Attribution> + '_ {
        self.types.iter().flat_map(|t| {
            let weight = t.feature_weight();
            t.features.iter().map(move |f| Attribution {
                feature: f.feature,
                type_idx: t.type_idx,
                rating: f.rating,
                weight,
                type_importance: t.importance,
            })
        })
    }

    pub fn attribution(&self, feature: usize) -> Option<Attribution> {
        self.attributions().find(|a| a.feature == feature)
    }

    pub fn num_features(&self) -> usize {
        self.types.iter().map(|t| t.features.len()).sum()
    }

    /// The assigned condition whose factor has the highest importance.
    pub fn top_context(&self) -> Option<&FactorTerm> {
        self.factors
            .iter()
            .filter(|f| f.condition.is_some())
            .fold(None, |best: Option<&FactorTerm>, f| match best {
                Some(b) if b.importance >= f.importance => Some(b),
                _ => Some(f),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub space: EmbeddingSpace,
}

impl Model {
    /// Freshly initialized model sized for `catalog`.
    pub fn init(config: ModelConfig, catalog: &Catalog) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            space: EmbeddingSpace::random(config.dim, SpaceShape::of(catalog), config.seed),
        })
    }

    pub fn new(config: ModelConfig, space: EmbeddingSpace) -> Result<Self> {
        config.validate()?;
        if space.dim != config.dim {
            return Err(Error::invalid("embedding space dimension differs from config"));
        }
        Ok(Self { config, space })
    }

    /// Errors unless the tables match `catalog` and the configured dimension.
    pub fn check_shape(&self, catalog: &Catalog) -> Result<()> {
        let dim = self.config.dim;
        if self.space.dim != dim {
            return Err(Error::invalid("embedding space dimension differs from config"));
        }
        for kind in TableKind::ALL {
            let t = self.space.table(kind);
            if t.dim() != dim || t.as_slice().len() != t.rows() * dim {
                return Err(Error::invalid(format!("{} table is malformed", kind.label())));
            }
        }
        if self.space.shape() != SpaceShape::of(catalog) {
            return Err(Error::invalid("embedding tables do not match the catalog"));
        }
        Ok(())
    }

    fn slope(&self) -> f64 {
        self.config.leaky_relu_slope
    }

    /// Raw scores `u . cf` and their softmax-normalized importance over every
    /// factor in the schema.
    pub fn context_factor_importance(&self, user: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.space.check(TableKind::User, user)?;
        let n = self.space.factors.rows();
        if n == 0 {
            return Err(Error::invalid("context schema has no factors"));
        }
        let u = self.space.users.row(user);
        let scores: Vec<f64> = (0..n).map(|f| dot(u, self.space.factors.row(f))).collect();
        let logits: Vec<f64> = scores.iter().map(|&s| leaky_relu(s, self.slope())).collect();
        Ok((scores, softmax(&logits)))
    }

    /// `u + sum over assigned conditions of importance(factor) * cd`.
    /// Context-free variants and empty situations return `u` unchanged.
    pub fn contextual_user_embedding(
        &self,
        user: usize,
        cs: &ContextualSituation,
        schema: &ContextSchema,
    ) -> Result<Vec<f64>> {
        Ok(self.contextual_user(user, cs, schema)?.1)
    }

    fn contextual_user(
        &self,
        user: usize,
        cs: &ContextualSituation,
        schema: &ContextSchema,
    ) -> Result<(Vec<FactorTerm>, Vec<f64>)> {
        self.space.check(TableKind::User, user)?;
        let mut u_cs = self.space.users.row(user).to_vec();
        if !self.config.variant.uses_context() || cs.is_empty() {
            return Ok((Vec::new(), u_cs));
        }
        let (scores, importance) = self.context_factor_importance(user)?;
        let mut factors: Vec<FactorTerm> = scores
            .iter()
            .zip(&importance)
            .enumerate()
            .map(|(factor, (&score, &importance))| FactorTerm {
                factor,
                condition: None,
                score,
                importance,
            })
            .collect();
        for &c in cs.conditions() {
            let f = schema
                .condition_factor(c)
                .ok_or_else(|| Error::unknown("context condition", c.to_string()))?;
            self.space.check(TableKind::Condition, c)?;
            self.space.check(TableKind::Factor, f)?;
            factors[f].condition = Some(c);
            let w = importance[f];
            for (x, cd) in u_cs.iter_mut().zip(self.space.conditions.row(c)) {
                *x += w * cd;
            }
        }
        Ok((factors, u_cs))
    }

    /// Type scores (absent for uniform variants) and importance normalized
    /// over exactly the item's own types.
    pub fn feature_type_importance(&self, u_cs: &[f64], item: &ItemFeatures) -> Result<(Option<Vec<f64>>, Vec<f64>)> {
        if item.groups.is_empty() {
            return Err(Error::invalid("item has no feature types"));
        }
        if !self.config.variant.learns_type_importance() {
            let n = item.groups.len();
            return Ok((None, vec![1.0 / n as f64; n]));
        }
        let mut scores = Vec::with_capacity(item.groups.len());
        for g in &item.groups {
            self.space.check(TableKind::Type, g.type_idx)?;
            scores.push(dot(u_cs, self.space.types.row(g.type_idx)));
        }
        let logits: Vec<f64> = scores.iter().map(|&s| leaky_relu(s, self.slope())).collect();
        let importance = softmax(&logits);
        Ok((Some(scores), importance))
    }

    /// `u_cs . at`, unclamped.
    pub fn feature_rating(&self, u_cs: &[f64], feature: usize) -> Result<f64> {
        self.space.check(TableKind::Feature, feature)?;
        Ok(dot(u_cs, self.space.features.row(feature)))
    }

    /// Forward pass for an arbitrary feature set (need not be a catalog item).
    pub fn forward(
        &self,
        schema: &ContextSchema,
        user: usize,
        item: &ItemFeatures,
        cs: &ContextualSituation,
        overrides: &FeatureOverrides,
    ) -> Result<PredictionBreakdown> {
        let (factors, u_cs) = self.contextual_user(user, cs, schema)?;
        let (scores, importance) = self.feature_type_importance(&u_cs, item)?;
        let mut types = Vec::with_capacity(item.groups.len());
        let mut rating = 0.0;
        for (k, g) in item.groups.iter().enumerate() {
            if g.features.is_empty() {
                return Err(Error::invalid("feature type group without features"));
            }
            let mut features = Vec::with_capacity(g.features.len());
            let mut sum = 0.0;
            for &f in &g.features {
                let model_rating = self.feature_rating(&u_cs, f)?;
                let (rating, overridden) = match overrides.get(f) {
                    Some(r) => (r, true),
                    None => (model_rating, false),
                };
                sum += rating;
                features.push(FeatureTerm {
                    feature: f,
                    rating,
                    overridden,
                });
            }
            let contribution = sum / g.features.len() as f64;
            rating += importance[k] * contribution;
            types.push(TypeTerm {
                type_idx: g.type_idx,
                score: scores.as_ref().map(|s| s[k]),
                importance: importance[k],
                contribution,
                features,
            });
        }
        let context = if self.config.variant.uses_context() {
            cs.clone()
        } else {
            ContextualSituation::empty()
        };
        Ok(PredictionBreakdown {
            user,
            item: None,
            context,
            factors,
            contextual_user: u_cs,
            types,
            rating,
        })
    }

    pub fn predict(
        &self,
        catalog: &Catalog,
        user: usize,
        item: usize,
        cs: &ContextualSituation,
        overrides: &FeatureOverrides,
    ) -> Result<PredictionBreakdown> {
        let mut b = self.forward(&catalog.schema, user, catalog.item(item)?, cs, overrides)?;
        b.item = Some(item);
        Ok(b)
    }

    /// Model-side rating of `feature` for `user` under `cs`, ignoring overrides.
    pub fn user_feature_rating(
        &self,
        schema: &ContextSchema,
        user: usize,
        feature: usize,
        cs: &ContextualSituation,
    ) -> Result<f64> {
        let u_cs = self.contextual_user_embedding(user, cs, schema)?;
        self.feature_rating(&u_cs, feature)
    }
}

/// Plain matrix factorization: `rating = p_u . q_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    pub dim: usize,
    pub users: Table,
    pub items: Table,
}

impl MfModel {
    pub fn init(dim: usize, num_users: usize, num_items: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            dim,
            users: Table::uniform(num_users, dim, bound, &mut rng),
            items: Table::uniform(num_items, dim, bound, &mut rng),
        }
    }

    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.users.rows() {
            return Err(Error::OutOfRange {
                kind: "user",
                index: user,
                len: self.users.rows(),
            });
        }
        if item >= self.items.rows() {
            return Err(Error::OutOfRange {
                kind: "item",
                index: item,
                len: self.items.rows(),
            });
        }
        Ok(dot(self.users.row(user), self.items.row(item)))
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::catalog::TypeGroup;

    fn space_with(
        dim: usize,
        users: &[Vec<f64>],
        features: &[Vec<f64>],
        types: &[Vec<f64>],
        factors: &[Vec<f64>],
        conditions: &[Vec<f64>],
    ) -> EmbeddingSpace {
        EmbeddingSpace {
            dim,
            users: Table::from_rows(users, dim).unwrap(),
            features: Table::from_rows(features, dim).unwrap(),
            types: Table::from_rows(types, dim).unwrap(),
            factors: Table::from_rows(factors, dim).unwrap(),
            conditions: Table::from_rows(conditions, dim).unwrap(),
        }
    }

    fn config(variant: Variant) -> ModelConfig {
        ModelConfig {
            dim: 2,
            variant,
            ..ModelConfig::default()
        }
    }

    /// d=2, u=(1,0), two types with equal vectors, type A feature (0.5,0),
    /// type B feature (-0.25,0).
    fn worked() -> (Model, ItemFeatures) {
        let space = space_with(
            2,
            &[vec![1.0, 0.0]],
            &[vec![0.5, 0.0], vec![-0.25, 0.0]],
            &[vec![0.3, 0.3], vec![0.3, 0.3]],
            &[],
            &[],
        );
        let item = ItemFeatures {
            groups: vec![
                TypeGroup {
                    type_idx: 0,
                    features: vec![0],
                },
                TypeGroup {
                    type_idx: 1,
                    features: vec![1],
                },
            ],
        };
        (Model::new(config(Variant::CaFata), space).unwrap(), item)
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[3.7]), vec![1.0]);
        let p = softmax(&[std::f64::consts::LN_2, 0.0]);
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-12);
        let l = leaky_relu(-1.0, 0.01);
        assert_eq!(softmax(&[l, l]), vec![0.5, 0.5]);
    }

    #[test]
    fn single_factor_importance_is_one() {
        let space = space_with(2, &[vec![0.4, -2.0]], &[], &[], &[vec![1.0, 1.0]], &[vec![0.1, 0.2]]);
        let m = Model::new(config(Variant::CaFata), space).unwrap();
        let (_, pi) = m.context_factor_importance(0).unwrap();
        assert_eq!(pi, vec![1.0]);
    }

    #[test]
    fn no_factors_is_an_error() {
        let (m, _) = worked();
        assert!(m.context_factor_importance(0).is_err());
    }

    #[test]
    fn contextual_user_examples() {
        let schema = ContextSchema::new([("f", Vec::<String>::new())]).unwrap();
        // Only condition is `unknown` (index 0).
        let space = space_with(2, &[vec![1.0, 0.0]], &[], &[], &[vec![0.7, 0.1]], &[vec![0.1, 0.2]]);
        let m = Model::new(config(Variant::CaFata), space).unwrap();
        let cs = ContextualSituation::new([0], &schema).unwrap();
        let u_cs = m.contextual_user_embedding(0, &cs, &schema).unwrap();
        assert_abs_diff_eq!(u_cs[0], 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(u_cs[1], 0.2, epsilon = 1e-12);
        let plain = m.contextual_user_embedding(0, &ContextualSituation::empty(), &schema).unwrap();
        assert_eq!(plain, vec![1.0, 0.0]);
    }

    #[test]
    fn two_factor_weighted_sum() {
        // beta = (ln 2, 0) gives pi = (2/3, 1/3); u is subtracted back out.
        let schema = ContextSchema::new([("a", Vec::<String>::new()), ("b", Vec::<String>::new())]).unwrap();
        let ln2 = std::f64::consts::LN_2;
        let space = space_with(
            2,
            &[vec![1.0, 0.0]],
            &[],
            &[],
            &[vec![ln2, 0.0], vec![0.0, 0.0]],
            &[vec![0.3, 0.0], vec![0.0, 0.3]],
        );
        let m = Model::new(config(Variant::CaFata), space).unwrap();
        let cs = ContextualSituation::new([0, 1], &schema).unwrap();
        let u_cs = m.contextual_user_embedding(0, &cs, &schema).unwrap();
        assert_abs_diff_eq!(u_cs[0] - 1.0, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(u_cs[1], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn type_importance_avg_variants() {
        let (mut m, _) = worked();
        m.config.variant = Variant::AvgCaFata;
        let five = ItemFeatures {
            groups: (0..5)
                .map(|t| TypeGroup {
                    type_idx: t,
                    features: vec![0],
                })
                .collect(),
        };
        let (scores, pi) = m.feature_type_importance(&[1.0, 0.0], &five).unwrap();
        assert!(scores.is_none());
        assert!(pi.iter().all(|&p| p == 0.2));
        let three = ItemFeatures {
            groups: five.groups[..3].to_vec(),
        };
        let (_, pi) = m.feature_type_importance(&[1.0, 0.0], &three).unwrap();
        assert!(pi.iter().all(|&p| (p - 0.33).abs() < 0.01));
    }

    #[test]
    fn feature_rating_examples() {
        let space = space_with(
            2,
            &[vec![0.0, 0.0]],
            &[vec![0.5, 0.0], vec![0.0, 3.0], vec![-0.25, 0.0]],
            &[],
            &[],
            &[],
        );
        let m = Model::new(config(Variant::Fata), space).unwrap();
        assert_eq!(m.feature_rating(&[1.0, 0.0], 0).unwrap(), 0.5);
        assert_eq!(m.feature_rating(&[1.0, 0.0], 1).unwrap(), 0.0);
        assert_eq!(m.feature_rating(&[1.0, 1.0], 2).unwrap(), -0.25);
    }

    #[test]
    fn worked_instance() {
        let (m, item) = worked();
        let schema = ContextSchema::empty();
        let cs = ContextualSituation::empty();
        let b = m.forward(&schema, 0, &item, &cs, &FeatureOverrides::new()).unwrap();
        assert_eq!(b.types[0].importance, 0.5);
        assert_eq!(b.types[0].contribution, 0.5);
        assert_eq!(b.types[1].contribution, -0.25);
        assert_abs_diff_eq!(b.rating, 0.125, epsilon = 1e-12);

        let muted: FeatureOverrides = [(1, 0.0)].into_iter().collect();
        let b = m.forward(&schema, 0, &item, &cs, &muted).unwrap();
        assert_abs_diff_eq!(b.rating, 0.25, epsilon = 1e-12);
        assert!(b.types[1].features[0].overridden);

        let all_zero: FeatureOverrides = [(0, 0.0), (1, 0.0)].into_iter().collect();
        let b = m.forward(&schema, 0, &item, &cs, &all_zero).unwrap();
        assert_eq!(b.rating, 0.0);
    }

    #[test]
    fn attributions_sum_to_rating() {
        let (m, item) = worked();
        let b = m
            .forward(&ContextSchema::empty(), 0, &item, &ContextualSituation::empty(), &FeatureOverrides::new())
            .unwrap();
        let total: f64 = b.attributions().map(|a| a.contribution()).sum();
        assert_abs_diff_eq!(total, b.rating, epsilon = 1e-12);
    }

    #[test]
    fn mf_baseline_examples() {
        let mf = |p: Vec<f64>, q: Vec<f64>| MfModel {
            dim: 2,
            users: Table::from_rows(&[p], 2).unwrap(),
            items: Table::from_rows(&[q], 2).unwrap(),
        };
        assert_eq!(mf(vec![1.0, 0.0], vec![0.0, 1.0]).predict(0, 0).unwrap(), 0.0);
        assert_eq!(mf(vec![1.0, 1.0], vec![1.0, 1.0]).predict(0, 0).unwrap(), 2.0);
        assert_abs_diff_eq!(mf(vec![0.3, 0.4], vec![0.5, -0.2]).predict(0, 0).unwrap(), 0.07, epsilon = 1e-12);
        assert!(mf(vec![1.0, 1.0], vec![1.0, 1.0]).predict(1, 0).is_err());
    }

    #[test]
    fn variant_parsing() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("mf".parse::<Variant>().is_err());
    }

    #[test]
    fn out_of_range_user() {
        let (m, item) = worked();
        assert!(m
            .forward(&ContextSchema::empty(), 5, &item, &ContextualSituation::empty(), &FeatureOverrides::new())
            .is_err());
    }
}
