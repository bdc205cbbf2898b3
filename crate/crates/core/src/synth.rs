//! Synthetic worlds: small random models for property checks, and planted
//! teacher models that generate rating logs for recovery experiments.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::catalog::{Catalog, ItemFeatures, TypeGroup};
use crate::context::{ContextSchema, ContextualSituation};
use crate::data::{self, Dataset, RatingScale, RawInteraction, SplitRatios};
use crate::error::Result;
use crate::model::{EmbeddingSpace, FeatureOverrides, Model, ModelConfig, SpaceShape, Variant};

/// A catalog with a random model over it.
#[derive(Debug, Clone)]
pub struct World {
    pub catalog: Catalog,
    pub model: Model,
}

impl World {
    /// A random situation over the schema; empty with probability 1/5 or
    /// when the schema has no factors.
    pub fn random_situation(&self, rng: &mut impl Rng) -> ContextualSituation {
        let schema = &self.catalog.schema;
        if schema.num_factors() == 0 || rng.random_bool(0.2) {
            return ContextualSituation::empty();
        }
        let conds = (0..schema.num_factors()).map(|f| *schema.conditions_of(f).choose(rng).expect("factor has conditions"));
        ContextualSituation::new(conds, schema).expect("one condition per factor")
    }
}

/// Size limits for [`random_world`].
#[derive(Debug, Clone, Copy)]
pub struct WorldLimits {
    pub max_dim: usize,
    pub max_factors: usize,
    pub max_conditions: usize,
    pub max_types: usize,
    pub max_features_per_type: usize,
    pub max_items: usize,
    pub max_users: usize,
}

impl Default for WorldLimits {
    fn default() -> Self {
        Self {
            max_dim: 6,
            max_factors: 3,
            max_conditions: 3,
            max_types: 3,
            max_features_per_type: 4,
            max_items: 5,
            max_users: 3,
        }
    }
}

/// Random schema, catalog and model. About one feature vector in five is
/// zero, so exact-zero feature ratings occur.
pub fn random_world(limits: &WorldLimits, rng: &mut impl Rng) -> World {
    let n_factors = rng.random_range(0..=limits.max_factors);
    let schema = ContextSchema::new((0..n_factors).map(|f| {
        let n = rng.random_range(1..=limits.max_conditions);
        (format!("f{f}"), (0..n).map(|c| format!("c{c}")).collect::<Vec<_>>())
    }))
    .expect("generated names are unique");

    let n_types = rng.random_range(1..=limits.max_types);
    let pools: Vec<Vec<String>> = (0..n_types)
        .map(|t| {
            let n = rng.random_range(1..=limits.max_features_per_type);
            (0..n).map(|k| format!("t{t}f{k}")).collect()
        })
        .collect();
    let n_items = rng.random_range(1..=limits.max_items);
    let mut triples = Vec::new();
    for i in 0..n_items {
        let mut types: Vec<usize> = (0..n_types).filter(|_| rng.random_bool(0.7)).collect();
        if types.is_empty() {
            types.push(rng.random_range(0..n_types));
        }
        for t in types {
            let k = rng.random_range(1..=pools[t].len());
            for f in pools[t].choose_multiple(rng, k) {
                triples.push((format!("i{i}"), format!("t{t}"), f.clone()));
            }
        }
    }
    let mut catalog = Catalog::from_triples(triples, schema).expect("every item has a feature");
    for u in 0..rng.random_range(1..=limits.max_users) {
        catalog.users.intern(&format!("u{u}"));
    }

    let dim = rng.random_range(1..=limits.max_dim);
    let variant = *Variant::ALL.choose(rng).expect("non-empty");
    let config = ModelConfig {
        dim,
        variant,
        leaky_relu_slope: rng.random_range(0.01..0.5),
        seed: 0,
    };
    let bound = rng.random_range(0.2..2.0);
    let mut space = EmbeddingSpace::uniform(dim, SpaceShape::of(&catalog), bound, rng);
    for f in 0..space.features.rows() {
        if rng.random_bool(0.2) {
            space.features.row_mut(f).fill(0.0);
        }
    }
    let model = Model::new(config, space).expect("valid config");
    World { catalog, model }
}

/// An item made of a single feature of `type_idx`.
pub fn single_feature_item(type_idx: usize, feature: usize) -> ItemFeatures {
    ItemFeatures {
        groups: vec![TypeGroup {
            type_idx,
            features: vec![feature],
        }],
    }
}

/// Shape of a planted rating-generation experiment.
#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub users: usize,
    pub items: usize,
    pub types: usize,
    pub features_per_type: usize,
    pub max_features_per_item_type: usize,
    /// Number of declared conditions for each factor.
    pub conditions: Vec<usize>,
    pub interactions_per_user: usize,
    pub teacher_dim: usize,
    pub teacher_variant: Variant,
    /// Uniform bound of user, feature and type vectors.
    pub teacher_scale: f64,
    /// Uniform bound of condition vectors.
    pub context_scale: f64,
    /// Uniform bound of factor vectors (spread of factor importance).
    pub factor_scale: f64,
    pub noise_sigma: f64,
    /// Emit `exp(...)`-style usage counts that need a log transform.
    pub usage_counts: bool,
    pub ratios: SplitRatios,
}

impl PlantedSpec {
    pub fn small() -> Self {
        Self {
            users: 20,
            items: 30,
            types: 3,
            features_per_type: 5,
            max_features_per_item_type: 2,
            conditions: vec![3, 2],
            interactions_per_user: 15,
            teacher_dim: 4,
            teacher_variant: Variant::CaFata,
            teacher_scale: 0.8,
            context_scale: 0.8,
            factor_scale: 1.0,
            noise_sigma: 0.05,
            usage_counts: false,
            ratios: SplitRatios::default(),
        }
    }

    /// Seven factors and five single-valued feature types, logged as usage
    /// counts on a `0..~4.5` log scale.
    pub fn frappe_like() -> Self {
        Self {
            users: 150,
            items: 300,
            types: 5,
            features_per_type: 8,
            max_features_per_item_type: 1,
            conditions: vec![7, 4, 3, 2, 3, 2, 4],
            interactions_per_user: 60,
            teacher_dim: 6,
            teacher_variant: Variant::CaFata,
            teacher_scale: 0.9,
            context_scale: 0.9,
            factor_scale: 1.5,
            noise_sigma: 0.05,
            usage_counts: true,
            ratios: SplitRatios::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub catalog: Catalog,
    pub raw: Vec<RawInteraction>,
    pub dataset: Dataset,
    pub scale: RatingScale,
    pub teacher: Model,
}

/// Largest log-count emitted by [`PlantedSpec::usage_counts`] data.
pub const MAX_LOG_COUNT: f64 = 4.46;

/// Draws a teacher model, samples interactions from it with Gaussian noise,
/// and runs them through the regular ingest path (optional log transform,
/// scaling, split).
pub fn planted(spec: &PlantedSpec, seed: u64) -> Result<PlantedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = ContextSchema::new(
        spec.conditions
            .iter()
            .enumerate()
            .map(|(f, &n)| (format!("f{f}"), (0..n).map(|c| format!("f{f}c{c}")).collect::<Vec<_>>())),
    )?;
    let mut triples = Vec::new();
    for i in 0..spec.items {
        for t in 0..spec.types {
            let k = rng.random_range(1..=spec.max_features_per_item_type.min(spec.features_per_type));
            let mut pool: Vec<usize> = (0..spec.features_per_type).collect();
            pool.shuffle(&mut rng);
            for f in &pool[..k] {
                triples.push((format!("i{i}"), format!("t{t}"), format!("t{t}f{f}")));
            }
        }
    }
    let mut catalog = Catalog::from_triples(triples, schema)?;
    for u in 0..spec.users {
        catalog.users.intern(&format!("u{u}"));
    }

    let dim = spec.teacher_dim;
    let shape = SpaceShape::of(&catalog);
    let table = |rows: usize, bound: f64, rng: &mut ChaCha8Rng| crate::model::Table::uniform(rows, dim, bound, rng);
    let space = EmbeddingSpace {
        dim,
        users: table(shape.users, spec.teacher_scale, &mut rng),
        features: table(shape.features, spec.teacher_scale, &mut rng),
        types: table(shape.types, spec.teacher_scale, &mut rng),
        factors: table(shape.factors, spec.factor_scale, &mut rng),
        conditions: table(shape.conditions, spec.context_scale, &mut rng),
    };
    let teacher = Model::new(
        ModelConfig {
            dim,
            variant: spec.teacher_variant,
            ..ModelConfig::default()
        },
        space,
    )?;

    let noise = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
    let schema = &catalog.schema;
    let mut raw = Vec::with_capacity(spec.users * spec.interactions_per_user);
    for u in 0..spec.users {
        let mut items: Vec<usize> = (0..spec.items).collect();
        items.shuffle(&mut rng);
        for &i in items.iter().cycle().take(spec.interactions_per_user) {
            let mut context = std::collections::BTreeMap::new();
            let mut conds = Vec::new();
            for f in 0..schema.num_factors() {
                let declared = &schema.conditions_of(f)[..spec.conditions[f]];
                let c = *declared.choose(&mut rng).expect("declared conditions");
                conds.push(c);
                context.insert(
                    schema.factor_name(f).unwrap_or_default().to_owned(),
                    schema.condition_name(c).unwrap_or_default().to_owned(),
                );
            }
            let cs = ContextualSituation::new(conds, schema)?;
            let clean = teacher.predict(&catalog, u, i, &cs, &FeatureOverrides::new())?.rating;
            let target = (clean + noise.sample(&mut rng)).clamp(-1.0, 1.0);
            let value = if spec.usage_counts {
                ((target + 1.0) * 0.5 * MAX_LOG_COUNT).exp_m1()
            } else {
                // 1..5 star scale
                3.0 + 2.0 * target
            };
            raw.push(RawInteraction {
                user: format!("u{u}"),
                item: format!("i{i}"),
                value,
                context,
            });
        }
    }

    let (processed, scale) = if spec.usage_counts {
        let logged = data::log_transform_counts(raw.clone())?;
        (logged, RatingScale::new(0.0, MAX_LOG_COUNT)?)
    } else {
        (raw.clone(), RatingScale::new(1.0, 5.0)?)
    };
    let (interactions, _) = data::index_interactions(&processed, &mut catalog, &scale)?;
    let dataset = data::split_dataset(interactions, spec.ratios, seed ^ 0x5eed)?;
    Ok(PlantedInstance {
        catalog,
        raw,
        dataset,
        scale,
        teacher,
    })
}
