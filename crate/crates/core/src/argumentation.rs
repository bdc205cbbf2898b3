//! The per-interaction tripolar argumentation framework.
//!
//! Each feature of the item is an argument aimed at `rec` ("recommend this
//! item"). A feature with positive predicted rating supports `rec`, one with
//! negative rating attacks it, and one with zero rating is neutral. The
//! strength of a feature argument is its rating; the strength of `rec` is
//! the predicted item rating.
//!
//! The property checkers draw random instances and report every
//! counterexample to weak balance, weak monotonicity, and feedback
//! monotonicity.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ItemFeatures, TypeGroup};
use crate::context::{ContextSchema, ContextualSituation};
use crate::error::{Error, Result};
use crate::feedback::{Direction, FeedbackStore};
use crate::model::{FeatureOverrides, Model, PredictionBreakdown};
use crate::synth::{self, World, WorldLimits};

/// Display threshold below which a feature is shown as neutral.
pub const DISPLAY_NEUTRAL_EPS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "+")]
    Support,
    #[serde(rename = "-")]
    Attack,
    #[serde(rename = "0")]
    Neutral,
}

impl Polarity {
    pub fn classify(strength: f64, neutral_eps: f64) -> Self {
        if strength > neutral_eps {
            Polarity::Support
        } else if strength < -neutral_eps {
            Polarity::Attack
        } else {
            Polarity::Neutral
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Polarity::Support => "+",
            Polarity::Attack => "-",
            Polarity::Neutral => "0",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argument {
    pub feature: usize,
    pub type_idx: usize,
    pub polarity: Polarity,
    pub strength: f64,
    /// Coefficient of `strength` in the item rating.
    pub weight: f64,
}

impl Argument {
    pub fn contribution(&self) -> f64 {
        self.weight * self.strength
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgumentId {
    Rec,
    Feature(usize),
}

/// Arguments are the item's features plus `rec`; every feature argument
/// sits in exactly one of the attack/support/neutral relations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taf {
    pub user: usize,
    pub item: Option<usize>,
    pub context: ContextualSituation,
    pub rec_strength: f64,
    pub neutral_eps: f64,
    pub arguments: Vec<Argument>,
}

impl Taf {
    pub fn strength(&self, arg: ArgumentId) -> Option<f64> {
        match arg {
            ArgumentId::Rec => Some(self.rec_strength),
            ArgumentId::Feature(f) => self.argument(f).map(|a| a.strength),
        }
    }

    pub fn argument(&self, feature: usize) -> Option<&Argument> {
        self.arguments.iter().find(|a| a.feature == feature)
    }

    fn with(&self, polarity: Polarity) -> impl Iterator<Item = &Argument> + '_ {
        self.arguments.iter().filter(move |a| a.polarity == polarity)
    }

    /// `R+`
    pub fn supporters(&self) -> impl Iterator<Item = &Argument> + '_ {
        self.with(Polarity::Support)
    }

    /// `R-`
    pub fn attackers(&self) -> impl Iterator<Item = &Argument> + '_ {
        self.with(Polarity::Attack)
    }

    /// `R0`
    pub fn neutrals(&self) -> impl Iterator<Item = &Argument> + '_ {
        self.with(Polarity::Neutral)
    }

    /// `(|R-|, |R+|, |R0|)`
    pub fn partition_sizes(&self) -> (usize, usize, usize) {
        (
            self.attackers().count(),
            self.supporters().count(),
            self.neutrals().count(),
        )
    }

    pub fn export(&self, catalog: &Catalog) -> TafExport {
        let schema = &catalog.schema;
        TafExport {
            item: self.item.map(|i| catalog.item_label(i).to_owned()),
            rec_strength: self.rec_strength,
            neutral_eps: self.neutral_eps,
            context: context_labels(&self.context, schema),
            arguments: self
                .arguments
                .iter()
                .map(|a| ArgumentExport {
                    feature: catalog.feature_label(a.feature).to_owned(),
                    r#type: catalog.type_label(a.type_idx).to_owned(),
                    polarity: a.polarity,
                    strength: a.strength,
                    weight: a.weight,
                })
                .collect(),
        }
    }
}

pub(crate) fn context_labels(cs: &ContextualSituation, schema: &ContextSchema) -> BTreeMap<String, String> {
    cs.pairs(schema)
        .map(|(f, c)| {
            (
                schema.factor_name(f).unwrap_or_default().to_owned(),
                schema.condition_name(c).unwrap_or_default().to_owned(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgumentExport {
    pub feature: String,
    pub r#type: String,
    pub polarity: Polarity,
    pub strength: f64,
    pub weight: f64,
}

/// JSON form consumed by the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TafExport {
    pub item: Option<String>,
    pub rec_strength: f64,
    pub neutral_eps: f64,
    pub context: BTreeMap<String, String>,
    pub arguments: Vec<ArgumentExport>,
}

/// Classifies every feature of the breakdown. Use `neutral_eps = 0` for the
/// formal relations.
pub fn build_taf(breakdown: &PredictionBreakdown, neutral_eps: f64) -> Taf {
    let arguments = breakdown
        .attributions()
        .map(|a| Argument {
            feature: a.feature,
            type_idx: a.type_idx,
            polarity: Polarity::classify(a.rating, neutral_eps),
            strength: a.rating,
            weight: a.weight,
        })
        .collect();
    Taf {
        user: breakdown.user,
        item: breakdown.item,
        context: breakdown.context.clone(),
        rec_strength: breakdown.rating,
        neutral_eps,
        arguments,
    }
}

/// Features whose rating is forced to zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MuteSet(pub BTreeSet<usize>);

impl MuteSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn of(features: impl IntoIterator<Item = usize>) -> Self {
        Self(features.into_iter().collect())
    }
}

/// Signature of a forward pass, so the checkers can run against alternative
/// implementations.
pub type ForwardFn<'a> = dyn Fn(
        &Model,
        &ContextSchema,
        usize,
        &ItemFeatures,
        &ContextualSituation,
        &FeatureOverrides,
    ) -> Result<PredictionBreakdown>
    + 'a;

fn model_forward(
    model: &Model,
    schema: &ContextSchema,
    user: usize,
    item: &ItemFeatures,
    cs: &ContextualSituation,
    overrides: &FeatureOverrides,
) -> Result<PredictionBreakdown> {
    model.forward(schema, user, item, cs, overrides)
}

/// Forward pass with `mutes` forced to zero on top of `overrides`. Type
/// importance is unaffected since it does not depend on feature ratings.
pub fn mute(
    model: &Model,
    schema: &ContextSchema,
    user: usize,
    item: &ItemFeatures,
    cs: &ContextualSituation,
    overrides: &FeatureOverrides,
    mutes: &MuteSet,
) -> Result<PredictionBreakdown> {
    mute_with(&model_forward, model, schema, user, item, cs, overrides, mutes)
}

#[allow(clippy::too_many_arguments)]
fn mute_with(
    forward: &ForwardFn<'_>,
    model: &Model,
    schema: &ContextSchema,
    user: usize,
    item: &ItemFeatures,
    cs: &ContextualSituation,
    overrides: &FeatureOverrides,
    mutes: &MuteSet,
) -> Result<PredictionBreakdown> {
    let mut muted = overrides.clone();
    for &f in &mutes.0 {
        if !item.contains(f) {
            return Err(Error::invalid(format!("cannot mute feature {f}: not a feature of the item")));
        }
        muted.set(f, 0.0);
    }
    forward(model, schema, user, item, cs, &muted)
}

/// Where checker instances come from.
#[derive(Debug, Clone)]
pub enum InstanceSource {
    /// A fresh random world per trial.
    Random(WorldLimits),
    /// A fixed model (e.g. a trained checkpoint); users, situations and
    /// items are drawn from it.
    Fixed(World),
}

impl InstanceSource {
    fn world<'a>(&'a self, rng: &mut ChaCha8Rng, scratch: &'a mut Option<World>) -> &'a World {
        match self {
            InstanceSource::Random(limits) => scratch.insert(synth::random_world(limits, rng)),
            InstanceSource::Fixed(w) => w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub trial: usize,
    pub message: String,
    pub instance: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub trials: usize,
    pub checks: usize,
    pub counterexamples: Vec<Counterexample>,
}

impl PropertyReport {
    fn new(property: &str, trials: usize) -> Self {
        Self {
            property: property.to_owned(),
            trials,
            checks: 0,
            counterexamples: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }

    fn fail(&mut self, trial: usize, message: String, instance: serde_json::Value) {
        self.counterexamples.push(Counterexample {
            trial,
            message,
            instance,
        });
    }
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    Ok(())
}

fn dump(world: &World, user: usize, item: &ItemFeatures, cs: &ContextualSituation, extra: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "model": world.model,
        "user": user,
        "item": item,
        "context": cs,
        "details": extra,
    })
}

fn random_user(world: &World, rng: &mut impl Rng) -> usize {
    rng.random_range(0..world.catalog.users.len().max(1))
}

/// A catalog item with at least two features when one exists, otherwise a
/// synthesized multi-feature item; `None` if the catalog has one feature.
fn multi_feature_item(world: &World, rng: &mut impl Rng) -> Option<ItemFeatures> {
    let catalog = &world.catalog;
    let candidates: Vec<usize> = (0..catalog.num_items())
        .filter(|&i| catalog.item(i).map(|it| it.num_features() >= 2).unwrap_or(false))
        .collect();
    if !candidates.is_empty() && rng.random_bool(0.5) {
        let i = *candidates.choose(rng).expect("non-empty");
        return catalog.item(i).ok().cloned();
    }
    let n = catalog.features.len();
    if n < 2 {
        return None;
    }
    let k = rng.random_range(2..=n.min(6));
    let mut picked: Vec<usize> = (0..n).collect();
    picked.shuffle(rng);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &f in &picked[..k] {
        groups.entry(catalog.feature_type(f)?).or_default().push(f);
    }
    Some(ItemFeatures {
        groups: groups
            .into_iter()
            .map(|(type_idx, features)| TypeGroup { type_idx, features })
            .collect(),
    })
}

/// A lone supporter yields a positive item strength, a lone attacker a
/// negative one, and a lone neutral exactly zero.
pub fn check_weak_balance(source: &InstanceSource, trials: usize, seed: u64) -> Result<PropertyReport> {
    check_weak_balance_with(source, trials, seed, &model_forward)
}

pub fn check_weak_balance_with(
    source: &InstanceSource,
    trials: usize,
    seed: u64,
    forward: &ForwardFn<'_>,
) -> Result<PropertyReport> {
    check_trials(trials)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PropertyReport::new("weak_balance", trials);
    let mut scratch = None;
    for trial in 0..trials {
        let world = source.world(&mut rng, &mut scratch);
        let user = random_user(world, &mut rng);
        let cs = world.random_situation(&mut rng);
        let feature = rng.random_range(0..world.catalog.features.len());
        let type_idx = world.catalog.feature_type(feature).expect("catalog feature has a type");
        let item = synth::single_feature_item(type_idx, feature);
        let b = forward(&world.model, &world.catalog.schema, user, &item, &cs, &FeatureOverrides::new())?;
        let taf = build_taf(&b, 0.0);
        let arg = &taf.arguments[0];
        let rec = taf.rec_strength;
        report.checks += 1;
        let ok = match arg.polarity {
            Polarity::Support => rec > 0.0,
            Polarity::Attack => rec < 0.0,
            Polarity::Neutral => rec == 0.0,
        };
        if !ok {
            report.fail(
                trial,
                format!(
                    "lone {:?} argument with strength {} gives item strength {rec}",
                    arg.polarity, arg.strength
                ),
                dump(world, user, &item, &cs, serde_json::json!({ "breakdown": b })),
            );
        }
    }
    Ok(report)
}

/// Muting an attacker strictly raises the item strength, muting a supporter
/// strictly lowers it, muting a neutral leaves it unchanged.
pub fn check_weak_monotonicity(source: &InstanceSource, trials: usize, seed: u64) -> Result<PropertyReport> {
    check_weak_monotonicity_with(source, trials, seed, &model_forward)
}

pub fn check_weak_monotonicity_with(
    source: &InstanceSource,
    trials: usize,
    seed: u64,
    forward: &ForwardFn<'_>,
) -> Result<PropertyReport> {
    check_trials(trials)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PropertyReport::new("weak_monotonicity", trials);
    let mut scratch = None;
    let mut trial = 0;
    while trial < trials {
        let world = source.world(&mut rng, &mut scratch);
        let Some(item) = multi_feature_item(world, &mut rng) else {
            if matches!(source, InstanceSource::Fixed(_)) {
                return Err(Error::invalid("weak monotonicity needs at least two features in the catalog"));
            }
            continue;
        };
        let user = random_user(world, &mut rng);
        let cs = world.random_situation(&mut rng);
        let schema = &world.catalog.schema;
        let base = FeatureOverrides::new();
        let b = forward(&world.model, schema, user, &item, &cs, &base)?;
        let taf = build_taf(&b, 0.0);
        let (_, feature) = *item.iter().collect::<Vec<_>>().choose(&mut rng).expect("non-empty item");
        let arg = taf.argument(feature).expect("feature in taf");
        let muted = mute_with(forward, &world.model, schema, user, &item, &cs, &base, &MuteSet::of([feature]))?;
        let (before, after) = (taf.rec_strength, muted.rating);
        report.checks += 1;
        let importance = b
            .types
            .iter()
            .find(|t| t.type_idx == arg.type_idx)
            .map_or(0.0, |t| t.importance);
        let ok = if importance <= 0.0 {
            false
        } else {
            match arg.polarity {
                Polarity::Attack => after > before,
                Polarity::Support => after < before,
                Polarity::Neutral => (after - before).abs() <= 1e-12,
            }
        };
        if !ok {
            report.fail(
                trial,
                format!(
                    "muting {:?} feature {feature} (strength {}, type importance {importance}) moved item strength {before} -> {after}",
                    arg.polarity, arg.strength
                ),
                dump(world, user, &item, &cs, serde_json::json!({ "feature": feature, "before": b, "after": muted })),
            );
        }
        trial += 1;
    }
    Ok(report)
}

/// Tolerance on the predicted change of an item rating after feedback.
pub const FEEDBACK_DELTA_TOL: f64 = 1e-9;

/// Applies random like/dislike feedback and checks that every item carrying
/// the feature moves strictly in the feedback direction, by exactly
/// `importance(type) * delta / |features of that type on the item|`.
pub fn check_feedback_monotonicity(source: &InstanceSource, trials: usize, seed: u64) -> Result<PropertyReport> {
    check_feedback_monotonicity_with(source, trials, seed, &model_forward)
}

pub fn check_feedback_monotonicity_with(
    source: &InstanceSource,
    trials: usize,
    seed: u64,
    forward: &ForwardFn<'_>,
) -> Result<PropertyReport> {
    check_trials(trials)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PropertyReport::new("feedback_monotonicity", trials);
    let mut scratch = None;
    for trial in 0..trials {
        let world = source.world(&mut rng, &mut scratch);
        let catalog = &world.catalog;
        let schema = &catalog.schema;
        let user = random_user(world, &mut rng);
        let cs = world.random_situation(&mut rng);

        // Some history so overrides are not always fresh.
        let mut store = FeedbackStore::new();
        for _ in 0..rng.random_range(0..3) {
            let f = rng.random_range(0..catalog.features.len());
            let dir = if rng.random_bool(0.5) { Direction::Like } else { Direction::Dislike };
            let model_rating = world.model.user_feature_rating(schema, user, f, &cs)?;
            store.apply(user, f, dir, rng.random_range(0.05..1.0), model_rating)?;
        }

        let feature = rng.random_range(0..catalog.features.len());
        let direction = if rng.random_bool(0.5) { Direction::Like } else { Direction::Dislike };
        let step = rng.random_range(0.05..1.0);
        let before_overrides = store.overrides_for(user);
        let items = catalog.items_with_feature(feature).to_vec();
        let mut before = Vec::with_capacity(items.len());
        for &i in &items {
            before.push(forward(&world.model, schema, user, catalog.item(i)?, &cs, &before_overrides)?);
        }
        let model_rating = world.model.user_feature_rating(schema, user, feature, &cs)?;
        let entry = store.apply(user, feature, direction, step, model_rating)?;
        let delta = entry.new - entry.old;
        let after_overrides = store.overrides_for(user);

        for (&i, old) in items.iter().zip(&before) {
            let new = forward(&world.model, schema, user, catalog.item(i)?, &cs, &after_overrides)?;
            let attribution = old.attribution(feature).expect("item carries the feature");
            let expected = attribution.weight * delta;
            let change = new.rating - old.rating;
            report.checks += 1;
            let strict = match direction {
                Direction::Like => change > 0.0,
                Direction::Dislike => change < 0.0,
            };
            if !strict || (change - expected).abs() > FEEDBACK_DELTA_TOL {
                report.fail(
                    trial,
                    format!(
                        "{direction:?} on feature {feature} ({} -> {}) changed item {i} by {change}, expected {expected}",
                        entry.old, entry.new
                    ),
                    dump(
                        world,
                        user,
                        catalog.item(i)?,
                        &cs,
                        serde_json::json!({ "feature": feature, "before": old, "after": new }),
                    ),
                );
            }
        }
    }
    Ok(report)
}
