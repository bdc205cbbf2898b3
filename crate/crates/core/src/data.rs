//! Interaction logs: loading, preprocessing, rating scaling and splitting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::context::{ContextSchema, ContextualSituation, UNKNOWN_CONDITION};
use crate::error::{Error, Result};

/// One logged interaction with external ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub value: f64,
    /// factor name -> condition name
    pub context: BTreeMap<String, String>,
}

impl RawInteraction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, value: f64) -> Self {
        Self {
            user: user.into(),
            item: item.into(),
            value,
            context: BTreeMap::new(),
        }
    }
}

/// Reads a CSV with header `user,item,value,<factor1>,...`. Factor columns
/// must be declared in `schema`; empty cells become the factor's `unknown`
/// condition.
pub fn load_interactions(path: impl AsRef<Path>, schema: &ContextSchema) -> Result<Vec<RawInteraction>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected = ["user", "item", "value"];
    if headers.len() < 3 || headers.iter().take(3).ne(expected.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: "header must start with `user,item,value`".to_owned(),
        });
    }
    let mut factors = Vec::new();
    for name in headers.iter().skip(3) {
        let f = schema.factors().get(name).ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: format!("context column `{name}` is not in the context schema"),
        })?;
        factors.push((name.to_owned(), f));
    }

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        let value: f64 = record[2]
            .parse()
            .map_err(|_| err(format!("value `{}` is not a number", &record[2])))?;
        if !value.is_finite() {
            return Err(err(format!("value `{}` is not finite", &record[2])));
        }
        let mut context = BTreeMap::new();
        for (col, (name, f)) in factors.iter().enumerate() {
            let cell = &record[col + 3];
            let cond = if cell.is_empty() { UNKNOWN_CONDITION } else { cell };
            if schema.condition(*f, cond).is_none() {
                return Err(err(format!("condition `{cond}` is not declared for factor `{name}`")));
            }
            context.insert(name.clone(), cond.to_owned());
        }
        out.push(RawInteraction {
            user: record[0].to_owned(),
            item: record[1].to_owned(),
            value,
            context,
        });
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            path: path.to_owned(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Replaces usage counts with `ln(1 + count)`.
pub fn log_transform_counts(mut interactions: Vec<RawInteraction>) -> Result<Vec<RawInteraction>> {
    for r in &mut interactions {
        if !(r.value >= 0.0) {
            return Err(Error::invalid(format!(
                "usage count must be non-negative, got {} for ({}, {})",
                r.value, r.user, r.item
            )));
        }
        r.value = r.value.ln_1p();
    }
    Ok(interactions)
}

/// Iteratively drops users and items with fewer than `k` interactions until
/// every remaining user and item has at least `k` (or nothing remains).
pub fn k_core_filter(interactions: Vec<RawInteraction>, k: usize) -> Vec<RawInteraction> {
    let mut keep = interactions;
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for r in &keep {
            *user_deg.entry(&r.user).or_default() += 1;
            *item_deg.entry(&r.item).or_default() += 1;
        }
        let ok: Vec<bool> = keep
            .iter()
            .map(|r| user_deg[r.user.as_str()] >= k && item_deg[r.item.as_str()] >= k)
            .collect();
        if ok.iter().all(|&b| b) {
            return keep;
        }
        keep = keep.into_iter().zip(ok).filter(|(_, ok)| *ok).map(|(r, _)| r).collect();
    }
}

/// Linear map between the raw rating range and `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub raw_min: f64,
    pub raw_max: f64,
}

impl RatingScale {
    pub fn new(raw_min: f64, raw_max: f64) -> Result<Self> {
        if !(raw_min.is_finite() && raw_max.is_finite() && raw_min < raw_max) {
            return Err(Error::invalid(format!(
                "rating scale needs finite min < max, got [{raw_min}, {raw_max}]"
            )));
        }
        Ok(Self { raw_min, raw_max })
    }

    /// Scale spanning the observed values.
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Self::new(lo, hi)
    }

    pub fn scale(&self, value: f64) -> Result<f64> {
        if !(value >= self.raw_min && value <= self.raw_max) {
            return Err(Error::invalid(format!(
                "value {value} outside rating scale [{}, {}]",
                self.raw_min, self.raw_max
            )));
        }
        Ok(2.0 * (value - self.raw_min) / (self.raw_max - self.raw_min) - 1.0)
    }

    pub fn inverse(&self, scaled: f64) -> f64 {
        self.raw_min + (scaled + 1.0) * 0.5 * (self.raw_max - self.raw_min)
    }
}

/// An interaction in dense-index form with its rating on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub context: ContextualSituation,
    pub rating: f64,
}

/// Resolves raw interactions against the catalog, registering users.
/// Interactions whose item is unknown to the catalog are dropped and counted.
pub fn index_interactions(
    raw: &[RawInteraction],
    catalog: &mut Catalog,
    scale: &RatingScale,
) -> Result<(Vec<Interaction>, usize)> {
    let mut dropped = 0usize;
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        let Some(item) = catalog.items.get(&r.item) else {
            dropped += 1;
            continue;
        };
        let schema = &catalog.schema;
        let mut conds = Vec::with_capacity(schema.num_factors());
        for f in 0..schema.num_factors() {
            let name = schema.factor_name(f).unwrap_or_default();
            let cond = r.context.get(name).map(String::as_str).unwrap_or(UNKNOWN_CONDITION);
            conds.push(
                schema
                    .condition(f, cond)
                    .ok_or_else(|| Error::unknown("context condition", format!("{name}={cond}")))?,
            );
        }
        for name in r.context.keys() {
            if schema.factors().get(name).is_none() {
                return Err(Error::unknown("context factor", name.clone()));
            }
        }
        let context = ContextualSituation::new(conds, schema)?;
        let rating = scale.scale(r.value)?;
        let user = catalog.users.intern(&r.user);
        out.push(Interaction {
            user,
            item,
            context,
            rating,
        });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} interactions whose item is not in the catalog");
    }
    Ok((out, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub interactions: Vec<Interaction>,
    pub split: Split,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &Interaction> + '_ {
        self.split.train.iter().map(|&i| &self.interactions[i])
    }

    pub fn valid(&self) -> impl Iterator<Item = &Interaction> + '_ {
        self.split.valid.iter().map(|&i| &self.interactions[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &Interaction> + '_ {
        self.split.test.iter().map(|&i| &self.interactions[i])
    }

    /// Items each user interacted with in the training split.
    pub fn train_history(&self, num_users: usize) -> Vec<Vec<usize>> {
        let mut seen: Vec<HashSet<usize>> = vec![HashSet::new(); num_users];
        for r in self.train() {
            if r.user < num_users {
                seen[r.user].insert(r.item);
            }
        }
        seen.into_iter()
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .collect()
    }
}

/// Random train/validation/test split, deterministic per seed. Every user
/// with at least three interactions keeps one of them in the training split.
pub fn split_dataset(interactions: Vec<Interaction>, ratios: SplitRatios, seed: u64) -> Result<Dataset> {
    let SplitRatios { train, valid, test } = ratios;
    if !(train > 0.0 && valid > 0.0 && test > 0.0) {
        return Err(Error::invalid("split ratios must be positive"));
    }
    if ((train + valid + test) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must sum to 1, got {}",
            train + valid + test
        )));
    }
    let n = interactions.len();
    let n_valid = (n as f64 * valid).round() as usize;
    let n_test = ((n as f64 * test).round() as usize).min(n - n_valid);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut per_user: HashMap<usize, usize> = HashMap::new();
    for r in &interactions {
        *per_user.entry(r.user).or_default() += 1;
    }
    let mut anchored = vec![false; n];
    let mut seen = HashSet::new();
    for &i in &order {
        let u = interactions[i].user;
        if per_user[&u] >= 3 && seen.insert(u) {
            anchored[i] = true;
        }
    }

    let mut split = Split::default();
    for &i in &order {
        if anchored[i] {
            split.train.push(i);
        } else if split.valid.len() < n_valid {
            split.valid.push(i);
        } else if split.test.len() < n_test {
            split.test.push(i);
        } else {
            split.train.push(i);
        }
    }
    Ok(Dataset { interactions, split })
}
