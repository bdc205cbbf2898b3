//! Context schema (factors and their conditions) and contextual situations.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::IdTable;

/// Condition reserved in every factor for missing context values.
pub const UNKNOWN_CONDITION: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq)]
struct Condition {
    factor: usize,
    name: String,
}

/// Contextual factors (e.g. `companion`) and the conditions each one can
/// take (e.g. `alone`, `with children`). Conditions are indexed globally;
/// every condition belongs to exactly one factor.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, Vec<String>)>", into = "Vec<(String, Vec<String>)>")]
pub struct ContextSchema {
    factors: IdTable,
    conditions: Vec<Condition>,
    by_factor: Vec<Vec<usize>>,
    lookup: HashMap<(usize, String), usize>,
}

impl ContextSchema {
    /// A schema with no factors, used by context-free datasets.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a schema from `(factor, conditions)` pairs in declaration order.
    /// Each factor additionally receives the reserved [`UNKNOWN_CONDITION`].
    pub fn new<F, C>(factors: impl IntoIterator<Item = (F, C)>) -> Result<Self>
    where
        F: AsRef<str>,
        C: IntoIterator,
        C::Item: AsRef<str>,
    {
        let mut schema = Self::default();
        for (factor, conds) in factors {
            let factor = factor.as_ref();
            if factor.is_empty() {
                return Err(Error::invalid("context factor name is empty"));
            }
            if schema.factors.get(factor).is_some() {
                return Err(Error::invalid(format!("duplicate context factor `{factor}`")));
            }
            let f = schema.factors.intern(factor);
            schema.by_factor.push(Vec::new());
            for cond in conds {
                schema.push_condition(f, cond.as_ref());
            }
            schema.push_condition(f, UNKNOWN_CONDITION);
        }
        Ok(schema)
    }

    fn push_condition(&mut self, factor: usize, name: &str) {
        let key = (factor, name.to_owned());
        if self.lookup.contains_key(&key) {
            return;
        }
        let idx = self.conditions.len();
        self.conditions.push(Condition {
            factor,
            name: name.to_owned(),
        });
        self.by_factor[factor].push(idx);
        self.lookup.insert(key, idx);
    }

    /// Parses `{ "factor": ["condition", ...], ... }`, keeping file order.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
        let mut pairs = Vec::with_capacity(map.len());
        for (factor, value) in map {
            let conds = value
                .as_array()
                .ok_or_else(|| Error::invalid(format!("factor `{factor}` must map to a list")))?
                .iter()
                .map(|v| {
                    v.as_str().map(str::to_owned).ok_or_else(|| {
                        Error::invalid(format!("factor `{factor}` has a non-string condition"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            pairs.push((factor, conds));
        }
        Self::new(pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: path.to_owned(),
                line: j.line() as u64,
                message: j.to_string(),
            },
            other => other,
        })
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn num_conditions(&self) -> usize {
        self.conditions.len()
    }

    pub fn factors(&self) -> &IdTable {
        &self.factors
    }

    pub fn factor_name(&self, factor: usize) -> Option<&str> {
        self.factors.name(factor)
    }

    pub fn condition_name(&self, condition: usize) -> Option<&str> {
        self.conditions.get(condition).map(|c| c.name.as_str())
    }

    pub fn condition_factor(&self, condition: usize) -> Option<usize> {
        self.conditions.get(condition).map(|c| c.factor)
    }

    pub fn conditions_of(&self, factor: usize) -> &[usize] {
        self.by_factor.get(factor).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn condition(&self, factor: usize, name: &str) -> Option<usize> {
        self.lookup.get(&(factor, name.to_owned())).copied()
    }

    pub fn unknown_condition(&self, factor: usize) -> Option<usize> {
        self.condition(factor, UNKNOWN_CONDITION)
    }

    /// Resolves `factor -> condition` names into a situation. Factors absent
    /// from `assignments` are left unassigned.
    pub fn situation<K, V>(&self, assignments: impl IntoIterator<Item = (K, V)>) -> Result<ContextualSituation>
    where
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut conds = Vec::new();
        for (factor, cond) in assignments {
            let f = self
                .factors
                .get(factor.as_ref())
                .ok_or_else(|| Error::unknown("context factor", factor.as_ref()))?;
            let c = self.condition(f, cond.as_ref()).ok_or_else(|| {
                Error::unknown("context condition", format!("{}={}", factor.as_ref(), cond.as_ref()))
            })?;
            conds.push(c);
        }
        ContextualSituation::new(conds, self)
    }
}

impl TryFrom<Vec<(String, Vec<String>)>> for ContextSchema {
    type Error = Error;

    fn try_from(value: Vec<(String, Vec<String>)>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ContextSchema> for Vec<(String, Vec<String>)> {
    fn from(schema: ContextSchema) -> Self {
        schema
            .by_factor
            .iter()
            .enumerate()
            .map(|(f, conds)| {
                (
                    schema.factors.name(f).unwrap_or_default().to_owned(),
                    conds.iter().map(|&c| schema.conditions[c].name.clone()).collect(),
                )
            })
            .collect()
    }
}

/// One condition per factor, stored as global condition indices sorted by
/// their owning factor. May be empty (context-free prediction).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextualSituation(Vec<usize>);

impl ContextualSituation {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn new(conditions: impl IntoIterator<Item = usize>, schema: &ContextSchema) -> Result<Self> {
        let mut pairs = Vec::new();
        for c in conditions {
            let f = schema.condition_factor(c).ok_or(Error::OutOfRange {
                kind: "condition",
                index: c,
                len: schema.num_conditions(),
            })?;
            pairs.push((f, c));
        }
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("contextual situation assigns a factor twice"));
        }
        Ok(Self(pairs.into_iter().map(|(_, c)| c).collect()))
    }

    pub fn conditions(&self) -> &[usize] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// True when every factor of `schema` has a condition.
    pub fn is_complete(&self, schema: &ContextSchema) -> bool {
        self.0.len() == schema.num_factors()
    }

    /// `(factor, condition)` pairs in factor order.
    pub fn pairs<'a>(&'a self, schema: &'a ContextSchema) -> impl Iterator<Item = (usize, usize)> + 'a {
        self.0
            .iter()
            .map(move |&c| (schema.condition_factor(c).expect("validated at construction"), c))
    }
}
