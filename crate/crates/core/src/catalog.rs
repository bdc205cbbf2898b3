//! Items, their typed features, and the id tables shared by every module.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::ContextSchema;
use crate::error::{Error, Result};
use crate::ids::IdTable;

/// The features of one item that share a feature type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeGroup {
    pub type_idx: usize,
    pub features: Vec<usize>,
}

/// An item's features grouped by type. Groups are non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ItemFeatures {
    pub groups: Vec<TypeGroup>,
}

impl ItemFeatures {
    pub fn num_features(&self) -> usize {
        self.groups.iter().map(|g| g.features.len()).sum()
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.groups.iter().any(|g| g.features.contains(&feature))
    }

    /// Iterates `(type_idx, feature)` over every feature of the item.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.groups
            .iter()
            .flat_map(|g| g.features.iter().map(move |&f| (g.type_idx, f)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogRepr {
    users: IdTable,
    items: IdTable,
    features: IdTable,
    types: IdTable,
    schema: ContextSchema,
    item_features: Vec<ItemFeatures>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct Catalog {
    pub users: IdTable,
    pub items: IdTable,
    pub features: IdTable,
    pub types: IdTable,
    pub schema: ContextSchema,
    item_features: Vec<ItemFeatures>,
    feature_type: Vec<usize>,
    feature_items: Vec<Vec<usize>>,
}

impl Catalog {
    /// Builds a catalog from `(item, type, feature)` triples. Duplicate
    /// triples are dropped with a warning; a feature listed under two
    /// different types is an error.
    pub fn from_triples<I, S>(triples: I, schema: ContextSchema) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: AsRef<str>,
    {
        let mut items = IdTable::new();
        let mut features = IdTable::new();
        let mut types = IdTable::new();
        let mut feature_type: Vec<usize> = Vec::new();
        let mut grouped: Vec<BTreeMap<usize, Vec<usize>>> = Vec::new();
        let mut duplicates = 0usize;

        for (item, ty, feature) in triples {
            let (item, ty, feature) = (item.as_ref(), ty.as_ref(), feature.as_ref());
            let i = items.intern(item);
            let t = types.intern(ty);
            let f = features.intern(feature);
            if f == feature_type.len() {
                feature_type.push(t);
            } else if feature_type[f] != t {
                return Err(Error::invalid(format!(
                    "feature `{feature}` appears under types `{}` and `{ty}`",
                    types.name(feature_type[f]).unwrap_or_default()
                )));
            }
            if i == grouped.len() {
                grouped.push(BTreeMap::new());
            }
            let group = grouped[i].entry(t).or_default();
            if group.contains(&f) {
                duplicates += 1;
            } else {
                group.push(f);
            }
        }
        if duplicates > 0 {
            log::warn!("dropped {duplicates} duplicate (item, type, feature) rows");
        }
        if items.is_empty() {
            return Err(Error::invalid("catalog has no items"));
        }

        let item_features = grouped
            .into_iter()
            .map(|g| ItemFeatures {
                groups: g
                    .into_iter()
                    .map(|(type_idx, features)| TypeGroup { type_idx, features })
                    .collect(),
            })
            .collect();

        CatalogRepr {
            users: IdTable::new(),
            items,
            features,
            types,
            schema,
            item_features,
        }
        .try_into()
    }

    /// Reads a UTF-8 TSV of `item<TAB>type<TAB>feature` rows plus a JSON
    /// context schema. Blank lines and lines starting with `#` are skipped.
    pub fn load(feature_triples: impl AsRef<Path>, context_schema: impl AsRef<Path>) -> Result<Self> {
        let path = feature_triples.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let parse_err = |message: String| Error::Parse {
                path: path.to_owned(),
                line: n as u64 + 1,
                message,
            };
            if cols.len() != 3 {
                return Err(parse_err(format!(
                    "expected 3 tab-separated columns (item, type, feature), found {}",
                    cols.len()
                )));
            }
            if cols.iter().any(|c| c.trim().is_empty()) {
                return Err(parse_err("empty item, type, or feature".to_owned()));
            }
            rows.push((cols[0].trim(), cols[1].trim(), cols[2].trim()));
        }
        let schema = ContextSchema::load(context_schema)?;
        Self::from_triples(rows, schema)
    }

    pub fn num_items(&self) -> usize {
        self.item_features.len()
    }

    pub fn item(&self, item: usize) -> Result<&ItemFeatures> {
        self.item_features.get(item).ok_or(Error::OutOfRange {
            kind: "item",
            index: item,
            len: self.item_features.len(),
        })
    }

    pub fn feature_type(&self, feature: usize) -> Option<usize> {
        self.feature_type.get(feature).copied()
    }

    /// Items that carry `feature`, in index order.
    pub fn items_with_feature(&self, feature: usize) -> &[usize] {
        self.feature_items.get(feature).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn feature_label(&self, feature: usize) -> &str {
        self.features.name(feature).unwrap_or("?")
    }

    pub fn type_label(&self, type_idx: usize) -> &str {
        self.types.name(type_idx).unwrap_or("?")
    }

    pub fn item_label(&self, item: usize) -> &str {
        self.items.name(item).unwrap_or("?")
    }
}

impl TryFrom<CatalogRepr> for Catalog {
    type Error = Error;

    fn try_from(r: CatalogRepr) -> Result<Self> {
        if r.item_features.len() != r.items.len() {
            return Err(Error::invalid("item table and item features disagree in length"));
        }
        let mut feature_type = vec![usize::MAX; r.features.len()];
        let mut feature_items = vec![Vec::new(); r.features.len()];
        for (i, item) in r.item_features.iter().enumerate() {
            if item.groups.is_empty() || item.groups.iter().any(|g| g.features.is_empty()) {
                return Err(Error::invalid(format!(
                    "item `{}` has no features",
                    r.items.name(i).unwrap_or_default()
                )));
            }
            for (t, f) in item.iter() {
                if t >= r.types.len() || f >= r.features.len() {
                    return Err(Error::invalid("item references an unknown type or feature"));
                }
                if feature_type[f] != usize::MAX && feature_type[f] != t {
                    return Err(Error::invalid(format!(
                        "feature `{}` belongs to more than one type",
                        r.features.name(f).unwrap_or_default()
                    )));
                }
                feature_type[f] = t;
                feature_items[f].push(i);
            }
        }
        Ok(Catalog {
            users: r.users,
            items: r.items,
            features: r.features,
            types: r.types,
            schema: r.schema,
            item_features: r.item_features,
            feature_type,
            feature_items,
        })
    }
}

impl From<Catalog> for CatalogRepr {
    fn from(c: Catalog) -> Self {
        CatalogRepr {
            users: c.users,
            items: c.items,
            features: c.features,
            types: c.types,
            schema: c.schema,
            item_features: c.item_features,
        }
    }
}
