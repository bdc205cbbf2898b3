//! Self-describing JSON checkpoints: weights, catalog with id tables, rating
//! scale, and each user's training history.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::data::{Dataset, RatingScale};
use crate::error::{Error, Result};
use crate::model::{MfModel, Model};
use crate::train::{Scorer, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Weights {
    /// One of the four attribution variants.
    Attribution(Model),
    Mf(MfModel),
}

impl Weights {
    pub fn label(&self) -> String {
        match self {
            Weights::Attribution(m) => m.label(),
            Weights::Mf(m) => m.label(),
        }
    }

    pub fn scorer(&self) -> &dyn Scorer {
        match self {
            Weights::Attribution(m) => m,
            Weights::Mf(m) => m,
        }
    }

    pub fn attribution(&self) -> Result<&Model> {
        match self {
            Weights::Attribution(m) => Ok(m),
            Weights::Mf(_) => Err(Error::invalid("the mf baseline has no feature attributions")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub weights: Weights,
    pub catalog: Catalog,
    pub scale: RatingScale,
    /// Items each user saw during training, sorted.
    pub history: Vec<Vec<usize>>,
    pub train_config: Option<TrainConfig>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

impl Checkpoint {
    pub fn new(
        weights: Weights,
        catalog: Catalog,
        scale: RatingScale,
        history: Vec<Vec<usize>>,
        train_config: Option<TrainConfig>,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            weights,
            catalog,
            scale,
            history,
            train_config,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: probe.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Self = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Items the user has not interacted with during training.
    pub fn unseen_items(&self, user: usize) -> Vec<usize> {
        let seen = self.history.get(user).map(Vec::as_slice).unwrap_or(&[]);
        (0..self.catalog.num_items())
            .filter(|i| seen.binary_search(i).is_err())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let users = self.catalog.users.len();
        match &self.weights {
            Weights::Attribution(m) => m.check_shape(&self.catalog)?,
            Weights::Mf(m) => {
                if m.users.rows() != users || m.items.rows() != self.catalog.num_items() {
                    return Err(Error::invalid("mf weights do not match the catalog"));
                }
            }
        }
        if self.history.len() != users {
            return Err(Error::invalid(format!(
                "history covers {} users, catalog has {users}",
                self.history.len()
            )));
        }
        Ok(())
    }
}

/// Output of the ingest pipeline and input to training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub version: u32,
    /// Catalog with every user of the dataset registered.
    pub catalog: Catalog,
    pub scale: RatingScale,
    pub dataset: Dataset,
}

impl PreparedData {
    pub fn new(catalog: Catalog, scale: RatingScale, dataset: Dataset) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            catalog,
            scale,
            dataset,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let probe: VersionProbe = serde_json::from_str(&text)?;
        if probe.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: probe.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ContextSchema;
    use crate::model::{ModelConfig, Variant};

    fn catalog() -> Catalog {
        let schema = ContextSchema::new([("time", vec!["day", "night"])]).unwrap();
        let mut c = Catalog::from_triples([("a", "genre", "x"), ("b", "genre", "y")], schema).unwrap();
        c.users.intern("u0");
        c.users.intern("u1");
        c
    }

    fn checkpoint(variant: Variant) -> Checkpoint {
        let c = catalog();
        let model = Model::init(
            ModelConfig {
                dim: 3,
                variant,
                seed: 4,
                ..ModelConfig::default()
            },
            &c,
        )
        .unwrap();
        Checkpoint::new(
            Weights::Attribution(model),
            c,
            RatingScale::new(1.0, 5.0).unwrap(),
            vec![vec![0], vec![]],
            Some(TrainConfig::default()),
        )
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let ck = checkpoint(Variant::CaFata);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), ck.to_json().unwrap());
    }

    #[test]
    fn mf_roundtrip() {
        let c = catalog();
        let ck = Checkpoint::new(
            Weights::Mf(MfModel::init(2, 2, 2, 1)),
            c,
            RatingScale::new(0.0, 1.0).unwrap(),
            vec![vec![], vec![1]],
            None,
        );
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert!(back.weights.attribution().is_err());
        assert_eq!(back.weights.label(), "mf");
    }

    #[test]
    fn version_is_checked() {
        let mut v: serde_json::Value = serde_json::from_str(&checkpoint(Variant::Fata).to_json().unwrap()).unwrap();
        v["version"] = 99.into();
        match Checkpoint::from_json(&v.to_string()) {
            Err(Error::Version { found: 99, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ck = checkpoint(Variant::CaFata);
        ck.catalog.users.intern("extra");
        ck.history.push(vec![]);
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }

    #[test]
    fn unseen_items_skip_history() {
        let ck = checkpoint(Variant::CaFata);
        assert_eq!(ck.unseen_items(0), vec![1]);
        assert_eq!(ck.unseen_items(1), vec![0, 1]);
    }
}
