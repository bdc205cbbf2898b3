//! Context-aware feature attribution through argumentation.
//!
//! A factorization recommender whose intermediate quantities (context
//! factor importance, feature-type importance, per-feature ratings) double
//! as a tripolar argumentation framework: each item feature supports,
//! attacks or neutralizes the recommendation of its item, with strength
//! equal to the user's predicted rating of that feature.

pub mod analysis;
pub mod argumentation;
pub mod catalog;
pub mod checkpoint;
pub mod context;
pub mod data;
pub mod error;
pub mod explain;
pub mod feedback;
pub mod ids;
pub mod model;
pub mod synth;
pub mod train;

pub use catalog::{Catalog, ItemFeatures, TypeGroup};
pub use context::{ContextSchema, ContextualSituation};
pub use data::{Dataset, Interaction, RatingScale, RawInteraction};
pub use error::{Error, Result};
pub use model::{EmbeddingSpace, FeatureOverrides, Model, ModelConfig, PredictionBreakdown, Variant};
