//! Serving-time feature-rating overrides driven by user feedback, with an
//! append-only journal.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::context::ContextualSituation;
use crate::error::{Error, Result};
use crate::model::{FeatureOverrides, Model};

pub const DEFAULT_STEP: f64 = 0.5;

/// Overrides are kept inside `[-BAND, BAND]` whenever that does not cancel
/// the requested move.
pub const BAND: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Like,
    Dislike,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "like" => Ok(Direction::Like),
            "dislike" => Ok(Direction::Dislike),
            other => Err(Error::unknown("feedback direction", other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub timestamp_ms: u64,
    pub user: usize,
    pub feature: usize,
    pub old: f64,
    pub new: f64,
}

/// Rating that replaces `current` after one round of feedback.
///
/// Dislike moves to `min(current, 0) - step`, like to `max(current, 0) + step`.
/// The result is clamped to the band unless clamping would stop it from
/// moving strictly in the requested direction; then `current -/+ step` is used.
pub fn next_rating(current: f64, direction: Direction, step: f64) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("feedback step must be positive, got {step}")));
    }
    let next = match direction {
        Direction::Dislike => {
            let clamped = (current.min(0.0) - step).max(-BAND);
            if clamped < current {
                clamped
            } else {
                current - step
            }
        }
        Direction::Like => {
            let clamped = (current.max(0.0) + step).min(BAND);
            if clamped > current {
                clamped
            } else {
                current + step
            }
        }
    };
    Ok(next)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackStore {
    overrides: HashMap<usize, FeatureOverrides>,
    journal: Vec<JournalEntry>,
}

impl FeedbackStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Snapshot of one user's overrides.
    pub fn overrides_for(&self, user: usize) -> FeatureOverrides {
        self.overrides.get(&user).cloned().unwrap_or_default()
    }

    pub fn get(&self, user: usize, feature: usize) -> Option<f64> {
        self.overrides.get(&user).and_then(|o| o.get(feature))
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    /// Computes the entry for one feedback event without recording it.
    /// `model_rating` is the model's own rating for the feature; an existing
    /// override takes precedence as the current effective rating.
    pub fn propose(
        &self,
        user: usize,
        feature: usize,
        direction: Direction,
        step: f64,
        model_rating: f64,
    ) -> Result<JournalEntry> {
        let old = self.get(user, feature).unwrap_or(model_rating);
        let new = next_rating(old, direction, step)?;
        Ok(JournalEntry {
            timestamp_ms: now_ms(),
            user,
            feature,
            old,
            new,
        })
    }

    pub fn record(&mut self, entry: JournalEntry) {
        self.overrides
            .entry(entry.user)
            .or_default()
            .set(entry.feature, entry.new);
        self.journal.push(entry);
    }

    pub fn apply(
        &mut self,
        user: usize,
        feature: usize,
        direction: Direction,
        step: f64,
        model_rating: f64,
    ) -> Result<JournalEntry> {
        let entry = self.propose(user, feature, direction, step, model_rating)?;
        self.record(entry.clone());
        Ok(entry)
    }

    /// Rebuilds a store from journal entries in order.
    pub fn replay(entries: impl IntoIterator<Item = JournalEntry>) -> Self {
        let mut store = Self::new();
        for e in entries {
            store.record(e);
        }
        store
    }

    /// Users with at least one override, mapped to their overrides.
    pub fn all_overrides(&self) -> &HashMap<usize, FeatureOverrides> {
        &self.overrides
    }

    pub fn load_journal(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::new()),
            Err(e) => return Err(Error::io(path, e)),
        };
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: n as u64 + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self::replay(entries))
    }
}

/// Appends one entry as a JSON line and flushes it to disk.
pub fn append_journal(path: impl AsRef<Path>, entry: &JournalEntry) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_string(entry)?;
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.sync_data().map_err(|e| Error::io(path, e))
}

/// Applies like/dislike feedback on `feature` for `user`, taking the model's
/// rating under `cs` as the starting point when no override exists.
#[allow(clippy::too_many_arguments)]
pub fn apply_feedback(
    store: &mut FeedbackStore,
    model: &Model,
    catalog: &Catalog,
    user: usize,
    feature: usize,
    cs: &ContextualSituation,
    direction: Direction,
    step: f64,
) -> Result<JournalEntry> {
    if feature >= catalog.features.len() {
        return Err(Error::unknown("feature", feature.to_string()));
    }
    let model_rating = model.user_feature_rating(&catalog.schema, user, feature, cs)?;
    store.apply(user, feature, direction, step, model_rating)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn step_rule_examples() {
        assert_eq!(next_rating(0.4, Direction::Dislike, 0.5).unwrap(), -0.5);
        assert_eq!(next_rating(-0.2, Direction::Like, 0.5).unwrap(), 0.5);
        assert!(next_rating(0.1, Direction::Like, 0.0).is_err());
    }

    #[test]
    fn successive_dislikes() {
        let mut store = FeedbackStore::new();
        let a = store.apply(0, 3, Direction::Dislike, 0.5, 0.4).unwrap();
        assert_eq!(a.new, -0.5);
        let b = store.apply(0, 3, Direction::Dislike, 0.5, 0.4).unwrap();
        assert_eq!(b.old, -0.5);
        assert_eq!(b.new, -1.0);
        assert_eq!(store.journal().len(), 2);
    }

    #[test]
    fn band_never_cancels_a_move() {
        assert_eq!(next_rating(-1.2, Direction::Dislike, 0.5).unwrap(), -1.5);
        assert_eq!(next_rating(-1.5, Direction::Dislike, 0.5).unwrap(), -2.0);
        assert_eq!(next_rating(-3.0, Direction::Dislike, 0.5).unwrap(), -3.5);
        assert_eq!(next_rating(2.0, Direction::Like, 0.5).unwrap(), 2.5);
    }

    #[test]
    fn journal_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let mut store = FeedbackStore::new();
        for (u, f, d) in [(0, 1, Direction::Like), (1, 1, Direction::Dislike), (0, 1, Direction::Like)] {
            let e = store.apply(u, f, d, 0.5, 0.1).unwrap();
            append_journal(&path, &e).unwrap();
        }
        let back = FeedbackStore::load_journal(&path).unwrap();
        assert_eq!(back, store);
        assert_eq!(FeedbackStore::load_journal(dir.path().join("missing")).unwrap(), FeedbackStore::new());
    }

    proptest! {
        #[test]
        fn feedback_moves_strictly(current in -5.0f64..5.0, step in 0.01f64..2.0, like in any::<bool>()) {
            let dir = if like { Direction::Like } else { Direction::Dislike };
            let next = next_rating(current, dir, step).unwrap();
            if like { prop_assert!(next > current); } else { prop_assert!(next < current); }
            if current.abs() < BAND {
                prop_assert!(next.abs() <= BAND);
            }
        }

        #[test]
        fn replay_reproduces_overrides(events in prop::collection::vec((0usize..3, 0usize..4, any::<bool>(), -1.0f64..1.0), 0..30)) {
            let mut store = FeedbackStore::new();
            for (u, f, like, model) in events {
                let d = if like { Direction::Like } else { Direction::Dislike };
                store.apply(u, f, d, DEFAULT_STEP, model).unwrap();
            }
            let replayed = FeedbackStore::replay(store.journal().iter().cloned());
            prop_assert_eq!(replayed, store);
        }
    }
}
