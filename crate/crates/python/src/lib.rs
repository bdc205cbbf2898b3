//! Python bindings: data preparation, training, prediction, explanations,
//! feedback, axiom checks and importance clustering.
//!
//! Structured results (breakdowns, explanations, reports) come back as plain
//! Python dicts and lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use cafata_core::analysis::{cluster_report, export_importance, kmeans as core_kmeans};
use cafata_core::argumentation::{
    build_taf, check_feedback_monotonicity, check_weak_balance, check_weak_monotonicity, InstanceSource,
    DISPLAY_NEUTRAL_EPS,
};
use cafata_core::checkpoint::{Checkpoint, PreparedData, Weights};
use cafata_core::data::{
    index_interactions, k_core_filter, load_interactions, log_transform_counts, split_dataset, SplitRatios,
};
use cafata_core::explain::{
    classify_scenario, contrastive_explanation, template_explanation_ranked, Ranking, DEFAULT_THETA_HI,
    DEFAULT_THETA_LO,
};
use cafata_core::feedback::{apply_feedback, Direction, FeedbackStore, DEFAULT_STEP};
use cafata_core::synth::WorldLimits;
use cafata_core::train::{evaluate, train as core_train, train_mf, TrainConfig};
use cafata_core::{Catalog, ContextualSituation, Model, ModelConfig, RatingScale, Variant};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn py_err(e: cafata_core::Error) -> PyErr {
    use cafata_core::Error as E;
    match e {
        E::Io { .. } => PyIOError::new_err(e.to_string()),
        E::Invalid(_) | E::Unknown { .. } | E::OutOfRange { .. } | E::Parse { .. } | E::Version { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for cafata_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_py(py: Python<'_>, value: &impl Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_ranking(s: &str) -> PyResult<Ranking> {
    match s {
        "weighted" => Ok(Ranking::Weighted),
        "raw" => Ok(Ranking::Raw),
        _ => Err(PyValueError::new_err(format!("ranking must be `weighted` or `raw`, got `{s}`"))),
    }
}

/// Reads the input files, preprocesses and splits them, and writes a
/// prepared dataset to `out`. Returns a summary dict.
#[pyfunction]
#[pyo3(signature = (interactions, features, schema, out, log_transform=false, k_core=None, scale=None, split=(0.8, 0.1, 0.1), seed=0))]
#[allow(clippy::too_many_arguments)]
fn prepare(
    py: Python<'_>,
    interactions: PathBuf,
    features: PathBuf,
    schema: PathBuf,
    out: PathBuf,
    log_transform: bool,
    k_core: Option<usize>,
    scale: Option<(f64, f64)>,
    split: (f64, f64, f64),
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let mut catalog = Catalog::load(&features, &schema).py()?;
    let mut raw = load_interactions(&interactions, &catalog.schema).py()?;
    if log_transform {
        raw = log_transform_counts(raw).py()?;
    }
    if let Some(k) = k_core {
        raw = k_core_filter(raw, k);
    }
    let scale = match scale {
        Some((lo, hi)) => RatingScale::new(lo, hi),
        None => RatingScale::from_values(raw.iter().map(|r| r.value)),
    }
    .py()?;
    let (rows, dropped) = index_interactions(&raw, &mut catalog, &scale).py()?;
    let ratios = SplitRatios {
        train: split.0,
        valid: split.1,
        test: split.2,
    };
    let dataset = split_dataset(rows, ratios, seed).py()?;
    let summary = serde_json::json!({
        "users": catalog.users.len(),
        "items": catalog.num_items(),
        "dropped_unknown_items": dropped,
        "train": dataset.split.train.len(),
        "valid": dataset.split.valid.len(),
        "test": dataset.split.test.len(),
        "scale": scale,
    });
    PreparedData::new(catalog, scale, dataset).save(&out).py()?;
    to_py(py, &summary)
}

/// Trains on a prepared dataset and writes a checkpoint to `out`.
/// `variant` is one of `ca-fata`, `fata`, `avg-ca-fata`, `avg-fata`, `mf`.
#[pyfunction]
#[pyo3(signature = (data, out, variant="ca-fata", dim=32, epochs=200, batch_size=256, lr=0.05, l2=1e-5, patience=10, slope=0.01, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    data: PathBuf,
    out: PathBuf,
    variant: &str,
    dim: usize,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    l2: f64,
    patience: usize,
    slope: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let data = PreparedData::load(&data).py()?;
    let config = TrainConfig {
        epochs,
        batch_size,
        learning_rate: lr,
        l2_reg: l2,
        seed,
        early_stop_patience: patience,
    };
    let (weights, log) = py
        .detach(|| {
            if variant == "mf" {
                train_mf(&data.dataset, &data.catalog, dim, seed, &config, &data.scale).map(|(m, l)| (Weights::Mf(m), l))
            } else {
                let variant: Variant = variant.parse()?;
                let mc = ModelConfig {
                    dim,
                    variant,
                    leaky_relu_slope: slope,
                    seed,
                };
                core_train(&data.dataset, &data.catalog, mc, &config, &data.scale)
                    .map(|(m, l)| (Weights::Attribution(m), l))
            }
        })
        .py()?;
    let history = data.dataset.train_history(data.catalog.users.len());
    let ckpt = Checkpoint::new(weights, data.catalog, data.scale, history, Some(config));
    ckpt.save(&out).py()?;
    to_py(py, &log)
}

/// Runs the three property checkers on random models and returns their
/// reports.
#[pyfunction]
#[pyo3(signature = (trials=1000, seed=0))]
fn check_axioms(py: Python<'_>, trials: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let source = InstanceSource::Random(WorldLimits::default());
    let reports = py
        .detach(|| {
            Ok::<_, cafata_core::Error>(vec![
                check_weak_balance(&source, trials, seed)?,
                check_weak_monotonicity(&source, trials, seed)?,
                check_feedback_monotonicity(&source, trials, seed)?,
            ])
        })
        .py()?;
    to_py(py, &reports)
}

/// Lloyd's algorithm with k-means++ seeding.
#[pyfunction]
#[pyo3(signature = (points, k, seed=0, max_iter=300))]
fn kmeans(py: Python<'_>, points: Vec<Vec<f64>>, k: usize, seed: u64, max_iter: usize) -> PyResult<Py<PyAny>> {
    let r = core_kmeans(&points, k, seed, max_iter).py()?;
    to_py(py, &r)
}

/// A trained checkpoint plus an in-memory feedback store.
#[pyclass(module = "cafata")]
struct Recommender {
    ckpt: Checkpoint,
    feedback: FeedbackStore,
}

impl Recommender {
    fn model(&self) -> PyResult<&Model> {
        self.ckpt.weights.attribution().py()
    }

    fn user(&self, name: &str) -> PyResult<usize> {
        self.ckpt
            .catalog
            .users
            .get(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown user `{name}`")))
    }

    fn item(&self, name: &str) -> PyResult<usize> {
        self.ckpt
            .catalog
            .items
            .get(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown item `{name}`")))
    }

    fn situation(&self, context: Option<BTreeMap<String, String>>) -> PyResult<ContextualSituation> {
        let schema = &self.ckpt.catalog.schema;
        let cs = schema.situation(context.unwrap_or_default()).py()?;
        let variant = self.model()?.config.variant;
        if variant.uses_context() && !cs.is_complete(schema) {
            return Err(PyValueError::new_err(format!(
                "a {variant} model needs a condition for every context factor"
            )));
        }
        Ok(cs)
    }
}

#[pymethods]
impl Recommender {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            ckpt: Checkpoint::load(&path).py()?,
            feedback: FeedbackStore::new(),
        })
    }

    #[getter]
    fn variant(&self) -> String {
        self.ckpt.weights.label()
    }

    #[getter]
    fn users(&self) -> Vec<String> {
        self.ckpt.catalog.users.names().to_vec()
    }

    #[getter]
    fn items(&self) -> Vec<String> {
        self.ckpt.catalog.items.names().to_vec()
    }

    /// Factor name -> condition names.
    #[getter]
    fn factors(&self) -> BTreeMap<String, Vec<String>> {
        let schema = &self.ckpt.catalog.schema;
        (0..schema.num_factors())
            .map(|f| {
                (
                    schema.factor_name(f).unwrap_or_default().to_owned(),
                    schema
                        .conditions_of(f)
                        .iter()
                        .map(|&c| schema.condition_name(c).unwrap_or_default().to_owned())
                        .collect(),
                )
            })
            .collect()
    }

    #[pyo3(signature = (user, item, context=None))]
    fn predict(&self, user: &str, item: &str, context: Option<BTreeMap<String, String>>) -> PyResult<f64> {
        let (u, i) = (self.user(user)?, self.item(item)?);
        let cs = self.situation(context)?;
        let o = self.feedback.overrides_for(u);
        Ok(self.model()?.predict(&self.ckpt.catalog, u, i, &cs, &o).py()?.rating)
    }

    /// Every intermediate quantity of one prediction.
    #[pyo3(signature = (user, item, context=None))]
    fn breakdown(
        &self,
        py: Python<'_>,
        user: &str,
        item: &str,
        context: Option<BTreeMap<String, String>>,
    ) -> PyResult<Py<PyAny>> {
        let (u, i) = (self.user(user)?, self.item(item)?);
        let cs = self.situation(context)?;
        let o = self.feedback.overrides_for(u);
        let b = self.model()?.predict(&self.ckpt.catalog, u, i, &cs, &o).py()?;
        to_py(py, &b)
    }

    /// Unseen items ranked by predicted rating.
    #[pyo3(signature = (user, context=None, n=10))]
    fn recommend(
        &self,
        user: &str,
        context: Option<BTreeMap<String, String>>,
        n: usize,
    ) -> PyResult<Vec<(String, f64)>> {
        let u = self.user(user)?;
        let cs = self.situation(context)?;
        let o = self.feedback.overrides_for(u);
        let model = self.model()?;
        let catalog = &self.ckpt.catalog;
        let mut scored = Vec::new();
        for i in self.ckpt.unseen_items(u) {
            scored.push((i, model.predict(catalog, u, i, &cs, &o).py()?.rating));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(n)
            .map(|(i, r)| (catalog.item_label(i).to_owned(), r))
            .collect())
    }

    #[pyo3(signature = (user, item, context=None, neutral_eps=DISPLAY_NEUTRAL_EPS))]
    fn taf(
        &self,
        py: Python<'_>,
        user: &str,
        item: &str,
        context: Option<BTreeMap<String, String>>,
        neutral_eps: f64,
    ) -> PyResult<Py<PyAny>> {
        let (u, i) = (self.user(user)?, self.item(item)?);
        let cs = self.situation(context)?;
        let o = self.feedback.overrides_for(u);
        let b = self.model()?.predict(&self.ckpt.catalog, u, i, &cs, &o).py()?;
        to_py(py, &build_taf(&b, neutral_eps).export(&self.ckpt.catalog))
    }

    #[pyo3(signature = (user, item, context=None, ranking="weighted", theta_lo=DEFAULT_THETA_LO, theta_hi=DEFAULT_THETA_HI, neutral_eps=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn explain(
        &self,
        py: Python<'_>,
        user: &str,
        item: &str,
        context: Option<BTreeMap<String, String>>,
        ranking: &str,
        theta_lo: f64,
        theta_hi: f64,
        neutral_eps: f64,
    ) -> PyResult<Py<PyAny>> {
        if !(theta_lo < theta_hi) {
            return Err(PyValueError::new_err("theta_lo must be below theta_hi"));
        }
        let ranking = parse_ranking(ranking)?;
        let (u, i) = (self.user(user)?, self.item(item)?);
        let cs = self.situation(context)?;
        let o = self.feedback.overrides_for(u);
        let catalog = &self.ckpt.catalog;
        let b = self.model()?.predict(catalog, u, i, &cs, &o).py()?;
        let taf = build_taf(&b, neutral_eps);
        let scenario = classify_scenario(b.rating, theta_lo, theta_hi);
        let e = template_explanation_ranked(catalog, &b, &taf, scenario, ranking).py()?;
        to_py(py, &e.export(catalog))
    }

    /// Contrasts the best and worst of `candidates` (default: unseen items).
    #[pyo3(signature = (user, context=None, candidates=None, theta_lo=DEFAULT_THETA_LO, theta_hi=DEFAULT_THETA_HI))]
    fn contrastive(
        &self,
        py: Python<'_>,
        user: &str,
        context: Option<BTreeMap<String, String>>,
        candidates: Option<Vec<String>>,
        theta_lo: f64,
        theta_hi: f64,
    ) -> PyResult<Py<PyAny>> {
        let u = self.user(user)?;
        let cs = self.situation(context)?;
        let ids = match candidates {
            Some(names) => names.iter().map(|n| self.item(n)).collect::<PyResult<Vec<_>>>()?,
            None => self.ckpt.unseen_items(u),
        };
        let o = self.feedback.overrides_for(u);
        let catalog = &self.ckpt.catalog;
        let e = contrastive_explanation(self.model()?, catalog, u, &cs, &ids, &o, theta_lo, theta_hi).py()?;
        to_py(py, &e.export(catalog))
    }

    /// Likes or dislikes a feature for a user; later predictions for that
    /// user use the adjusted rating.
    #[pyo3(signature = (user, feature, direction, context=None, step=DEFAULT_STEP))]
    fn feedback(
        &mut self,
        py: Python<'_>,
        user: &str,
        feature: &str,
        direction: &str,
        context: Option<BTreeMap<String, String>>,
        step: f64,
    ) -> PyResult<Py<PyAny>> {
        let u = self.user(user)?;
        let cs = self.situation(context)?;
        let f = self
            .ckpt
            .catalog
            .features
            .get(feature)
            .ok_or_else(|| PyValueError::new_err(format!("unknown feature `{feature}`")))?;
        let dir: Direction = direction.parse().py()?;
        let Weights::Attribution(model) = &self.ckpt.weights else {
            return Err(PyValueError::new_err("the mf baseline has no feature ratings"));
        };
        let entry = apply_feedback(&mut self.feedback, model, &self.ckpt.catalog, u, f, &cs, dir, step).py()?;
        to_py(py, &entry)
    }

    /// Per-user context-factor importance: `{users, factors, rows}`.
    fn importance(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let m = export_importance(self.model()?, &self.ckpt.catalog.users, &self.ckpt.catalog.schema).py()?;
        to_py(
            py,
            &serde_json::json!({ "users": m.users, "factors": m.factors, "rows": m.rows }),
        )
    }

    /// Clusters users by importance and returns assignments and cluster means.
    #[pyo3(signature = (k=4, seed=0, max_iter=300))]
    fn cluster(&self, py: Python<'_>, k: usize, seed: u64, max_iter: usize) -> PyResult<Py<PyAny>> {
        let m = export_importance(self.model()?, &self.ckpt.catalog.users, &self.ckpt.catalog.schema).py()?;
        let km = core_kmeans(&m.rows, k, seed, max_iter).py()?;
        let report = cluster_report(&km.assignments, &m).py()?;
        let assignments: BTreeMap<&str, usize> =
            m.users.iter().map(String::as_str).zip(km.assignments.iter().copied()).collect();
        to_py(
            py,
            &serde_json::json!({ "assignments": assignments, "inertia": km.inertia, "history": km.history, "report": report }),
        )
    }

    /// RMSE/MAE on one split (`train`, `valid` or `test`) of a prepared dataset.
    #[pyo3(signature = (data, split="test"))]
    fn evaluate(&self, py: Python<'_>, data: PathBuf, split: &str) -> PyResult<Py<PyAny>> {
        let data = PreparedData::load(&data).py()?;
        let rows: Vec<_> = match split {
            "train" => data.dataset.train().collect(),
            "valid" => data.dataset.valid().collect(),
            "test" => data.dataset.test().collect(),
            _ => return Err(PyValueError::new_err(format!("unknown split `{split}`"))),
        };
        let r = evaluate(self.ckpt.weights.scorer(), &self.ckpt.catalog, rows, &self.ckpt.scale).py()?;
        to_py(py, &r)
    }

    fn __repr__(&self) -> String {
        format!(
            "Recommender(variant={:?}, users={}, items={})",
            self.ckpt.weights.label(),
            self.ckpt.catalog.users.len(),
            self.ckpt.catalog.num_items()
        )
    }
}

#[pymodule]
fn cafata(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Recommender>()?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(check_axioms, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    Ok(())
}
