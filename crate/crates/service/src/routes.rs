use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use cafata_core::argumentation::build_taf;
use cafata_core::explain::{classify_scenario, contrastive_explanation, template_explanation, Scenario};
use cafata_core::feedback::{append_journal, Direction};
use cafata_core::{ContextualSituation, FeatureOverrides};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ApiError, ApiResult};
use crate::{AppState, Session};

type AppRef = State<Arc<AppState>>;

pub(crate) fn routes() -> Router<Arc<AppState>> {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/meta", get(meta))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/recommendations", get(recommendations))
        .route("/sessions/{id}/explanations/{item}", get(explanation))
        .route("/sessions/{id}/feedback", post(feedback))
}

#[derive(Serialize)]
struct FactorMeta {
    name: String,
    conditions: Vec<String>,
}

#[derive(Serialize)]
struct Meta {
    variant: String,
    users: Vec<String>,
    factors: Vec<FactorMeta>,
    items: usize,
    features: usize,
}

async fn meta(State(state): AppRef) -> Json<Meta> {
    let catalog = &state.checkpoint.catalog;
    let schema = &catalog.schema;
    let factors = (0..schema.num_factors())
        .map(|f| FactorMeta {
            name: schema.factor_name(f).unwrap_or_default().to_owned(),
            conditions: schema
                .conditions_of(f)
                .iter()
                .map(|&c| schema.condition_name(c).unwrap_or_default().to_owned())
                .collect(),
        })
        .collect();
    Json(Meta {
        variant: state.model().config.variant.to_string(),
        users: catalog.users.names().to_vec(),
        factors,
        items: catalog.num_items(),
        features: catalog.features.len(),
    })
}

#[derive(Deserialize)]
struct CreateSession {
    user: String,
    #[serde(default)]
    context: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct SessionBody {
    session_id: String,
    user: String,
    context: BTreeMap<String, String>,
}

fn session_body(state: &AppState, s: &Session) -> SessionBody {
    let catalog = &state.checkpoint.catalog;
    let schema = &catalog.schema;
    SessionBody {
        session_id: s.id.clone(),
        user: catalog.users.name(s.user).unwrap_or_default().to_owned(),
        context: s
            .context
            .pairs(schema)
            .map(|(f, c)| {
                (
                    schema.factor_name(f).unwrap_or_default().to_owned(),
                    schema.condition_name(c).unwrap_or_default().to_owned(),
                )
            })
            .collect(),
    }
}

async fn create_session(
    State(state): AppRef,
    Json(body): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionBody>)> {
    let catalog = &state.checkpoint.catalog;
    let user = catalog
        .users
        .get(&body.user)
        .ok_or_else(|| ApiError::not_found(format!("unknown user `{}`", body.user)))?;
    let context = catalog.schema.situation(&body.context)?;
    let model = state.model();
    let context = if model.config.variant.uses_context() {
        if !context.is_complete(&catalog.schema) {
            return Err(ApiError::bad_request(format!(
                "a {} model needs a condition for every context factor",
                model.config.variant
            )));
        }
        context
    } else {
        // ignored by the model; keep sessions keyed on what matters
        ContextualSituation::empty()
    };
    let (session, created) = state.open_session(user, context);
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(session_body(&state, &session))))
}

async fn get_session(State(state): AppRef, Path(id): Path<String>) -> ApiResult<Json<SessionBody>> {
    let s = state.session(&id)?;
    Ok(Json(session_body(&state, &s)))
}

#[derive(Deserialize)]
struct RecQuery {
    n: Option<usize>,
}

#[derive(Serialize)]
struct Ranked {
    item: String,
    /// Prediction clamped to `[-1, 1]`.
    rating: f64,
    /// Unclamped prediction used for ranking.
    score: f64,
    scenario: Scenario,
}

#[derive(Serialize)]
struct RecBody {
    session_id: String,
    items: Vec<Ranked>,
}

fn ranked(state: &AppState, s: &Session, overrides: &FeatureOverrides) -> ApiResult<Vec<(usize, f64)>> {
    let model = state.model();
    let catalog = &state.checkpoint.catalog;
    let mut scored = Vec::new();
    for item in state.checkpoint.unseen_items(s.user) {
        let r = model.predict(catalog, s.user, item, &s.context, overrides)?.rating;
        scored.push((item, r));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

async fn recommendations(
    State(state): AppRef,
    Path(id): Path<String>,
    Query(q): Query<RecQuery>,
) -> ApiResult<Json<RecBody>> {
    let s = state.session(&id)?;
    let overrides = state.store.read().overrides_for(s.user);
    let n = q.n.unwrap_or(10);
    let catalog = &state.checkpoint.catalog;
    let items = ranked(&state, &s, &overrides)?
        .into_iter()
        .take(n)
        .map(|(item, score)| Ranked {
            item: catalog.item_label(item).to_owned(),
            rating: score.clamp(-1.0, 1.0),
            score,
            scenario: classify_scenario(score, state.config.theta_lo, state.config.theta_hi),
        })
        .collect();
    Ok(Json(RecBody { session_id: s.id, items }))
}

#[derive(Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum Mode {
    #[default]
    Template,
    Taf,
    Contrastive,
}

#[derive(Deserialize)]
struct ExplainQuery {
    #[serde(default)]
    mode: Mode,
}

async fn explanation(
    State(state): AppRef,
    Path((id, item_name)): Path<(String, String)>,
    Query(q): Query<ExplainQuery>,
) -> ApiResult<Json<Value>> {
    let s = state.session(&id)?;
    let catalog = &state.checkpoint.catalog;
    let item = catalog
        .items
        .get(&item_name)
        .ok_or_else(|| ApiError::not_found(format!("unknown item `{item_name}`")))?;
    let overrides = state.store.read().overrides_for(s.user);
    let model = state.model();
    let cfg = &state.config;
    let value = match q.mode {
        Mode::Template | Mode::Taf => {
            let b = model.predict(catalog, s.user, item, &s.context, &overrides)?;
            let taf = build_taf(&b, cfg.neutral_eps);
            if let Mode::Taf = q.mode {
                serde_json::to_value(taf.export(catalog))
            } else {
                let scenario = classify_scenario(b.rating, cfg.theta_lo, cfg.theta_hi);
                let e = template_explanation(catalog, &b, &taf, scenario)?;
                serde_json::to_value(e.export(catalog))
            }
        }
        Mode::Contrastive => {
            let mut candidates = state.checkpoint.unseen_items(s.user);
            if !candidates.contains(&item) {
                candidates.push(item);
            }
            if candidates.len() < 2 {
                return Err(ApiError::conflict("contrastive explanations need at least two candidate items"));
            }
            let e = contrastive_explanation(
                model,
                catalog,
                s.user,
                &s.context,
                &candidates,
                &overrides,
                cfg.theta_lo,
                cfg.theta_hi,
            )?;
            serde_json::to_value(e.export(catalog))
        }
    }
    .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(value))
}

#[derive(Deserialize)]
struct FeedbackRequest {
    feature: String,
    direction: Direction,
    step: Option<f64>,
}

#[derive(Serialize)]
struct ItemChange {
    item: String,
    old: f64,
    new: f64,
}

#[derive(Serialize)]
struct FeedbackBody {
    feature: String,
    direction: Direction,
    old_rating: f64,
    new_rating: f64,
    updated: Vec<ItemChange>,
}

async fn feedback(
    State(state): AppRef,
    Path(id): Path<String>,
    Json(req): Json<FeedbackRequest>,
) -> ApiResult<Json<FeedbackBody>> {
    let s = state.session(&id)?;
    let catalog = &state.checkpoint.catalog;
    let feature = catalog
        .features
        .get(&req.feature)
        .ok_or_else(|| ApiError::not_found(format!("unknown feature `{}`", req.feature)))?;
    let step = req.step.unwrap_or(state.config.step);
    let model = state.model();

    let lock = state.user_lock(s.user);
    let _guard = lock.lock().await;

    let model_rating = model.user_feature_rating(&catalog.schema, s.user, feature, &s.context)?;
    let (entry, before) = {
        let store = state.store.read();
        let entry = store.propose(s.user, feature, req.direction, step, model_rating)?;
        (entry, store.overrides_for(s.user))
    };
    if let Some(path) = state.config.journal.clone() {
        let e = entry.clone();
        let journal_lock = state.journal_lock.clone();
        tokio::task::spawn_blocking(move || {
            let _g = journal_lock.lock();
            append_journal(&path, &e)
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    }
    let after = {
        let mut store = state.store.write();
        store.record(entry.clone());
        store.overrides_for(s.user)
    };

    let mut updated = Vec::new();
    for &item in catalog.items_with_feature(feature) {
        let old = model.predict(catalog, s.user, item, &s.context, &before)?.rating;
        let new = model.predict(catalog, s.user, item, &s.context, &after)?.rating;
        updated.push(ItemChange {
            item: catalog.item_label(item).to_owned(),
            old,
            new,
        });
    }
    Ok(Json(FeedbackBody {
        feature: req.feature,
        direction: req.direction,
        old_rating: entry.old,
        new_rating: entry.new,
        updated,
    }))
}
