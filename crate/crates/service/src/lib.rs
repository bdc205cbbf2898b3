//! HTTP/JSON API over a trained checkpoint: sessions, ranked
//! recommendations, explanations, argumentation exports and like/dislike
//! feedback on individual features.
//!
//! The checkpoint is read-only; the only mutable state is the feedback store,
//! persisted to an append-only journal before each feedback response. There
//! is no authentication.

mod error;
mod routes;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::HeaderValue;
use axum::Router;
use cafata_core::checkpoint::{Checkpoint, Weights};
use cafata_core::feedback::{FeedbackStore, DEFAULT_STEP};
use cafata_core::{ContextualSituation, Model};
use parking_lot::{Mutex, RwLock};
use tower_http::cors::{Any, CorsLayer};

pub use error::{ApiError, ErrorBody};

pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    /// Feedback journal; feedback stays in memory only when unset.
    pub journal: Option<PathBuf>,
    pub step: f64,
    pub session_ttl: Duration,
    /// Allowed browser origin; any origin when unset.
    pub cors_origin: Option<String>,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub neutral_eps: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            journal: None,
            step: DEFAULT_STEP,
            session_ttl: DEFAULT_SESSION_TTL,
            cors_origin: None,
            theta_lo: cafata_core::explain::DEFAULT_THETA_LO,
            theta_hi: cafata_core::explain::DEFAULT_THETA_HI,
            neutral_eps: cafata_core::argumentation::DISPLAY_NEUTRAL_EPS,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Session {
    pub id: String,
    pub user: usize,
    pub context: ContextualSituation,
    pub created: Instant,
}

#[derive(Default)]
pub(crate) struct Sessions {
    by_id: HashMap<String, Session>,
    by_key: HashMap<(usize, ContextualSituation), String>,
}

impl Sessions {
    fn purge(&mut self, ttl: Duration) {
        let now = Instant::now();
        let expired: Vec<String> = self
            .by_id
            .values()
            .filter(|s| now.duration_since(s.created) >= ttl)
            .map(|s| s.id.clone())
            .collect();
        for id in expired {
            if let Some(s) = self.by_id.remove(&id) {
                self.by_key.remove(&(s.user, s.context));
            }
        }
    }
}

/// Shared state behind every handler.
pub struct AppState {
    pub(crate) checkpoint: Checkpoint,
    pub(crate) config: ServiceConfig,
    pub(crate) store: RwLock<FeedbackStore>,
    pub(crate) sessions: Mutex<Sessions>,
    user_locks: Mutex<HashMap<usize, Arc<tokio::sync::Mutex<()>>>>,
    pub(crate) journal_lock: Arc<Mutex<()>>,
    next_session: AtomicU64,
}

impl AppState {
    /// Replays the journal, if configured, into the feedback store.
    pub fn new(checkpoint: Checkpoint, config: ServiceConfig) -> cafata_core::Result<Self> {
        if let Weights::Mf(_) = checkpoint.weights {
            return Err(cafata_core::Error::Invalid(
                "the mf baseline cannot be served: it has no feature attributions".into(),
            ));
        }
        if !(config.theta_lo < config.theta_hi) {
            return Err(cafata_core::Error::Invalid("theta_lo must be below theta_hi".into()));
        }
        let store = match &config.journal {
            Some(path) => FeedbackStore::load_journal(path)?,
            None => FeedbackStore::new(),
        };
        if !store.journal().is_empty() {
            log::info!("replayed {} feedback entries", store.journal().len());
        }
        Ok(Self {
            checkpoint,
            config,
            store: RwLock::new(store),
            sessions: Mutex::new(Sessions::default()),
            user_locks: Mutex::new(HashMap::new()),
            journal_lock: Arc::new(Mutex::new(())),
            next_session: AtomicU64::new(1),
        })
    }

    pub(crate) fn model(&self) -> &Model {
        match &self.checkpoint.weights {
            Weights::Attribution(m) => m,
            Weights::Mf(_) => unreachable!("rejected at startup"),
        }
    }

    pub(crate) fn user_lock(&self, user: usize) -> Arc<tokio::sync::Mutex<()>> {
        self.user_locks.lock().entry(user).or_default().clone()
    }

    /// Returns the session and whether it was newly created.
    pub(crate) fn open_session(&self, user: usize, context: ContextualSituation) -> (Session, bool) {
        let mut sessions = self.sessions.lock();
        sessions.purge(self.config.session_ttl);
        let key = (user, context.clone());
        if let Some(id) = sessions.by_key.get(&key) {
            return (sessions.by_id[id].clone(), false);
        }
        let id = format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed));
        let session = Session {
            id: id.clone(),
            user,
            context,
            created: Instant::now(),
        };
        sessions.by_key.insert(key, id.clone());
        sessions.by_id.insert(id, session.clone());
        (session, true)
    }

    pub(crate) fn session(&self, id: &str) -> Result<Session, ApiError> {
        let sessions = self.sessions.lock();
        match sessions.by_id.get(id) {
            Some(s) if s.created.elapsed() < self.config.session_ttl => Ok(s.clone()),
            _ => Err(ApiError::not_found(format!("unknown session `{id}`"))),
        }
    }

    /// A copy of the feedback journal.
    pub fn journal(&self) -> Vec<cafata_core::feedback::JournalEntry> {
        self.store.read().journal().to_vec()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = match &state.config.cors_origin {
        Some(origin) => match origin.parse::<HeaderValue>() {
            Ok(v) => CorsLayer::new().allow_origin(v),
            Err(_) => {
                log::warn!("ignoring invalid CORS origin `{origin}`");
                CorsLayer::new()
            }
        },
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    routes::routes().with_state(state).layer(cors)
}

/// Binds `config.addr` and serves until the process is stopped.
pub async fn serve(checkpoint: Checkpoint, config: ServiceConfig) -> std::io::Result<()> {
    let addr = config.addr;
    let state = AppState::new(checkpoint, config).map_err(std::io::Error::other)?;
    let app = router(Arc::new(state));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}
