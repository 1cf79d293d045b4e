//! HTTP service for live listening sessions.
//!
//! A session starts with random exploration and then lets the agent pick
//! songs; the listener answers each song with a song like/dislike and a
//! transition like/dislike. Routes:
//!
//! - `POST /sessions` creates a session and returns the first song.
//! - `POST /sessions/{id}/feedback` rates the current song and returns the
//!   next one, or the completion summary after the last song.
//! - `GET /sessions/{id}` returns the transcript and model diagnostics.
//! - `GET /corpus/songs?q=&page=&corpus=` lists songs.
//! - `GET /corpora` lists the loaded corpora.
//! - `GET /healthz` reports liveness.

pub mod config;
pub mod error;
pub mod session;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use djmc_core::agent::{AgentKind, PlanConfig};
use djmc_core::corpus::{load_corpus, Corpus};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;

pub use config::ServiceConfig;
pub use error::{ServiceError, StartupError};
use session::{Feedback, FeedbackOutcome, LiveSession, SessionSpec, SessionView, SongCard};

type SessionHandle = Arc<Mutex<LiveSession>>;

pub struct AppState {
    pub config: ServiceConfig,
    corpora: BTreeMap<String, Arc<Corpus>>,
    sessions: RwLock<HashMap<String, SessionHandle>>,
}

impl AppState {
    /// Loads the configured corpora and replays every session log.
    pub fn load(config: ServiceConfig) -> Result<Arc<Self>, StartupError> {
        config.validate()?;
        let mut corpora = BTreeMap::new();
        for (name, path) in &config.corpora {
            let corpus = load_corpus(path)?;
            tracing::info!(corpus = %name, songs = corpus.len(), "loaded corpus");
            corpora.insert(name.clone(), Arc::new(corpus));
        }
        Self::with_corpora(config, corpora)
    }

    /// Like [`AppState::load`] with corpora already in memory.
    pub fn with_corpora(
        config: ServiceConfig,
        corpora: BTreeMap<String, Arc<Corpus>>,
    ) -> Result<Arc<Self>, StartupError> {
        if corpora.is_empty() {
            return Err(StartupError::Config("no corpus configured".into()));
        }
        std::fs::create_dir_all(&config.log_dir)?;
        let recovered = LiveSession::load_all(&config.log_dir, |name| corpora.get(name).cloned())
            .map_err(StartupError::Recovery)?;
        tracing::info!(sessions = recovered.len(), "replayed session logs");
        let sessions = recovered
            .into_iter()
            .map(|s| (s.id.clone(), Arc::new(Mutex::new(s))))
            .collect();
        Ok(Arc::new(Self {
            config,
            corpora,
            sessions: RwLock::new(sessions),
        }))
    }

    fn corpus(&self, name: &str) -> Result<Arc<Corpus>, ServiceError> {
        self.corpora
            .get(name)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown corpus {name:?}")))
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ServiceError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown session {id:?}")))
    }

    fn log_dir(&self) -> PathBuf {
        self.config.log_dir.clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/corpora", get(list_corpora))
        .route("/corpus/songs", get(list_songs))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/feedback", post(submit_feedback))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds the configured address and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<(), StartupError> {
    let listen = config.listen.clone();
    let state = AppState::load(config)?;
    let listener = tokio::net::TcpListener::bind(&listen).await?;
    tracing::info!(address = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn parse_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes, allow_empty: bool) -> Result<T, ServiceError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return if allow_empty {
            Ok(T::default())
        } else {
            Err(ServiceError::BadRequest("request body is required".into()))
        };
    }
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid request body: {e}")))
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Serialize)]
struct CorpusInfo {
    name: String,
    songs: usize,
    hash: String,
}

async fn list_corpora(State(state): State<Arc<AppState>>) -> Json<Vec<CorpusInfo>> {
    Json(
        state
            .corpora
            .iter()
            .map(|(name, c)| CorpusInfo {
                name: name.clone(),
                songs: c.len(),
                hash: c.hash().to_string(),
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
struct SongQuery {
    #[serde(default)]
    q: Option<String>,
    #[serde(default)]
    page: usize,
    #[serde(default)]
    corpus: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusSong {
    pub id: String,
    pub title: String,
    pub artist: String,
    pub album: String,
    /// Decile bin of each descriptor.
    pub bins: Vec<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SongPage {
    pub corpus: String,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub songs: Vec<CorpusSong>,
}

async fn list_songs(
    State(state): State<Arc<AppState>>,
    Query(query): Query<SongQuery>,
) -> Result<Json<SongPage>, ServiceError> {
    let name = query.corpus.unwrap_or_else(|| config::DEFAULT_CORPUS.into());
    let corpus = state.corpus(&name)?;
    let needle = query.q.unwrap_or_default().to_lowercase();
    let matching: Vec<usize> = (0..corpus.len())
        .filter(|&i| {
            let s = corpus.song(i);
            needle.is_empty() || s.title.to_lowercase().contains(&needle) || s.artist.to_lowercase().contains(&needle)
        })
        .collect();
    let size = state.config.page_size;
    let songs = matching
        .iter()
        .skip(query.page.saturating_mul(size))
        .take(size)
        .map(|&i| {
            let s = corpus.song(i);
            CorpusSong {
                id: s.id.clone(),
                title: s.title.clone(),
                artist: s.artist.clone(),
                album: s.album.clone(),
                bins: corpus.bins(i).to_vec(),
            }
        })
        .collect();
    Ok(Json(SongPage {
        corpus: name,
        page: query.page,
        page_size: size,
        total: matching.len(),
        songs,
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub corpus: Option<String>,
    #[serde(alias = "K", alias = "length")]
    pub k: Option<usize>,
    #[serde(alias = "n")]
    pub explore: Option<usize>,
    pub agent: Option<AgentKind>,
    pub horizon: Option<usize>,
    pub budget: Option<usize>,
    pub use_song_types: Option<bool>,
    pub n_song_types: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub length: usize,
    pub explore: usize,
    pub song: SongCard,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<CreateResponse>), ServiceError> {
    let req: CreateRequest = parse_body(&body, true)?;
    let corpus_name = req.corpus.unwrap_or_else(|| config::DEFAULT_CORPUS.into());
    let corpus = state.corpus(&corpus_name)?;
    let defaults = PlanConfig::default();
    let length = req.k.unwrap_or(state.config.default_length);
    let spec = SessionSpec {
        corpus: corpus_name,
        agent: req.agent.unwrap_or(AgentKind::Djmc),
        length,
        // The default explore budget is capped at a short session's length.
        explore: req.explore.unwrap_or(state.config.default_explore.min(length)),
        plan: PlanConfig {
            horizon: req.horizon.unwrap_or(defaults.horizon),
            budget: req.budget.unwrap_or(defaults.budget),
            use_song_types: req.use_song_types.unwrap_or(defaults.use_song_types),
            n_song_types: req.n_song_types.or(defaults.n_song_types),
        },
    };
    create_with(state, spec, corpus).await
}

async fn create_with(
    state: Arc<AppState>,
    spec: SessionSpec,
    corpus: Arc<Corpus>,
) -> Result<(StatusCode, Json<CreateResponse>), ServiceError> {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let (seed, log_dir) = (state.config.seed, state.log_dir());
    let session = tokio::task::spawn_blocking(move || LiveSession::create(id, spec, corpus, seed, &log_dir))
        .await
        .map_err(ServiceError::internal)??;
    let response = CreateResponse {
        session_id: session.id.clone(),
        length: session.length,
        explore: session.explore,
        song: session.current_song().expect("first song issued").clone(),
    };
    tracing::info!(session = %session.id, length = session.length, explore = session.explore, "session created");
    state
        .sessions
        .write()
        .expect("session map lock")
        .insert(session.id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(response)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackRequest {
    song_like: Option<bool>,
    transition_like: Option<bool>,
    step: Option<usize>,
}

async fn submit_feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<FeedbackOutcome>, ServiceError> {
    let handle = state.session(&id)?;
    let req: FeedbackRequest = parse_body(&body, false)?;
    let feedback = Feedback {
        song_like: req
            .song_like
            .ok_or_else(|| ServiceError::BadRequest("song_like is required".into()))?,
        transition_like: req.transition_like.unwrap_or(false),
        step: req.step,
    };
    // Planning can take a while; run it off the async workers while holding
    // this session's lock so feedback on the session stays serialized.
    let mut guard = handle.lock_owned().await;
    let outcome = tokio::task::spawn_blocking(move || guard.submit(feedback))
        .await
        .map_err(ServiceError::internal)??;
    Ok(Json(outcome))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ServiceError> {
    let handle = state.session(&id)?;
    let view = handle.lock().await.view();
    Ok(Json(view))
}
