//! HTTP service for live sessions. People occupy external seats through
//! opaque tokens, bots fill the rest, and clients poll for their view.

mod error;
mod live;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use duopoly_core::protocol::{
    CreateSession, ErrorCode, JoinRequest, Joined, SessionCreated, SessionRecord, StateView, SubmitPrice,
    SubmitQuantity,
};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tokio::time::Instant;

pub use error::ApiError;
pub use live::{replay, LiveSession};

pub const SWEEP_PERIOD: Duration = Duration::from_millis(200);

type Shared = Arc<Mutex<LiveSession>>;

#[derive(Clone, Default)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Default)]
struct Inner {
    sessions: RwLock<HashMap<String, Shared>>,
    out_dir: Option<PathBuf>,
}

impl AppState {
    /// Finished sessions are written to `out_dir` when one is given.
    pub fn new(out_dir: Option<PathBuf>) -> Self {
        AppState {
            inner: Arc::new(Inner {
                sessions: RwLock::default(),
                out_dir,
            }),
        }
    }

    fn session(&self, id: &str) -> Result<Shared, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(ErrorCode::UnknownSession, format!("no session {id:?}")))
    }

    pub fn create(&self, req: &CreateSession) -> Result<SessionCreated, ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = LiveSession::create(id.clone(), req)?;
        let created = SessionCreated {
            session_id: id.clone(),
            treatment: req.treatment,
            params: session.config().treatment.params,
            seats: session.n_seats(),
            humans: session.humans(),
        };
        tracing::info!(session = %id, treatment = %req.treatment, seats = created.seats, "session created");
        self.inner.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(session)));
        Ok(created)
    }

    /// Runs `f` with exclusive access to one session, then saves the log if
    /// that call finished it.
    fn mutate<T>(&self, id: &str, f: impl FnOnce(&mut LiveSession) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let shared = self.session(id)?;
        let mut session = shared.lock().unwrap();
        let out = f(&mut session);
        self.persist_if_done(&mut session);
        out
    }

    fn persist_if_done(&self, session: &mut LiveSession) {
        if !session.take_unpersisted() {
            return;
        }
        let Some(dir) = &self.inner.out_dir else { return };
        if let Err(e) = persist(dir, session) {
            tracing::error!(session = %session.id(), error = %e, "could not write the session log");
        }
    }

    /// Applies every expired deadline across all sessions.
    pub fn sweep(&self, now: Instant) {
        let all: Vec<Shared> = self.inner.sessions.read().unwrap().values().cloned().collect();
        for shared in all {
            let mut session = shared.lock().unwrap();
            if session.tick(now) {
                self.persist_if_done(&mut session);
            }
        }
    }

    pub fn join(&self, id: &str, req: &JoinRequest, now: Instant) -> Result<Joined, ApiError> {
        self.mutate(id, |s| {
            let token = uuid::Uuid::new_v4().simple().to_string();
            let subject = s.join(req.seat, token.clone(), now)?;
            Ok(Joined {
                token,
                subject,
                view: s.view(subject, now),
            })
        })
    }

    pub fn submit_price(&self, id: &str, req: &SubmitPrice, now: Instant) -> Result<StateView, ApiError> {
        self.mutate(id, |s| {
            let subject = s.subject_for(&req.token)?;
            s.submit_price(subject, req.price, now)?;
            Ok(s.view(subject, now))
        })
    }

    pub fn submit_quantity(&self, id: &str, req: &SubmitQuantity, now: Instant) -> Result<StateView, ApiError> {
        self.mutate(id, |s| {
            let subject = s.subject_for(&req.token)?;
            s.submit_quantity(subject, req.quantity, now)?;
            Ok(s.view(subject, now))
        })
    }

    pub fn state(&self, id: &str, token: &str, now: Instant) -> Result<StateView, ApiError> {
        let shared = self.session(id)?;
        let session = shared.lock().unwrap();
        let subject = session.subject_for(token)?;
        Ok(session.view(subject, now))
    }

    pub fn record(&self, id: &str) -> Result<SessionRecord, ApiError> {
        self.session(id)?.lock().unwrap().record()
    }
}

fn persist(dir: &Path, session: &LiveSession) -> Result<(), Box<dyn std::error::Error>> {
    std::fs::create_dir_all(dir)?;
    let record = session.record()?;
    let stem = dir.join(format!("session-{}", session.id()));
    record.log.save_csv(stem.with_extension("csv"))?;
    record.log.save_json(stem.with_extension("json"))?;
    std::fs::write(stem.with_extension("transcript.json"), serde_json::to_string_pretty(&record.transcript)?)?;
    tracing::info!(session = %session.id(), dir = %dir.display(), "session log written");
    Ok(())
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::new(ErrorCode::BadRequest, e.body_text()))
}

async fn create_session(
    State(app): State<AppState>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let req = body(payload)?;
    Ok((StatusCode::CREATED, Json(app.create(&req)?)))
}

async fn join_session(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<JoinRequest>, JsonRejection>,
) -> Result<Json<Joined>, ApiError> {
    let req = match payload {
        Err(JsonRejection::MissingJsonContentType(_)) => JoinRequest::default(),
        other => body(other)?,
    };
    app.join(&id, &req, Instant::now()).map(Json)
}

async fn submit_price(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<SubmitPrice>, JsonRejection>,
) -> Result<Json<StateView>, ApiError> {
    app.submit_price(&id, &body(payload)?, Instant::now()).map(Json)
}

async fn submit_quantity(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<SubmitQuantity>, JsonRejection>,
) -> Result<Json<StateView>, ApiError> {
    app.submit_quantity(&id, &body(payload)?, Instant::now()).map(Json)
}

#[derive(Deserialize)]
struct TokenQuery {
    token: String,
}

async fn get_state(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<TokenQuery>, QueryRejection>,
) -> Result<Json<StateView>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::new(ErrorCode::BadRequest, e.body_text()))?;
    app.state(&id, &q.token, Instant::now()).map(Json)
}

async fn get_log(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionRecord>, ApiError> {
    app.record(&id).map(Json)
}

async fn not_found() -> ApiError {
    ApiError::new(ErrorCode::BadRequest, "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/join", post(join_session))
        .route("/sessions/{id}/price", post(submit_price))
        .route("/sessions/{id}/quantity", post(submit_quantity))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/log", get(get_log))
        .fallback(not_found)
        .with_state(state)
}

pub fn spawn_sweeper(state: AppState, period: Duration) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(period);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            ticker.tick().await;
            state.sweep(Instant::now());
        }
    })
}

/// Serves until `shutdown` resolves, sweeping deadlines in the background.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = spawn_sweeper(state.clone(), SWEEP_PERIOD);
    let result = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    sweeper.abort();
    result
}

/// Resolves on Ctrl-C.
pub async fn ctrl_c() {
    if tokio::signal::ctrl_c().await.is_err() {
        std::future::pending::<()>().await;
    }
}
