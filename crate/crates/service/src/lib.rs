//! HTTP session service for the guide agent.
//!
//! All endpoints live under `/api/v1`:
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | GET | `/maps` | | `[{id, name, nodes, edges}]` |
//! | GET | `/maps/{id}` | | [`MapDocument`] |
//! | POST | `/sessions` | [`CreateSession`] | `201 {id, last_seq}` |
//! | GET | `/sessions/{id}` | | [`SessionView`] |
//! | POST | `/sessions/{id}/query` | `{text}` | `202 {last_seq}` |
//! | POST | `/sessions/{id}/decision` | `{prompt_id, choice}` | `202 {last_seq}` |
//! | GET | `/sessions/{id}/events?after=n` | | server-sent events |
//! | GET | `/sessions/{id}/events/poll?after=n&wait_ms=t` | | `{events, closed}` |
//!
//! Each request runs the simulated trip to the next point where the user
//! has to act, so by the time a query is acknowledged its events are in the
//! log. Errors carry `{code, message}`.

mod error;
pub mod events;
mod map_doc;
mod session;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/service-api.md")]
mod book {}

use std::collections::{BTreeMap, VecDeque};
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use guide_core::gateway::{Decision, Gateway, MockGateway, RemoteConfig, RemoteGateway};
use guide_core::map::TopoMap;
use guide_core::vector_store::VectorStore;
use serde::{Deserialize, Serialize};

pub use error::{ApiError, ErrorBody};
pub use events::{ChatRole, EventKind, EventLog, RecoveryStage, SessionEvent};
pub use map_doc::{Bounds, EdgeDoc, MapDocument, NodeDoc};
pub use session::{CreateSession, MapEntry, Session, SessionView};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);
const MAX_POLL_WAIT_MS: u64 = 30_000;

#[derive(Debug, Clone)]
pub enum GatewayMode {
    Mock,
    Remote(RemoteConfig),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub idle_timeout: Duration,
    pub gateway: GatewayMode,
    /// Agent events one session may handle in total.
    pub max_events: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            gateway: GatewayMode::Mock,
            max_events: 20_000,
        }
    }
}

struct SessionHandle {
    session: Mutex<Session>,
    log: Arc<EventLog>,
    last_active: Mutex<Instant>,
}

impl SessionHandle {
    fn touch(&self) {
        *self.last_active.lock().expect("poisoned") = Instant::now();
    }
}

pub struct AppState {
    maps: BTreeMap<String, MapEntry>,
    sessions: Mutex<BTreeMap<String, Arc<SessionHandle>>>,
    next_id: AtomicU64,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            maps: BTreeMap::new(),
            sessions: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            config,
        }
    }

    pub fn with_map(mut self, id: impl Into<String>, map: TopoMap, store: VectorStore) -> Self {
        self.maps.insert(
            id.into(),
            MapEntry {
                map,
                store: Arc::new(store),
            },
        );
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn gateway(&self) -> Result<Box<dyn Gateway>, ApiError> {
        match &self.config.gateway {
            GatewayMode::Mock => Ok(Box::new(MockGateway::new())),
            GatewayMode::Remote(cfg) => RemoteGateway::new(cfg.clone())
                .map(|g| Box::new(g) as Box<dyn Gateway>)
                .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "gateway_unavailable", e.to_string())),
        }
    }

    /// Open a session. Blocks when the gateway is remote.
    pub fn create_session(&self, req: CreateSession) -> Result<String, ApiError> {
        let entry = self.maps.get(&req.map).ok_or_else(|| ApiError::unknown_map(&req.map))?;
        let gateway = self.gateway()?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let session = Session::create(id.clone(), entry, req, gateway, self.config.max_events)?;
        let handle = SessionHandle {
            log: session.log().clone(),
            session: Mutex::new(session),
            last_active: Mutex::new(Instant::now()),
        };
        self.sessions
            .lock()
            .expect("poisoned")
            .insert(id.clone(), Arc::new(handle));
        Ok(id)
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .lock()
            .expect("poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    /// Run `f` on the session, serialized with other requests to it.
    pub fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let h = self.handle(id)?;
        h.touch();
        let mut s = h
            .session
            .lock()
            .map_err(|_| ApiError::internal("session state poisoned"))?;
        f(&mut s)
    }

    pub fn session_log(&self, id: &str) -> Result<Arc<EventLog>, ApiError> {
        Ok(self.handle(id)?.log.clone())
    }

    /// Expire sessions idle since before `now - idle_timeout` and forget
    /// those that have been expired for another full timeout. Returns the
    /// ids expired by this call.
    pub fn sweep(&self, now: Instant) -> Vec<String> {
        let idle = self.config.idle_timeout;
        let handles: Vec<(String, Arc<SessionHandle>)> = self
            .sessions
            .lock()
            .expect("poisoned")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut expired = Vec::new();
        let mut forget = Vec::new();
        for (id, h) in handles {
            let last = *h.last_active.lock().expect("poisoned");
            let quiet = now.saturating_duration_since(last);
            if h.log.is_closed() {
                if quiet >= idle * 2 {
                    forget.push(id);
                }
            } else if quiet >= idle {
                if let Ok(mut s) = h.session.lock() {
                    s.expire();
                }
                log::info!("session {id} expired");
                expired.push(id);
            }
        }
        let mut sessions = self.sessions.lock().expect("poisoned");
        for id in forget {
            sessions.remove(&id);
        }
        expired
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub last_seq: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ack {
    pub last_seq: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryBody {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionBody {
    pub prompt_id: u64,
    pub choice: Decision,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Polled {
    pub events: Vec<SessionEvent>,
    pub closed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapSummary {
    pub id: String,
    pub name: Option<String>,
    pub nodes: usize,
    pub edges: usize,
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    after: Option<u64>,
    wait_ms: Option<u64>,
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/v1/maps", get(list_maps))
        .route("/api/v1/maps/{id}", get(get_map))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/query", post(post_query))
        .route("/api/v1/sessions/{id}/decision", post(post_decision))
        .route("/api/v1/sessions/{id}/events", get(stream_events))
        .route("/api/v1/sessions/{id}/events/poll", get(poll_events))
        .with_state(state)
}

/// Serve until the listener fails, sweeping idle sessions in the background.
pub async fn serve(listener: tokio::net::TcpListener, state: Shared) -> std::io::Result<()> {
    let period = (state.config.idle_timeout / 4).clamp(Duration::from_millis(50), Duration::from_secs(30));
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let s = sweeper.clone();
            let _ = tokio::task::spawn_blocking(move || s.sweep(Instant::now())).await;
        }
    });
    axum::serve(listener, router(state)).await
}

fn bad_json(r: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "invalid_json", r.body_text())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn list_maps(State(app): State<Shared>) -> Json<Vec<MapSummary>> {
    Json(
        app.maps
            .iter()
            .map(|(id, e)| MapSummary {
                id: id.clone(),
                name: e.map.name.clone(),
                nodes: e.map.node_count(),
                edges: e.map.edge_count(),
            })
            .collect(),
    )
}

async fn get_map(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<MapDocument>, ApiError> {
    let entry = app.maps.get(&id).ok_or_else(|| ApiError::unknown_map(&id))?;
    Ok(Json(MapDocument::new(&id, &entry.map)))
}

async fn create_session(
    State(app): State<Shared>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(req) = body.map_err(bad_json)?;
    let created = blocking(move || {
        let id = app.create_session(req)?;
        let last_seq = app.session_log(&id)?.last_seq();
        Ok(Created { id, last_seq })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_session(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    blocking(move || app.with_session(&id, |s| Ok(s.view())))
        .await
        .map(Json)
}

async fn post_query(
    State(app): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<QueryBody>, JsonRejection>,
) -> Result<(StatusCode, Json<Ack>), ApiError> {
    let Json(q) = body.map_err(bad_json)?;
    let last_seq = blocking(move || app.with_session(&id, |s| s.query(&q.text))).await?;
    Ok((StatusCode::ACCEPTED, Json(Ack { last_seq })))
}

async fn post_decision(
    State(app): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> Result<(StatusCode, Json<Ack>), ApiError> {
    let Json(d) = body.map_err(bad_json)?;
    let last_seq = blocking(move || app.with_session(&id, |s| s.decide(d.prompt_id, d.choice))).await?;
    Ok((StatusCode::ACCEPTED, Json(Ack { last_seq })))
}

fn resume_point(q: &EventsQuery, headers: &HeaderMap) -> u64 {
    let last_event_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|s| s.trim().parse().ok());
    q.after.unwrap_or(0).max(last_event_id.unwrap_or(0))
}

async fn stream_events(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let log = app.session_log(&id)?;
    let after = resume_point(&q, &headers);
    let rx = log.subscribe();
    let stream = futures::stream::unfold(
        (log, rx, after, VecDeque::new()),
        |(log, mut rx, mut after, mut pending)| async move {
            loop {
                if let Some(ev) = pending.pop_front() {
                    let sse = to_sse(&ev);
                    return Some((Ok(sse), (log, rx, after, pending)));
                }
                let (batch, closed) = log.after(after);
                if let Some(last) = batch.last() {
                    after = last.seq;
                    pending.extend(batch);
                    continue;
                }
                if closed || rx.changed().await.is_err() {
                    return None;
                }
            }
        },
    );
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn to_sse(ev: &SessionEvent) -> Event {
    Event::default()
        .id(ev.seq.to_string())
        .event(ev.kind.name())
        .json_data(ev)
        .expect("events serialize")
}

async fn poll_events(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Json<Polled>, ApiError> {
    let log = app.session_log(&id)?;
    let after = resume_point(&q, &headers);
    let mut rx = log.subscribe();
    let deadline = tokio::time::Instant::now() + Duration::from_millis(q.wait_ms.unwrap_or(0).min(MAX_POLL_WAIT_MS));
    loop {
        let (events, closed) = log.after(after);
        if !events.is_empty() || closed {
            return Ok(Json(Polled { events, closed }));
        }
        match tokio::time::timeout_at(deadline, rx.changed()).await {
            Ok(Ok(())) => continue,
            _ => return Ok(Json(Polled { events, closed })),
        }
    }
}
