//! The /v1 HTTP surface over a shared [`Lab`].

use std::collections::{BTreeMap, VecDeque};
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use ara_core::inventory::{NodeFilter, NodeId, NodeRole, SiteId};
use ara_core::lab::{Lab, LabError, LaunchSpec, LeaseSpec};
use ara_core::lease::{LeaseId, LeaseState};
use ara_core::provisioner::SessionId;
use ara_core::ransim::export::to_json_lines;
use ara_core::ric::XAppConfig;
use ara_core::telemetry::{export_csv, parse_csv, Series, TelemetryKind, TelemetryQuery, TelemetryRecord};
use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::Router;
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::config::{Accounts, ServerConfig};
use crate::wire::{AdvanceRequest, ByodView, ClockReport, ClockView, ErrorEnvelope, IngestReport, LiveEvent};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    envelope: ErrorEnvelope,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            envelope: ErrorEnvelope { code: code.to_string(), message: message.into(), detail: serde_json::Value::Null },
        }
    }

    fn with_detail(mut self, detail: impl Serialize) -> Self {
        self.envelope.detail = serde_json::to_value(detail).unwrap_or_default();
        self
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl From<LabError> for ApiError {
    fn from(e: LabError) -> Self {
        let code = e.code();
        let status = match code {
            "lease_not_found" | "session_not_found" | "image_not_found" | "unknown_source" | "no_chart" => {
                StatusCode::NOT_FOUND
            }
            "forbidden" => StatusCode::FORBIDDEN,
            "lease_terminal" | "session_stopped" | "xapp_exists" | "lease_not_ready" => StatusCode::CONFLICT,
            "launch_failed" | "ran_error" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_path", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(self.envelope)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
struct Json<T>(T);

impl<T: Serialize> IntoResponse for Json<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
struct Query<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(ApiError))]
struct Path<T>(T);

struct Inner {
    lab: Lab,
    /// Highest event id already pushed to the live stream, per session.
    cursors: BTreeMap<SessionId, u64>,
}

pub struct AppState {
    inner: Mutex<Inner>,
    accounts: Accounts,
    live: broadcast::Sender<LiveEvent>,
    drops: AtomicU64,
    seed: u64,
    deployment: String,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(cfg: &ServerConfig) -> anyhow::Result<Shared> {
        let lab = Lab::new(cfg.lab_config()?)?;
        Ok(AppState::with_lab(lab, cfg))
    }

    pub fn with_lab(lab: Lab, cfg: &ServerConfig) -> Shared {
        let (live, _) = broadcast::channel(cfg.stream_buffer.max(1));
        Arc::new(AppState {
            inner: Mutex::new(Inner { lab, cursors: BTreeMap::new() }),
            accounts: cfg.accounts.clone(),
            live,
            drops: AtomicU64::new(0),
            seed: cfg.seed,
            deployment: cfg.deployment.to_string(),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Push indications routed since the last call onto the live stream,
    /// per session in routing order.
    fn publish(&self, inner: &mut Inner) {
        for sid in inner.lab.session_ids() {
            let after = inner.cursors.get(&sid).copied().unwrap_or(0);
            let Ok(new) = inner.lab.metrics(sid, after) else { continue };
            if let Some(last) = new.last() {
                inner.cursors.insert(sid, last.event_id);
            }
            for indication in new {
                // no subscribers is fine
                let _ = self.live.send(LiveEvent { session: sid, indication });
            }
        }
    }

    /// Run `f` against the lab off the async workers, then publish.
    pub async fn with_lab_mut<T, F>(self: &Arc<Self>, f: F) -> Result<T, LabError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Lab) -> Result<T, LabError> + Send + 'static,
    {
        let st = self.clone();
        tokio::task::spawn_blocking(move || {
            let mut inner = st.lock();
            let out = f(&mut inner.lab);
            st.publish(&mut inner);
            out
        })
        .await
        .expect("lab task panicked")
    }

    pub fn read<T>(&self, f: impl FnOnce(&Lab) -> T) -> T {
        f(&self.lock().lab)
    }

    pub fn stream_drops(&self) -> u64 {
        self.drops.load(Ordering::Relaxed)
    }

    /// Advance the lab clock by `dt` on a wall-clock schedule.
    pub async fn tick(self: &Arc<Self>, dt: u64) -> Result<(), LabError> {
        self.with_lab_mut(move |lab| lab.advance(dt).map(|_| ())).await
    }
}

/// The authenticated account behind a request.
pub struct Caller(pub String);

impl FromRequestParts<Shared> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Shared) -> Result<Self, Self::Rejection> {
        let unauthorized = || ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token");
        let value = parts.headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).ok_or_else(unauthorized)?;
        let token = value.strip_prefix("Bearer ").ok_or_else(unauthorized)?;
        state.accounts.lookup(token.trim()).map(|n| Caller(n.to_string())).ok_or_else(unauthorized)
    }
}

pub fn router(state: Shared) -> Router {
    let v1 = Router::new()
        .route("/nodes", get(list_nodes))
        .route("/coverage", get(coverage))
        .route("/images", get(list_images))
        .route("/leases", post(request_lease).get(list_leases))
        .route("/leases/{id}", delete(terminate_lease).get(get_lease))
        .route("/sessions", post(launch_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(stop_session))
        .route("/ric/xapps", get(list_xapps).post(register_xapp))
        .route("/ric/byod", get(byod))
        .route("/metrics", get(metrics))
        .route("/metrics/live", get(metrics_live))
        .route("/telemetry", post(ingest_telemetry).get(query_telemetry))
        .route("/telemetry/watermarks", get(watermarks))
        .route("/export/chart", get(chart))
        .route("/clock", get(clock))
        .route("/clock/advance", post(advance_clock));
    Router::new()
        .nest("/v1", v1)
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

#[derive(Debug, Default, Deserialize)]
struct NodesParams {
    role: Option<NodeRole>,
    site: Option<String>,
}

async fn list_nodes(_: Caller, State(st): State<Shared>, Query(q): Query<NodesParams>) -> impl IntoResponse {
    let filter = NodeFilter { role: q.role, site: q.site.map(SiteId) };
    Json(st.read(|lab| lab.nodes(&filter)))
}

async fn coverage(_: Caller, State(st): State<Shared>) -> impl IntoResponse {
    Json(st.read(Lab::coverage))
}

async fn list_images(_: Caller, State(st): State<Shared>) -> impl IntoResponse {
    Json(st.read(Lab::images))
}

async fn request_lease(Caller(who): Caller, State(st): State<Shared>, Json(spec): Json<LeaseSpec>) -> ApiResult<Response> {
    let lease = st.with_lab_mut(move |lab| lab.request_lease(&who, spec)).await?;
    if lease.state == LeaseState::Rejected {
        let msg = format!("lease {} conflicts with {} admitted lease(s)", lease.lease_id, lease.conflicts.len());
        return Err(ApiError::new(StatusCode::CONFLICT, "lease_conflict", msg).with_detail(&lease));
    }
    Ok((StatusCode::CREATED, Json(lease)).into_response())
}

async fn list_leases(_: Caller, State(st): State<Shared>) -> impl IntoResponse {
    Json(st.read(Lab::leases))
}

async fn get_lease(_: Caller, State(st): State<Shared>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    Ok(Json(st.read(|lab| lab.lease(LeaseId(id)))?))
}

async fn terminate_lease(Caller(who): Caller, State(st): State<Shared>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    Ok(Json(st.with_lab_mut(move |lab| lab.terminate_lease(&who, LeaseId(id))).await?))
}

async fn launch_session(Caller(who): Caller, State(st): State<Shared>, Json(spec): Json<LaunchSpec>) -> ApiResult<Response> {
    let view = st.with_lab_mut(move |lab| lab.launch_session(&who, spec)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn list_sessions(_: Caller, State(st): State<Shared>) -> ApiResult<impl IntoResponse> {
    let views = st.read(|lab| lab.session_ids().into_iter().map(|sid| lab.session_view(sid)).collect::<Result<Vec<_>, _>>())?;
    Ok(Json(views))
}

async fn get_session(_: Caller, State(st): State<Shared>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    Ok(Json(st.read(|lab| lab.session_view(SessionId(id)))?))
}

async fn stop_session(Caller(who): Caller, State(st): State<Shared>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    Ok(Json(st.with_lab_mut(move |lab| lab.stop_session(&who, SessionId(id))).await?))
}

async fn list_xapps(_: Caller, State(st): State<Shared>) -> impl IntoResponse {
    Json(st.read(Lab::xapps))
}

async fn register_xapp(_: Caller, State(st): State<Shared>, Json(cfg): Json<XAppConfig>) -> ApiResult<Response> {
    let cfg = st.with_lab_mut(move |lab| lab.register_xapp(cfg)).await?;
    Ok((StatusCode::CREATED, Json(cfg)).into_response())
}

async fn byod(_: Caller, State(st): State<Shared>) -> impl IntoResponse {
    Json(st.read(|lab| {
        let ric = lab.byod_ric();
        ByodView {
            ric_id: ric.ric_id().to_string(),
            agents: ric.agents(),
            counters: ric.counters(),
            control_actions: ric.actions().to_vec(),
        }
    }))
}

#[derive(Debug, Deserialize)]
struct MetricsParams {
    session: u64,
    #[serde(default)]
    after: u64,
    /// `json` (default) or `lines` for one sample per line.
    format: Option<String>,
}

async fn metrics(_: Caller, State(st): State<Shared>, Query(q): Query<MetricsParams>) -> ApiResult<Response> {
    let routed = st.read(|lab| lab.metrics(SessionId(q.session), q.after))?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(routed).into_response()),
        Some("lines") => {
            let samples: Vec<_> = routed.into_iter().flat_map(|r| r.samples).collect();
            Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], to_json_lines(&samples)).into_response())
        }
        Some(other) => Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    }
}

#[derive(Debug, Deserialize)]
struct LiveParams {
    session: u64,
    after: Option<u64>,
}

struct LiveCursor {
    session: SessionId,
    backlog: VecDeque<LiveEvent>,
    rx: broadcast::Receiver<LiveEvent>,
    last: u64,
    state: Shared,
}

fn to_event(ev: &LiveEvent) -> Event {
    Event::default()
        .event("indication")
        .id(ev.indication.event_id.to_string())
        .json_data(ev)
        .expect("live event serializes")
}

/// Backlog first, then live events; a subscriber that falls more than the
/// buffer behind loses the oldest events and the loss is counted.
fn live_events(cursor: LiveCursor) -> impl Stream<Item = LiveEvent> {
    futures::stream::unfold(cursor, |mut c| async move {
        loop {
            let ev = match c.backlog.pop_front() {
                Some(ev) => ev,
                None => match c.rx.recv().await {
                    Ok(ev) => ev,
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        c.state.drops.fetch_add(n, Ordering::Relaxed);
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => return None,
                },
            };
            // replayed backlog and live events can overlap; skip repeats
            if ev.session != c.session || ev.indication.event_id <= c.last {
                continue;
            }
            c.last = ev.indication.event_id;
            return Some((ev, c));
        }
    })
}

/// Server-sent events, one per routed indication. Reconnecting clients
/// pass `after` (or Last-Event-ID) to resume without gaps or repeats.
async fn metrics_live(
    _: Caller,
    State(st): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<LiveParams>,
) -> ApiResult<impl IntoResponse> {
    let session = SessionId(q.session);
    let last_id = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.parse().ok());
    let after = q.after.or(last_id).unwrap_or(0);
    let (rx, backlog) = {
        let inner = st.lock();
        // subscribe before reading the backlog so nothing falls in between
        let rx = st.live.subscribe();
        let backlog = inner.lab.metrics(session, after)?;
        let published = inner.cursors.get(&session).copied().unwrap_or(0);
        let backlog: VecDeque<LiveEvent> = backlog
            .into_iter()
            .filter(|r| r.event_id <= published)
            .map(|indication| LiveEvent { session, indication })
            .collect();
        (rx, backlog)
    };
    let cursor = LiveCursor { session, backlog, rx, last: after, state: st.clone() };
    let events = live_events(cursor).map(|ev| Ok::<_, Infallible>(to_event(&ev)));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<TelemetryRecord>),
    One(TelemetryRecord),
}

#[derive(Debug, Deserialize)]
struct IngestParams {
    kind: Option<TelemetryKind>,
}

fn series_records(s: Series) -> Vec<TelemetryRecord> {
    match s {
        Series::Weather(v) => v.into_iter().map(TelemetryRecord::Weather).collect(),
        Series::Spectrum(v) => v.into_iter().map(TelemetryRecord::Spectrum).collect(),
    }
}

/// JSON record(s), or CSV with `?kind=` when the body is text/csv.
/// Records are appended in order; on the first invalid one the earlier
/// ones stay and the error detail says how many were accepted.
async fn ingest_telemetry(
    _: Caller,
    State(st): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<IngestParams>,
    body: Bytes,
) -> ApiResult<Response> {
    let is_csv = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|ct| ct.starts_with("text/csv"));
    let records = if is_csv {
        let kind = q.kind.ok_or_else(|| ApiError::bad_request("CSV ingest needs ?kind=weather|spectrum"))?;
        series_records(parse_csv(kind, &body).map_err(LabError::from)?)
    } else {
        match serde_json::from_slice::<OneOrMany>(&body) {
            Ok(OneOrMany::Many(v)) => v,
            Ok(OneOrMany::One(r)) => vec![r],
            Err(e) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string())),
        }
    };
    let (ids, err) = st
        .with_lab_mut(move |lab| {
            let mut ids = Vec::new();
            for r in records {
                match lab.ingest(r) {
                    Ok(id) => ids.push(id),
                    Err(e) => return Ok((ids, Some(e))),
                }
            }
            Ok((ids, None))
        })
        .await?;
    if let Some(e) = err {
        return Err(ApiError::from(e).with_detail(serde_json::json!({ "accepted": ids.len() })));
    }
    Ok((StatusCode::CREATED, Json(IngestReport { ids })).into_response())
}

#[derive(Debug, Deserialize)]
struct TelemetryParams {
    kind: TelemetryKind,
    source: Option<String>,
    #[serde(default)]
    start: u64,
    end: Option<u64>,
    format: Option<String>,
}

async fn query_telemetry(_: Caller, State(st): State<Shared>, Query(p): Query<TelemetryParams>) -> ApiResult<Response> {
    let q = TelemetryQuery { kind: p.kind, source: p.source, start: p.start, end: p.end.unwrap_or(u64::MAX) };
    let series = st.read(|lab| lab.query_telemetry(&q))?;
    match p.format.as_deref() {
        None | Some("json") => Ok(Json(series_records(series)).into_response()),
        Some("csv") => Ok(([(header::CONTENT_TYPE, "text/csv")], export_csv(&series)).into_response()),
        Some(other) => Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    }
}

async fn watermarks(_: Caller, State(st): State<Shared>) -> impl IntoResponse {
    Json(st.read(Lab::telemetry_watermarks))
}

#[derive(Debug, Deserialize)]
struct ChartParams {
    session: u64,
}

async fn chart(_: Caller, State(st): State<Shared>, Query(q): Query<ChartParams>) -> ApiResult<Response> {
    let csv = st.read(|lab| lab.chart(SessionId(q.session)))?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

async fn clock(_: Caller, State(st): State<Shared>) -> impl IntoResponse {
    Json(ClockView {
        now: st.read(Lab::now),
        seed: st.seed,
        deployment: st.deployment.clone(),
        stream_drops: st.stream_drops(),
        stream_subscribers: st.live.receiver_count(),
    })
}

async fn advance_clock(_: Caller, State(st): State<Shared>, Json(req): Json<AdvanceRequest>) -> ApiResult<impl IntoResponse> {
    let report = match (req.dt_ms, req.to_ms) {
        (Some(dt), None) => st.with_lab_mut(move |lab| lab.advance(dt)).await?,
        (None, Some(t)) => st.with_lab_mut(move |lab| lab.advance_to(t)).await?,
        _ => return Err(ApiError::bad_request("give exactly one of dt_ms or to_ms")),
    };
    Ok(Json(ClockReport {
        now: report.now,
        lease_transitions: report.lease_transitions,
        stopped_sessions: report.stopped_sessions,
        routed: report.routed.len(),
    }))
}

/// Parse `node=image` pairs into a launch image map.
pub fn parse_image_map<'a>(pairs: impl IntoIterator<Item = &'a str>) -> Result<BTreeMap<NodeId, String>, String> {
    let mut out = BTreeMap::new();
    for p in pairs {
        let (node, image) = p.split_once('=').ok_or_else(|| format!("expected node=image, got {p:?}"))?;
        out.insert(NodeId(node.trim().to_string()), image.trim().to_string());
    }
    Ok(out)
}
