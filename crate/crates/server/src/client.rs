//! Typed client for the /v1 API.

use std::fmt;

use ara_core::inventory::{CoverageReport, NodeRecord};
use ara_core::lab::{LaunchSpec, LeaseSpec, SessionView};
use ara_core::lease::Lease;
use ara_core::provisioner::ImageDescriptor;
use ara_core::ric::{RoutedIndication, XAppConfig};
use ara_core::telemetry::{TelemetryRecord, Watermark};
use futures::{Stream, StreamExt};
use reqwest::{Method, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::wire::{AdvanceRequest, ByodView, ClockReport, ClockView, ErrorEnvelope, IngestReport, LiveEvent};

#[derive(Debug)]
pub enum ClientError {
    /// The service answered with an error envelope.
    Api { status: u16, envelope: ErrorEnvelope },
    Transport(reqwest::Error),
    Decode(String),
}

impl fmt::Display for ClientError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientError::Api { status, envelope } => {
                write!(f, "{status} {}: {}", envelope.code, envelope.message)?;
                if !envelope.detail.is_null() {
                    write!(f, "\ndetail: {}", serde_json::to_string_pretty(&envelope.detail).unwrap_or_default())?;
                }
                Ok(())
            }
            ClientError::Transport(e) => write!(f, "request failed: {e}"),
            ClientError::Decode(e) => write!(f, "unexpected response: {e}"),
        }
    }
}

impl std::error::Error for ClientError {}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        ClientError::Transport(e)
    }
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { envelope, .. } => Some(&envelope.code),
            _ => None,
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct ApiClient {
    base: String,
    token: String,
    http: reqwest::Client,
}

impl ApiClient {
    pub fn new(base: impl Into<String>, token: impl Into<String>) -> Self {
        ApiClient { base: base.into().trim_end_matches('/').to_string(), token: token.into(), http: reqwest::Client::new() }
    }

    fn req(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}/v1{path}", self.base)).bearer_auth(&self.token)
    }

    async fn check(resp: Response) -> ClientResult<Response> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let bytes = resp.bytes().await?;
        let envelope = serde_json::from_slice(&bytes).unwrap_or_else(|_| ErrorEnvelope {
            code: "http_error".into(),
            message: String::from_utf8_lossy(&bytes).into_owned(),
            detail: serde_json::Value::Null,
        });
        Err(ClientError::Api { status: status.as_u16(), envelope })
    }

    async fn json<T: DeserializeOwned>(rb: RequestBuilder) -> ClientResult<T> {
        let resp = Self::check(rb.send().await?).await?;
        let bytes = resp.bytes().await?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> ClientResult<T> {
        Self::json(self.req(Method::GET, path)).await
    }

    async fn send<B: Serialize, T: DeserializeOwned>(&self, method: Method, path: &str, body: &B) -> ClientResult<T> {
        Self::json(self.req(method, path).json(body)).await
    }

    async fn raw(&self, path: &str) -> ClientResult<Vec<u8>> {
        let resp = Self::check(self.req(Method::GET, path).send().await?).await?;
        Ok(resp.bytes().await?.to_vec())
    }

    pub async fn nodes(&self, role: Option<&str>, site: Option<&str>) -> ClientResult<Vec<NodeRecord>> {
        let mut rb = self.req(Method::GET, "/nodes");
        if let Some(r) = role {
            rb = rb.query(&[("role", r)]);
        }
        if let Some(s) = site {
            rb = rb.query(&[("site", s)]);
        }
        Self::json(rb).await
    }

    pub async fn coverage(&self) -> ClientResult<CoverageReport> {
        self.get("/coverage").await
    }

    pub async fn images(&self) -> ClientResult<Vec<ImageDescriptor>> {
        self.get("/images").await
    }

    pub async fn request_lease(&self, spec: &LeaseSpec) -> ClientResult<Lease> {
        self.send(Method::POST, "/leases", spec).await
    }

    pub async fn leases(&self) -> ClientResult<Vec<Lease>> {
        self.get("/leases").await
    }

    pub async fn lease(&self, id: u64) -> ClientResult<Lease> {
        self.get(&format!("/leases/{id}")).await
    }

    pub async fn terminate_lease(&self, id: u64) -> ClientResult<Lease> {
        Self::json(self.req(Method::DELETE, &format!("/leases/{id}"))).await
    }

    pub async fn launch(&self, spec: &LaunchSpec) -> ClientResult<SessionView> {
        self.send(Method::POST, "/sessions", spec).await
    }

    pub async fn sessions(&self) -> ClientResult<Vec<SessionView>> {
        self.get("/sessions").await
    }

    pub async fn session(&self, id: u64) -> ClientResult<SessionView> {
        self.get(&format!("/sessions/{id}")).await
    }

    pub async fn stop_session(&self, id: u64) -> ClientResult<SessionView> {
        Self::json(self.req(Method::DELETE, &format!("/sessions/{id}"))).await
    }

    pub async fn xapps(&self) -> ClientResult<Vec<XAppConfig>> {
        self.get("/ric/xapps").await
    }

    pub async fn register_xapp(&self, cfg: &XAppConfig) -> ClientResult<XAppConfig> {
        self.send(Method::POST, "/ric/xapps", cfg).await
    }

    pub async fn byod(&self) -> ClientResult<ByodView> {
        self.get("/ric/byod").await
    }

    pub async fn metrics(&self, session: u64, after: u64) -> ClientResult<Vec<RoutedIndication>> {
        self.get(&format!("/metrics?session={session}&after={after}")).await
    }

    /// One JSON sample per line.
    pub async fn metric_lines(&self, session: u64) -> ClientResult<String> {
        let bytes = self.raw(&format!("/metrics?session={session}&format=lines")).await?;
        String::from_utf8(bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// Server-sent live indications after event id `after`.
    pub async fn live(&self, session: u64, after: u64) -> ClientResult<impl Stream<Item = ClientResult<LiveEvent>>> {
        let resp = Self::check(self.req(Method::GET, &format!("/metrics/live?session={session}&after={after}")).send().await?).await?;
        let bytes = resp.bytes_stream();
        let state = (bytes, Vec::<u8>::new());
        Ok(futures::stream::unfold(state, |(mut bytes, mut buf)| async move {
            loop {
                if let Some(end) = find_event_end(&buf) {
                    let block: Vec<u8> = buf.drain(..end).collect();
                    match parse_event(&block) {
                        Some(Ok(ev)) => return Some((Ok(ev), (bytes, buf))),
                        Some(Err(e)) => return Some((Err(e), (bytes, buf))),
                        None => continue,
                    }
                }
                match bytes.next().await {
                    Some(Ok(chunk)) => buf.extend_from_slice(&chunk),
                    Some(Err(e)) => return Some((Err(ClientError::Transport(e)), (bytes, buf))),
                    None => return None,
                }
            }
        }))
    }

    pub async fn ingest(&self, records: &[TelemetryRecord]) -> ClientResult<IngestReport> {
        self.send(Method::POST, "/telemetry", &records).await
    }

    pub async fn ingest_csv(&self, kind: &str, csv: Vec<u8>) -> ClientResult<IngestReport> {
        let rb = self.req(Method::POST, "/telemetry").query(&[("kind", kind)]).header("content-type", "text/csv").body(csv);
        Self::json(rb).await
    }

    pub async fn telemetry(&self, kind: &str, source: Option<&str>, start: u64, end: Option<u64>) -> ClientResult<Vec<TelemetryRecord>> {
        Self::json(self.telemetry_query(kind, source, start, end, "json")).await
    }

    pub async fn telemetry_csv(&self, kind: &str, source: Option<&str>, start: u64, end: Option<u64>) -> ClientResult<Vec<u8>> {
        let resp = Self::check(self.telemetry_query(kind, source, start, end, "csv").send().await?).await?;
        Ok(resp.bytes().await?.to_vec())
    }

    fn telemetry_query(&self, kind: &str, source: Option<&str>, start: u64, end: Option<u64>, format: &str) -> RequestBuilder {
        let mut rb = self.req(Method::GET, "/telemetry").query(&[("kind", kind), ("format", format)]).query(&[("start", start)]);
        if let Some(s) = source {
            rb = rb.query(&[("source", s)]);
        }
        if let Some(e) = end {
            rb = rb.query(&[("end", e)]);
        }
        rb
    }

    pub async fn watermarks(&self) -> ClientResult<Vec<Watermark>> {
        self.get("/telemetry/watermarks").await
    }

    pub async fn chart(&self, session: u64) -> ClientResult<Vec<u8>> {
        self.raw(&format!("/export/chart?session={session}")).await
    }

    pub async fn clock(&self) -> ClientResult<ClockView> {
        self.get("/clock").await
    }

    pub async fn advance(&self, dt_ms: u64) -> ClientResult<ClockReport> {
        self.send(Method::POST, "/clock/advance", &AdvanceRequest { dt_ms: Some(dt_ms), to_ms: None }).await
    }

    pub async fn advance_to(&self, t: u64) -> ClientResult<ClockReport> {
        self.send(Method::POST, "/clock/advance", &AdvanceRequest { dt_ms: None, to_ms: Some(t) }).await
    }
}

fn find_event_end(buf: &[u8]) -> Option<usize> {
    buf.windows(2).position(|w| w == b"\n\n").map(|i| i + 2)
}

/// `None` for blocks without data (keep-alive comments).
fn parse_event(block: &[u8]) -> Option<ClientResult<LiveEvent>> {
    let text = String::from_utf8_lossy(block);
    let data: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix("data:")).map(|d| d.strip_prefix(' ').unwrap_or(d)).collect();
    if data.is_empty() {
        return None;
    }
    Some(serde_json::from_str(&data.join("\n")).map_err(|e| ClientError::Decode(e.to_string())))
}
