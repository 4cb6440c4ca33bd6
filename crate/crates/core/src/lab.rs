//! The living lab as one object: inventory, lease calendar, provisioning,
//! a simulated RAN per running session, the xApp registry and telemetry,
//! all on one virtual clock.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::e2::{disconnect, E2Message, Effect};
use crate::inventory::{CoverageReport, Inventory, NodeFilter, NodeId, NodeRecord};
use crate::lease::{Interval, Lease, LeaseEngine, LeaseError, LeaseId, LeaseRequest, LeaseState, LeaseTransition, SpectrumBlock};
use crate::metrics::Layer;
use crate::provisioner::{
    ExecRecord, Executor, ExperimentSession, ImageCatalog, ImageDescriptor, ProcessRole, ProvisionError, Provisioner,
    SessionId, SessionState, SessionStatus, SimExecutor,
};
use crate::ransim::{link_distance, AttachOutcome, LinkModel, RanError};
use crate::ric::{ConnId, ControlAction, LatencyMonitor, RegistryFile, Ric, RicError, RoutedIndication, XAppConfig, XAppInfo};
use crate::runtime::{LinkStatus, RanRuntime, RuntimeConfig, RuntimeError};
use crate::telemetry::{Series, TelemetryError, TelemetryQuery, TelemetryRecord, TelemetryStore, Watermark};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error(transparent)]
    Lease(#[from] LeaseError),
    #[error(transparent)]
    Provision(#[from] ProvisionError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Ric(#[from] RicError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("lease {0} not found")]
    UnknownLease(LeaseId),
    #[error("session {0} not found")]
    UnknownSession(SessionId),
    #[error("{who} does not own lease {lease}")]
    Forbidden { who: String, lease: LeaseId },
    #[error("session {0} has no latency-monitor xApp")]
    NoChart(SessionId),
    #[error("clock regression: now {now}, requested {requested}")]
    ClockRegression { now: u64, requested: u64 },
}

impl LabError {
    /// Stable machine-readable code for error envelopes.
    pub fn code(&self) -> &'static str {
        match self {
            LabError::Lease(LeaseError::UnknownLease(_)) | LabError::UnknownLease(_) => "lease_not_found",
            LabError::Lease(LeaseError::AlreadyTerminal(..)) => "lease_terminal",
            LabError::Lease(LeaseError::ClockRegression { .. }) | LabError::ClockRegression { .. } => "clock_regression",
            LabError::Lease(_) => "invalid_lease_request",
            LabError::Provision(ProvisionError::UnknownSession(_)) | LabError::UnknownSession(_) => "session_not_found",
            LabError::Provision(ProvisionError::AlreadyStopped(_)) => "session_stopped",
            LabError::Provision(ProvisionError::LaunchFailed { .. }) => "launch_failed",
            LabError::Provision(ProvisionError::UnknownImage(_)) => "image_not_found",
            LabError::Provision(ProvisionError::LeaseNotActive(..) | ProvisionError::SessionExists(..)) => "lease_not_ready",
            LabError::Provision(_) => "invalid_session_request",
            LabError::Runtime(_) => "ran_error",
            LabError::Ric(RicError::DuplicateXApp(_)) => "xapp_exists",
            LabError::Ric(_) => "invalid_xapp",
            LabError::Telemetry(TelemetryError::UnknownSite(_) | TelemetryError::UnknownNode(_)) => "unknown_source",
            LabError::Telemetry(_) => "invalid_telemetry",
            LabError::Forbidden { .. } => "forbidden",
            LabError::NoChart(_) => "no_chart",
        }
    }
}

/// Body of a lease request; the requester comes from the caller's identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaseSpec {
    pub node_ids: Vec<NodeId>,
    pub spectrum: SpectrumBlock,
    pub interval: Interval,
    #[serde(default)]
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LaunchSpec {
    pub lease_id: LeaseId,
    /// Image name per leased node.
    pub images: BTreeMap<NodeId, String>,
    /// Run base stations as separate CU and DU E2 entities.
    #[serde(default)]
    pub split: bool,
    /// Per-layer median latency overrides in ms.
    #[serde(default)]
    pub layer_medians: BTreeMap<Layer, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub ue: NodeId,
    pub agent_id: Option<String>,
    pub distance_m: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub status: SessionStatus,
    pub ric_id: Option<String>,
    pub agents: Vec<LinkStatus>,
    pub attachments: Vec<Attachment>,
    pub xapps: Vec<XAppInfo>,
    pub indications_routed: u64,
    pub control_actions: Vec<ControlAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvanceReport {
    pub now: u64,
    pub lease_transitions: Vec<LeaseTransition>,
    pub stopped_sessions: Vec<SessionId>,
    pub routed: Vec<(SessionId, RoutedIndication)>,
}

struct SessionRun {
    runtime: RanRuntime,
    attachments: Vec<Attachment>,
    metrics: Vec<RoutedIndication>,
    live: bool,
}

#[derive(Debug, Clone)]
pub struct LabConfig {
    pub seed: u64,
    pub inventory: Inventory,
    pub catalog: ImageCatalog,
    pub registry: RegistryFile,
    pub runtime: RuntimeConfig,
}

impl LabConfig {
    pub fn new(inventory: Inventory, seed: u64) -> Self {
        LabConfig {
            seed,
            inventory,
            catalog: ImageCatalog::builtin(),
            registry: RegistryFile::builtin(),
            runtime: RuntimeConfig::seeded(seed),
        }
    }

    pub fn phase1(seed: u64) -> Self {
        LabConfig::new(Inventory::phase1(), seed)
    }
}

pub struct Lab {
    seed: u64,
    now: u64,
    inventory: Arc<Inventory>,
    catalog: ImageCatalog,
    leases: LeaseEngine,
    provisioner: Provisioner,
    registry: Vec<XAppConfig>,
    runtime_cfg: RuntimeConfig,
    runs: BTreeMap<SessionId, SessionRun>,
    telemetry: TelemetryStore,
    byod: Ric,
}

impl std::fmt::Debug for Lab {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lab").field("now", &self.now).field("sessions", &self.runs.len()).finish()
    }
}

fn build_ric(id: &str, registry: &[XAppConfig]) -> Result<Ric, LabError> {
    let mut ric = Ric::new(id);
    for x in registry {
        ric.register_xapp(x.build()?)?;
    }
    Ok(ric)
}

impl Lab {
    pub fn new(cfg: LabConfig) -> Result<Lab, LabError> {
        let exec = SimExecutor::new(crate::ransim::derive_seed(cfg.seed, "executor"));
        Lab::with_executor(cfg, Box::new(exec))
    }

    pub fn with_executor(cfg: LabConfig, executor: Box<dyn Executor>) -> Result<Lab, LabError> {
        let inventory = Arc::new(cfg.inventory);
        let registry = cfg.registry.xapps;
        let byod = build_ric("byod-ric", &registry)?;
        Ok(Lab {
            seed: cfg.seed,
            now: 0,
            leases: LeaseEngine::new(inventory.clone()),
            telemetry: TelemetryStore::new(inventory.clone()),
            inventory,
            catalog: cfg.catalog,
            provisioner: Provisioner::new(executor),
            registry,
            runtime_cfg: RuntimeConfig { seed: cfg.seed, ..cfg.runtime },
            runs: BTreeMap::new(),
            byod,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn inventory(&self) -> &Inventory {
        &self.inventory
    }

    pub fn link_model(&self) -> &LinkModel {
        &self.runtime_cfg.link
    }

    pub fn nodes(&self, filter: &NodeFilter) -> Vec<NodeRecord> {
        self.inventory.list_nodes(filter).into_iter().cloned().collect()
    }

    pub fn coverage(&self) -> CoverageReport {
        self.inventory.validate_coverage(&self.runtime_cfg.link)
    }

    pub fn images(&self) -> Vec<ImageDescriptor> {
        self.catalog.list()
    }

    pub fn leases(&self) -> Vec<Lease> {
        self.leases.leases().cloned().collect()
    }

    pub fn lease(&self, id: LeaseId) -> Result<Lease, LabError> {
        self.leases.get(id).cloned().ok_or(LabError::UnknownLease(id))
    }

    pub fn lease_log(&self) -> String {
        self.leases.log_text()
    }

    pub fn executor_log(&self) -> &[ExecRecord] {
        self.provisioner.executor_log()
    }

    /// Admit or reject a lease. Conflicts come back as a Rejected lease
    /// carrying its reasons.
    pub fn request_lease(&mut self, requester: &str, spec: LeaseSpec) -> Result<Lease, LabError> {
        let req = LeaseRequest {
            requester: requester.to_string(),
            node_ids: spec.node_ids.into_iter().collect(),
            spectrum: spec.spectrum,
            interval: spec.interval,
            images: spec.images,
        };
        Ok(self.leases.request_lease(req, &self.catalog, self.now)?)
    }

    fn owned_lease(&self, who: &str, id: LeaseId) -> Result<&Lease, LabError> {
        let lease = self.leases.get(id).ok_or(LabError::UnknownLease(id))?;
        if lease.request.requester != who {
            return Err(LabError::Forbidden { who: who.to_string(), lease: id });
        }
        Ok(lease)
    }

    pub fn terminate_lease(&mut self, who: &str, id: LeaseId) -> Result<Lease, LabError> {
        self.owned_lease(who, id)?;
        let lease = self.leases.terminate_lease(id, self.now)?;
        if let Some(sid) = self.provisioner.live_session_for(id) {
            self.stop_run(sid, "lease terminated", disconnect::LEASE_EXPIRED)?;
        }
        Ok(lease)
    }

    /// Provision containers for an Active lease and bring up its RAN.
    pub fn launch_session(&mut self, who: &str, spec: LaunchSpec) -> Result<SessionView, LabError> {
        let lease = self.owned_lease(who, spec.lease_id)?.clone();
        let session = self.provisioner.launch_session(&lease, &spec.images, &self.inventory, &self.catalog, self.now)?;
        let ready_at = session.cursor();
        self.advance_to(ready_at)?;
        let sid = session.session_id;
        let runtime = self.build_runtime(&session, &spec)?;
        self.runs.insert(sid, runtime);
        if self.leases.get(lease.lease_id).map(|l| l.state) != Some(LeaseState::Active) {
            self.stop_run(sid, "lease ended during launch", disconnect::LEASE_EXPIRED)?;
        }
        self.session_view(sid)
    }

    fn build_runtime(&self, session: &ExperimentSession, spec: &LaunchSpec) -> Result<SessionRun, LabError> {
        let ric_id = format!("ric-s{}", session.session_id);
        let ric = build_ric(&ric_id, &self.registry)?;
        let mut cfg = self.runtime_cfg.clone();
        cfg.seed = crate::ransim::derive_seed(self.seed, &format!("session-{}", session.session_id));
        let mut runtime = RanRuntime::new(ric, cfg, self.now);
        let has = |c: &crate::provisioner::ContainerInstance, r: ProcessRole| c.processes.iter().any(|p| p.role == r);
        let mut agents: Vec<(String, NodeRecord)> = Vec::new();
        for c in session.containers.iter().filter(|c| has(c, ProcessRole::Gnb)) {
            let bs = self.inventory.node(&c.node_id).expect("leased node exists").clone();
            let id = format!("{}-gnb", bs.node_id);
            let mut agent = runtime.make_agent(&id, &bs, spec.split)?;
            for (layer, median) in &spec.layer_medians {
                agent.set_layer_median(*layer, *median);
            }
            runtime.add_agent(agent)?;
            agents.push((id, bs));
        }
        let mut attachments = Vec::new();
        for c in session.containers.iter().filter(|c| has(c, ProcessRole::NrUe)) {
            let ue = self.inventory.node(&c.node_id).expect("leased node exists");
            let nearest = agents
                .iter()
                .filter_map(|(id, bs)| link_distance(bs, ue).ok().map(|d| (d, id)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let att = match nearest {
                None => Attachment { ue: ue.node_id.clone(), agent_id: None, distance_m: None, error: Some("no gNB in this session".into()) },
                Some((d, id)) => match runtime.attach_ue(id, ue) {
                    Ok(AttachOutcome::Attached { .. } | AttachOutcome::AlreadyAttached) => {
                        Attachment { ue: ue.node_id.clone(), agent_id: Some(id.clone()), distance_m: Some(d), error: None }
                    }
                    Err(RuntimeError::Ran(e @ RanError::OutOfRange { .. })) => {
                        Attachment { ue: ue.node_id.clone(), agent_id: None, distance_m: Some(d), error: Some(e.to_string()) }
                    }
                    Err(e) => return Err(e.into()),
                },
            };
            attachments.push(att);
        }
        Ok(SessionRun { runtime, attachments, metrics: Vec::new(), live: true })
    }

    fn stop_run(&mut self, sid: SessionId, cause: &str, code: u8) -> Result<(), LabError> {
        self.provisioner.stop_session(sid, &self.inventory, self.now, cause)?;
        if let Some(run) = self.runs.get_mut(&sid) {
            if run.live {
                run.runtime.shutdown(code)?;
                run.metrics.extend(run.runtime.take_routed());
                run.live = false;
            }
        }
        Ok(())
    }

    pub fn stop_session(&mut self, who: &str, sid: SessionId) -> Result<SessionView, LabError> {
        let lease_id = self.provisioner.session(sid).ok_or(LabError::UnknownSession(sid))?.lease_id;
        self.owned_lease(who, lease_id)?;
        self.stop_run(sid, "stopped by user", disconnect::SESSION_STOPPED)?;
        self.session_view(sid)
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        self.provisioner.sessions().map(|s| s.session_id).collect()
    }

    pub fn session_view(&self, sid: SessionId) -> Result<SessionView, LabError> {
        let status = self.provisioner.session_status(sid, self.now)?;
        let run = self.runs.get(&sid);
        Ok(SessionView {
            status,
            ric_id: run.map(|r| r.runtime.ric().ric_id().to_string()),
            agents: run.map(|r| r.runtime.links()).unwrap_or_default(),
            attachments: run.map(|r| r.attachments.clone()).unwrap_or_default(),
            xapps: run.map(|r| r.runtime.ric().xapp_infos()).unwrap_or_default(),
            indications_routed: run.map(|r| r.runtime.ric().counters().indications_routed).unwrap_or(0),
            control_actions: run.map(|r| r.runtime.ric().actions().to_vec()).unwrap_or_default(),
        })
    }

    /// Routed indications for a session with event id above `after`.
    pub fn metrics(&self, sid: SessionId, after: u64) -> Result<Vec<RoutedIndication>, LabError> {
        let run = self.runs.get(&sid).ok_or(LabError::UnknownSession(sid))?;
        Ok(run.metrics.iter().filter(|r| r.event_id > after).cloned().collect())
    }

    /// Columnar latency chart from the session's latency-monitor xApp.
    pub fn chart(&self, sid: SessionId) -> Result<Vec<u8>, LabError> {
        let run = self.runs.get(&sid).ok_or(LabError::UnknownSession(sid))?;
        let ric = run.runtime.ric();
        ric.xapp_infos()
            .iter()
            .find(|x| x.kind == "latency-monitor")
            .and_then(|x| ric.xapp::<LatencyMonitor>(&x.xapp_id))
            .map(LatencyMonitor::chart_csv)
            .ok_or(LabError::NoChart(sid))
    }

    pub fn runtime(&self, sid: SessionId) -> Option<&RanRuntime> {
        self.runs.get(&sid).map(|r| &r.runtime)
    }

    pub fn xapps(&self) -> Vec<XAppConfig> {
        self.registry.clone()
    }

    /// Add an xApp to the registry and to every live RIC.
    pub fn register_xapp(&mut self, cfg: XAppConfig) -> Result<XAppConfig, LabError> {
        if self.registry.iter().any(|x| x.id() == cfg.id()) {
            return Err(RicError::DuplicateXApp(cfg.id().to_string()).into());
        }
        cfg.build()?;
        for run in self.runs.values_mut().filter(|r| r.live) {
            run.runtime.register_xapp(cfg.build()?)?;
        }
        self.byod.register_xapp(cfg.build()?)?;
        self.registry.push(cfg.clone());
        Ok(cfg)
    }

    pub fn ingest(&mut self, rec: TelemetryRecord) -> Result<u64, LabError> {
        Ok(self.telemetry.ingest(rec)?)
    }

    pub fn query_telemetry(&self, q: &TelemetryQuery) -> Result<Series, LabError> {
        Ok(self.telemetry.query(q)?)
    }

    pub fn telemetry_watermarks(&self) -> Vec<Watermark> {
        self.telemetry.watermarks()
    }

    pub fn advance(&mut self, dt: u64) -> Result<AdvanceReport, LabError> {
        self.advance_to(self.now + dt)
    }

    /// Move the clock to `t`: lease boundaries take effect at their own
    /// times and every live session's RAN runs up to `t`.
    pub fn advance_to(&mut self, t: u64) -> Result<AdvanceReport, LabError> {
        if t < self.now {
            return Err(LabError::ClockRegression { now: self.now, requested: t });
        }
        let transitions = self.leases.advance_time(t)?;
        let mut stopped = Vec::new();
        for tr in &transitions {
            self.run_sessions_to(tr.at.max(self.now))?;
            self.now = tr.at.max(self.now);
            if tr.to == LeaseState::Expired {
                if let Some(sid) = self.provisioner.live_session_for(tr.lease_id) {
                    self.stop_run(sid, "lease expired", disconnect::LEASE_EXPIRED)?;
                    stopped.push(sid);
                }
            }
        }
        self.run_sessions_to(t)?;
        self.now = t;
        let mut routed = Vec::new();
        for (sid, run) in self.runs.iter_mut() {
            let new = run.runtime.take_routed();
            routed.extend(new.iter().cloned().map(|r| (*sid, r)));
            run.metrics.extend(new);
        }
        routed.sort_by_key(|(sid, r)| (r.at, *sid, r.event_id));
        Ok(AdvanceReport { now: t, lease_transitions: transitions, stopped_sessions: stopped, routed })
    }

    fn run_sessions_to(&mut self, t: u64) -> Result<(), LabError> {
        for run in self.runs.values_mut().filter(|r| r.live) {
            run.runtime.advance_to(t)?;
        }
        Ok(())
    }

    pub fn byod_connect(&mut self) -> ConnId {
        self.byod.connect()
    }

    /// Feed a message from an external agent; returns what the RIC sends
    /// back on that connection.
    pub fn byod_message(&mut self, conn: ConnId, msg: &E2Message) -> Result<(Effect, Vec<E2Message>), LabError> {
        let effect = self.byod.on_message(conn, msg, self.now)?;
        let mut out = Vec::new();
        let mut other = Vec::new();
        for (c, m) in self.byod.take_outbox() {
            if c == conn {
                out.push(m);
            } else {
                other.push((c, m));
            }
        }
        debug_assert!(other.is_empty(), "byod RIC only answers the sender");
        Ok((effect, out))
    }

    pub fn byod_drop(&mut self, conn: ConnId) {
        self.byod.drop_connection(conn);
    }

    pub fn byod_ric(&self) -> &Ric {
        &self.byod
    }

    pub fn byod_take_routed(&mut self) -> Vec<RoutedIndication> {
        self.byod.take_routed()
    }

    pub fn session_state(&self, sid: SessionId) -> Option<SessionState> {
        self.provisioner.session(sid).map(|s| s.state)
    }
}
