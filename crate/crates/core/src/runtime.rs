//! Runs a set of RAN agents against one RIC on the virtual clock. Every
//! message crosses an in-process transport as an encoded frame and is
//! delayed by a seeded routing model.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::e2::{
    decode, encode, handle, on_send, DecodeError, E2ConnectionState, E2Message, EncodeError, Effect, Phase, Side,
};
use crate::inventory::{Inventory, NodeId, NodeRecord, NodeRole};
use crate::metrics::{Layer, MetricSample, MetricSet};
use crate::ransim::{derive_seed, AttachOutcome, E2Entity, LinkModel, RanAgent, RanError, ReportCounters, Reporter, VirtualClock};
use crate::ric::{ConnId, Registration, Ric, RicError, RoutedIndication, XApp};

pub const DEFAULT_STEP_MS: u64 = 10;

/// Inclusive ms ranges for each hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DelayBounds {
    pub uplink: (u64, u64),
    pub processing: (u64, u64),
    pub downlink: (u64, u64),
}

impl DelayBounds {
    pub const DEFAULT: DelayBounds = DelayBounds { uplink: (5, 15), processing: (5, 20), downlink: (5, 15) };
    pub const ZERO: DelayBounds = DelayBounds { uplink: (0, 0), processing: (0, 0), downlink: (0, 0) };
}

impl Default for DelayBounds {
    fn default() -> Self {
        DelayBounds::DEFAULT
    }
}

#[derive(Debug, Clone)]
struct DelayModel {
    bounds: DelayBounds,
    rng: ChaCha8Rng,
}

impl DelayModel {
    fn pick(&mut self, (lo, hi): (u64, u64)) -> u64 {
        if lo >= hi {
            lo
        } else {
            self.rng.random_range(lo..=hi)
        }
    }

    /// Agent to RIC, including RIC-side processing.
    fn up(&mut self) -> u64 {
        let b = self.bounds;
        self.pick(b.uplink) + self.pick(b.processing)
    }

    fn down(&mut self) -> u64 {
        let b = self.bounds;
        self.pick(b.downlink)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeConfig {
    pub seed: u64,
    pub step_ms: u64,
    pub link: LinkModel,
    pub delays: DelayBounds,
    /// Keep every generated sample for later inspection.
    pub record_raw: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            seed: 0,
            step_ms: DEFAULT_STEP_MS,
            link: LinkModel::default(),
            delays: DelayBounds::DEFAULT,
            record_raw: false,
        }
    }
}

impl RuntimeConfig {
    pub fn seeded(seed: u64) -> Self {
        RuntimeConfig { seed, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Ran(#[from] RanError),
    #[error(transparent)]
    Ric(#[from] RicError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("agent {0} already added")]
    DuplicateAgent(String),
}

#[derive(Debug, Clone)]
struct Link {
    entity: E2Entity,
    conn: ConnId,
    state: E2ConnectionState,
    reporter: Reporter,
    up_tail: u64,
    down_tail: u64,
}

#[derive(Debug, Clone)]
struct Host {
    agent: RanAgent,
    links: Vec<Link>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Up,
    Down,
}

#[derive(Debug, Clone)]
struct Frame {
    conn: ConnId,
    dir: Dir,
    bytes: Vec<u8>,
}

/// One E2 entity's view, for status endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStatus {
    pub agent_id: String,
    pub entity_id: String,
    pub conn: ConnId,
    pub phase: Phase,
    pub functions: MetricSet,
    pub subscriptions: Vec<u32>,
    pub attached_ues: Vec<NodeId>,
    pub counters: ReportCounters,
    pub pending: u64,
}

pub struct RanRuntime {
    cfg: RuntimeConfig,
    clock: VirtualClock,
    hosts: BTreeMap<String, Host>,
    by_conn: BTreeMap<ConnId, (String, usize)>,
    ric: Ric,
    delays: DelayModel,
    queue: BTreeMap<(u64, u64), Frame>,
    next_frame: u64,
    raw: Vec<MetricSample>,
    agent_send_errors: u64,
}

impl std::fmt::Debug for RanRuntime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RanRuntime").field("now", &self.clock.now()).field("agents", &self.hosts.len()).finish()
    }
}

impl RanRuntime {
    pub fn new(ric: Ric, cfg: RuntimeConfig, start: u64) -> Self {
        let delays = DelayModel { bounds: cfg.delays, rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "routing")) };
        RanRuntime {
            cfg,
            clock: VirtualClock::starting_at(start),
            hosts: BTreeMap::new(),
            by_conn: BTreeMap::new(),
            ric,
            delays,
            queue: BTreeMap::new(),
            next_frame: 0,
            raw: Vec::new(),
            agent_send_errors: 0,
        }
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.cfg
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn ric(&self) -> &Ric {
        &self.ric
    }

    pub fn ric_mut(&mut self) -> &mut Ric {
        &mut self.ric
    }

    pub fn agent(&self, id: &str) -> Option<&RanAgent> {
        self.hosts.get(id).map(|h| &h.agent)
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = &String> {
        self.hosts.keys()
    }

    pub fn raw_samples(&self) -> &[MetricSample] {
        &self.raw
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn agent_send_errors(&self) -> u64 {
        self.agent_send_errors
    }

    /// Build an agent for `bs` with this runtime's link model and seed.
    pub fn make_agent(&self, agent_id: &str, bs: &NodeRecord, split: bool) -> Result<RanAgent, RuntimeError> {
        Ok(RanAgent::new(agent_id, bs.clone(), &self.cfg.link, self.cfg.seed)?.with_split(split))
    }

    /// Connect an agent: one E2 connection per entity, each starting with
    /// a Setup.
    pub fn add_agent(&mut self, agent: RanAgent) -> Result<Vec<ConnId>, RuntimeError> {
        let id = agent.agent_id().to_string();
        if self.hosts.contains_key(&id) {
            return Err(RuntimeError::DuplicateAgent(id));
        }
        let now = self.now();
        let mut links = Vec::new();
        let mut conns = Vec::new();
        for entity in agent.entities() {
            let conn = self.ric.connect();
            let state = E2ConnectionState::agent(entity.entity_id.clone(), entity.functions);
            self.by_conn.insert(conn, (id.clone(), links.len()));
            links.push(Link { entity, conn, state, reporter: Reporter::new(), up_tail: now, down_tail: now });
            conns.push(conn);
        }
        self.hosts.insert(id.clone(), Host { agent, links });
        for (i, conn) in conns.iter().enumerate() {
            let link = &self.hosts[&id].links[i];
            let setup = E2Message::Setup {
                agent_id: link.entity.entity_id.clone(),
                ran_functions: link.entity.functions.layers().map(Layer::id).collect(),
            };
            self.agent_send(*conn, setup, now)?;
        }
        Ok(conns)
    }

    pub fn attach_ue(&mut self, agent_id: &str, ue: &NodeRecord) -> Result<AttachOutcome, RuntimeError> {
        let now = self.now();
        let host = self.hosts.get_mut(agent_id).ok_or_else(|| RuntimeError::UnknownAgent(agent_id.to_string()))?;
        Ok(host.agent.attach_ue(ue, &self.cfg.link, now)?)
    }

    pub fn set_layer_median(&mut self, agent_id: &str, layer: Layer, median_ms: f64) -> Result<(), RuntimeError> {
        let host = self.hosts.get_mut(agent_id).ok_or_else(|| RuntimeError::UnknownAgent(agent_id.to_string()))?;
        host.agent.set_layer_median(layer, median_ms);
        Ok(())
    }

    pub fn register_xapp(&mut self, xapp: Box<dyn XApp>) -> Result<Registration, RuntimeError> {
        let reg = self.ric.register_xapp(xapp)?;
        self.flush_ric(self.now())?;
        Ok(reg)
    }

    fn schedule(&mut self, at: u64, frame: Frame) {
        self.queue.insert((at, self.next_frame), frame);
        self.next_frame += 1;
    }

    fn agent_send(&mut self, conn: ConnId, msg: E2Message, now: u64) -> Result<(), RuntimeError> {
        let (agent, idx) = self.by_conn[&conn].clone();
        let link = &mut self.hosts.get_mut(&agent).expect("host").links[idx];
        match on_send(&link.state, Side::Agent, &msg) {
            Ok(s) => link.state = s,
            Err(e) => {
                tracing::debug!(%conn, error = %e, "agent send refused");
                self.agent_send_errors += 1;
                return Ok(());
            }
        }
        let bytes = encode(&msg)?;
        let at = (now + self.delays.up()).max(link.up_tail);
        link.up_tail = at;
        self.schedule(at, Frame { conn, dir: Dir::Up, bytes });
        Ok(())
    }

    fn flush_ric(&mut self, now: u64) -> Result<(), RuntimeError> {
        for (conn, msg) in self.ric.take_outbox() {
            let Some((agent, idx)) = self.by_conn.get(&conn).cloned() else { continue };
            let bytes = encode(&msg)?;
            let d = self.delays.down();
            let link = &mut self.hosts.get_mut(&agent).expect("host").links[idx];
            let at = (now + d).max(link.down_tail);
            link.down_tail = at;
            self.schedule(at, Frame { conn, dir: Dir::Down, bytes });
        }
        Ok(())
    }

    fn deliver(&mut self, at: u64, frame: Frame) -> Result<(), RuntimeError> {
        let (msg, _) = decode(&frame.bytes)?;
        match frame.dir {
            Dir::Up => {
                self.ric.on_message(frame.conn, &msg, at)?;
                self.flush_ric(at)
            }
            Dir::Down => {
                let (agent, idx) = self.by_conn[&frame.conn].clone();
                let link = &mut self.hosts.get_mut(&agent).expect("host").links[idx];
                let t = handle(&link.state, Side::Agent, &msg);
                link.state = t.state;
                match t.effect {
                    Effect::SubscriptionActivated(sub) => {
                        let spec = link.state.subscriptions[&sub].clone();
                        link.reporter.subscribe(sub, spec, at);
                    }
                    Effect::Closed => link.reporter.unsubscribe_all(),
                    _ => {}
                }
                for out in t.outgoing {
                    self.agent_send(frame.conn, out, at)?;
                }
                Ok(())
            }
        }
    }

    fn process_until(&mut self, t: u64) -> Result<(), RuntimeError> {
        while let Some(entry) = self.queue.first_entry() {
            let (at, _) = *entry.key();
            if at > t {
                break;
            }
            let frame = entry.remove();
            self.deliver(at, frame)?;
        }
        Ok(())
    }

    fn tick(&mut self, t: u64) -> Result<(), RuntimeError> {
        self.process_until(t)?;
        self.clock.advance_to(t)?;
        let mut outgoing = Vec::new();
        for host in self.hosts.values_mut() {
            let samples = host.agent.sample(t);
            if samples.is_empty() && host.links.iter().all(|l| l.reporter.pending() == 0) {
                continue;
            }
            if self.cfg.record_raw {
                self.raw.extend(samples.iter().cloned());
            }
            for link in &mut host.links {
                let mine: Vec<MetricSample> =
                    samples.iter().filter(|s| link.entity.functions.contains(s.layer)).cloned().collect();
                for ind in link.reporter.report(&mine, t) {
                    outgoing.push((link.conn, ind.to_message()));
                }
            }
        }
        for (conn, msg) in outgoing {
            self.agent_send(conn, msg, t)?;
        }
        Ok(())
    }

    /// Step agents every `step_ms` up to `t`, delivering frames as their
    /// arrival times pass.
    pub fn advance_to(&mut self, t: u64) -> Result<(), RuntimeError> {
        if t < self.now() {
            return Err(RanError::ClockRegression { now: self.now(), requested: t }.into());
        }
        let step = self.cfg.step_ms.max(1);
        while self.now() + step <= t {
            let next = self.now() + step;
            self.tick(next)?;
        }
        self.process_until(t)?;
        if t > self.now() {
            self.clock.advance_to(t)?;
        }
        Ok(())
    }

    /// Deliver everything still in flight without generating new samples.
    pub fn settle(&mut self) -> Result<(), RuntimeError> {
        self.process_until(u64::MAX)
    }

    /// Disconnect every agent and deliver the goodbyes.
    pub fn shutdown(&mut self, reason: u8) -> Result<(), RuntimeError> {
        self.ric.shutdown(reason);
        let now = self.now();
        self.flush_ric(now)?;
        self.settle()
    }

    pub fn take_routed(&mut self) -> Vec<RoutedIndication> {
        self.ric.take_routed()
    }

    /// Reporter counters summed over every entity.
    pub fn counters(&self) -> ReportCounters {
        let mut total = ReportCounters::default();
        for l in self.hosts.values().flat_map(|h| &h.links) {
            let c = l.reporter.counters();
            total.generated += c.generated;
            total.delivered += c.delivered;
            total.unmatched += c.unmatched;
            total.dropped += c.dropped;
        }
        total
    }

    pub fn pending(&self) -> u64 {
        self.hosts.values().flat_map(|h| &h.links).map(|l| l.reporter.pending()).sum()
    }

    pub fn links(&self) -> Vec<LinkStatus> {
        self.hosts
            .iter()
            .flat_map(|(id, h)| {
                h.links.iter().map(move |l| LinkStatus {
                    agent_id: id.clone(),
                    entity_id: l.entity.entity_id.clone(),
                    conn: l.conn,
                    phase: l.state.phase,
                    functions: l.entity.functions,
                    subscriptions: l.state.subscriptions.keys().copied().collect(),
                    attached_ues: h.agent.attached().cloned().collect(),
                    counters: l.reporter.counters(),
                    pending: l.reporter.pending(),
                })
            })
            .collect()
    }
}

/// Split each sandbox host into one record per radio, named
/// `{host}-r{i}`. The returned records carry the host's position and a
/// single radio; their role is FixedUe until a caller promotes some of
/// them to base stations.
pub fn expand_radios(inv: &Inventory) -> Vec<NodeRecord> {
    inv.nodes()
        .filter(|n| n.role == NodeRole::SandboxHost)
        .flat_map(|n| {
            n.radios.iter().enumerate().map(move |(i, r)| NodeRecord {
                node_id: NodeId(format!("{}-r{i}", n.node_id)),
                site_id: n.site_id.clone(),
                role: NodeRole::FixedUe,
                position: n.position.clone(),
                radios: vec![r.clone()],
                booster: None,
                mgmt_endpoint: n.mgmt_endpoint.clone(),
            })
        })
        .collect()
}

/// Lay out radios as `agents` base stations (CU/DU split) and the rest as
/// UEs spread round-robin across them.
pub fn sandbox_runtime(inv: &Inventory, agents: usize, cfg: RuntimeConfig) -> Result<RanRuntime, RuntimeError> {
    let mut radios = expand_radios(inv);
    let mut rt = RanRuntime::new(Ric::new("sandbox-ric"), cfg, 0);
    let ues = radios.split_off(agents.min(radios.len()));
    let mut ids = Vec::new();
    for mut bs in radios {
        bs.role = NodeRole::BaseStation;
        let id = format!("{}-gnb", bs.node_id);
        let agent = rt.make_agent(&id, &bs, true)?;
        rt.add_agent(agent)?;
        ids.push(id);
    }
    if !ids.is_empty() {
        for (i, ue) in ues.iter().enumerate() {
            rt.attach_ue(&ids[i % ids.len()], ue)?;
        }
    }
    Ok(rt)
}
