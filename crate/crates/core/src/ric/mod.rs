//! Near-RT RIC. Terminates E2-lite connections, owns subscriptions on
//! behalf of xApps, routes indications and forwards control actions.
//!
//! The RIC does no I/O. Callers feed it decoded messages with the virtual
//! time they are processed at and drain [`Ric::take_outbox`].

mod config;
mod xapps;

pub use config::{RegistryFile, XAppConfig};
pub use xapps::{LatencyMonitor, SeriesPoint, ThresholdControl, CHART_HEADER};

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::e2::{error_code, handle, on_send, E2ConnectionState, E2Message, Effect, Phase, Side, SubscriptionSpec};
use crate::metrics::MetricSample;

/// Near-RT control window bounds in ms, both inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingClass {
    pub near_rt_min_ms: u64,
    pub near_rt_max_ms: u64,
}

impl TimingClass {
    pub const NEAR_RT: TimingClass = TimingClass { near_rt_min_ms: 10, near_rt_max_ms: 1000 };
}

impl Default for TimingClass {
    fn default() -> Self {
        TimingClass::NEAR_RT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimingVerdict {
    WithinWindow,
    SubWindow,
    Violation,
}

pub fn classify_latency(latency_ms: u64, tc: &TimingClass) -> TimingVerdict {
    if latency_ms > tc.near_rt_max_ms {
        TimingVerdict::Violation
    } else if latency_ms < tc.near_rt_min_ms {
        TimingVerdict::SubWindow
    } else {
        TimingVerdict::WithinWindow
    }
}

pub fn enforce_timing(action: &ControlAction, tc: &TimingClass) -> TimingVerdict {
    classify_latency(action.issued_ts - action.trigger_ts, tc)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentSelector {
    All,
    Agents(BTreeSet<String>),
}

impl AgentSelector {
    pub fn matches(&self, agent_id: &str) -> bool {
        match self {
            AgentSelector::All => true,
            AgentSelector::Agents(ids) => ids.contains(agent_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriptionWish {
    pub selector: AgentSelector,
    pub spec: SubscriptionSpec,
}

/// What an xApp sees for one routed indication.
#[derive(Debug, Clone, Copy)]
pub struct IndicationContext<'a> {
    pub agent_id: &'a str,
    pub sub_id: u32,
    pub seq: u64,
    pub samples: &'a [MetricSample],
    pub now: u64,
}

/// A control request an xApp wants sent back over the indication's
/// connection.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlIntent {
    pub target_cell: String,
    pub payload: Vec<u8>,
    /// Virtual time of the sample that caused it.
    pub trigger_ts: u64,
}

/// Handler contract for in-process xApps.
pub trait XApp: Send {
    fn id(&self) -> &str;
    fn kind(&self) -> &'static str;
    fn subscriptions(&self) -> Vec<SubscriptionWish>;
    fn on_indication(&mut self, ctx: &IndicationContext<'_>) -> Vec<ControlIntent>;
    fn as_any(&self) -> &dyn Any;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub ctrl_id: u32,
    pub xapp_id: String,
    pub agent_id: String,
    pub target_cell: String,
    pub payload: Vec<u8>,
    pub trigger_ts: u64,
    pub issued_ts: u64,
    pub verdict: TimingVerdict,
    pub acked: Option<crate::e2::ControlOutcome>,
}

impl ControlAction {
    pub fn violation(&self) -> bool {
        self.verdict == TimingVerdict::Violation
    }
}

/// One handler invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub at: u64,
    pub xapp_id: String,
    pub agent_id: String,
    pub sub_id: u32,
    pub seq: u64,
    pub samples: usize,
}

/// A routed indication with its payload, for streaming and storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedIndication {
    pub event_id: u64,
    pub at: u64,
    pub xapp_id: String,
    pub agent_id: String,
    pub sub_id: u32,
    pub seq: u64,
    pub samples: Vec<MetricSample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RicError {
    #[error("xApp id {0} is already registered")]
    DuplicateXApp(String),
    #[error("xApp {0} requests no subscriptions")]
    NoSubscriptions(String),
    #[error("xApp id is empty")]
    EmptyId,
    #[error("xApp subscription is invalid: {0}")]
    InvalidSubscription(String),
    #[error("unknown connection {0}")]
    UnknownConnection(ConnId),
    #[error("xApp config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConnId(pub u32);

impl std::fmt::Display for ConnId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "conn-{}", self.0)
    }
}

#[derive(Debug, Clone)]
struct Conn {
    state: E2ConnectionState,
}

#[derive(Debug, Clone)]
struct Owner {
    xapp: usize,
    conn: ConnId,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RicCounters {
    pub indications_routed: u64,
    pub samples_routed: u64,
    pub protocol_errors_sent: u64,
    pub protocol_errors_received: u64,
    pub subscriptions_requested: u64,
    pub subscriptions_active: u64,
    pub subscriptions_rejected: u64,
    pub sub_window_actions: u64,
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XAppInfo {
    pub xapp_id: String,
    pub kind: String,
    pub subscriptions: Vec<SubscriptionWish>,
    pub active_subscriptions: usize,
    pub invocations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Registration {
    /// SubscriptionRequests issued right away to Established agents.
    pub requests_sent: usize,
}

struct Slot {
    xapp: Box<dyn XApp>,
    wishes: Vec<SubscriptionWish>,
    invocations: u64,
}

pub struct Ric {
    ric_id: String,
    timing: TimingClass,
    conns: BTreeMap<ConnId, Conn>,
    next_conn: u32,
    xapps: Vec<Slot>,
    owners: BTreeMap<u32, Owner>,
    next_sub: u32,
    next_ctrl: u32,
    next_event: u64,
    outbox: Vec<(ConnId, E2Message)>,
    actions: Vec<ControlAction>,
    invocations: Vec<Invocation>,
    routed: Vec<RoutedIndication>,
    keep_invocations: bool,
    counters: RicCounters,
}

impl std::fmt::Debug for Ric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ric")
            .field("ric_id", &self.ric_id)
            .field("conns", &self.conns.len())
            .field("xapps", &self.xapps.len())
            .finish()
    }
}

impl Ric {
    pub fn new(ric_id: impl Into<String>) -> Self {
        Ric {
            ric_id: ric_id.into(),
            timing: TimingClass::NEAR_RT,
            conns: BTreeMap::new(),
            next_conn: 1,
            xapps: Vec::new(),
            owners: BTreeMap::new(),
            next_sub: 1,
            next_ctrl: 1,
            next_event: 1,
            outbox: Vec::new(),
            actions: Vec::new(),
            invocations: Vec::new(),
            routed: Vec::new(),
            keep_invocations: true,
            counters: RicCounters::default(),
        }
    }

    /// Stop recording the per-invocation log (counters still run).
    pub fn without_invocation_log(mut self) -> Self {
        self.keep_invocations = false;
        self
    }

    pub fn ric_id(&self) -> &str {
        &self.ric_id
    }

    pub fn counters(&self) -> RicCounters {
        self.counters
    }

    pub fn connect(&mut self) -> ConnId {
        let id = ConnId(self.next_conn);
        self.next_conn += 1;
        self.conns.insert(id, Conn { state: E2ConnectionState::ric(self.ric_id.clone()) });
        id
    }

    pub fn connection(&self, conn: ConnId) -> Option<&E2ConnectionState> {
        self.conns.get(&conn).map(|c| &c.state)
    }

    pub fn connections(&self) -> impl Iterator<Item = (ConnId, &E2ConnectionState)> {
        self.conns.iter().map(|(id, c)| (*id, &c.state))
    }

    /// Agent ids of Established connections.
    pub fn agents(&self) -> Vec<String> {
        self.conns
            .values()
            .filter(|c| c.state.phase == Phase::Established)
            .filter_map(|c| c.state.peer_id.clone())
            .collect()
    }

    pub fn take_outbox(&mut self) -> Vec<(ConnId, E2Message)> {
        std::mem::take(&mut self.outbox)
    }

    pub fn actions(&self) -> &[ControlAction] {
        &self.actions
    }

    pub fn invocations(&self) -> &[Invocation] {
        &self.invocations
    }

    pub fn take_routed(&mut self) -> Vec<RoutedIndication> {
        std::mem::take(&mut self.routed)
    }

    pub fn xapp_infos(&self) -> Vec<XAppInfo> {
        self.xapps
            .iter()
            .enumerate()
            .map(|(i, s)| XAppInfo {
                xapp_id: s.xapp.id().to_string(),
                kind: s.xapp.kind().to_string(),
                subscriptions: s.wishes.clone(),
                active_subscriptions: self
                    .owners
                    .iter()
                    .filter(|(sub, o)| {
                        o.xapp == i && self.conns.get(&o.conn).is_some_and(|c| c.state.subscriptions.contains_key(sub))
                    })
                    .count(),
                invocations: s.invocations,
            })
            .collect()
    }

    /// Borrow a registered xApp as its concrete type.
    pub fn xapp<T: 'static>(&self, id: &str) -> Option<&T> {
        self.xapps.iter().find(|s| s.xapp.id() == id).and_then(|s| s.xapp.as_any().downcast_ref::<T>())
    }

    pub fn has_xapp(&self, id: &str) -> bool {
        self.xapps.iter().any(|s| s.xapp.id() == id)
    }

    fn send(&mut self, conn: ConnId, msg: E2Message) {
        let Some(c) = self.conns.get_mut(&conn) else { return };
        match on_send(&c.state, Side::Ric, &msg) {
            Ok(next) => {
                c.state = next;
                if matches!(msg, E2Message::ProtocolError { .. }) {
                    self.counters.protocol_errors_sent += 1;
                }
                self.outbox.push((conn, msg));
            }
            Err(e) => tracing::debug!(%conn, error = %e, "dropping outbound message"),
        }
    }

    /// Issue the xApp's wishes to one Established connection; returns the
    /// number of requests sent.
    fn subscribe_conn(&mut self, xapp: usize, conn: ConnId) -> usize {
        let Some(c) = self.conns.get(&conn) else { return 0 };
        if c.state.phase != Phase::Established {
            return 0;
        }
        let agent = c.state.peer_id.clone().unwrap_or_default();
        let offered = c.state.ran_functions;
        let mut sent = 0;
        for wish in self.xapps[xapp].wishes.clone() {
            if !wish.selector.matches(&agent) {
                continue;
            }
            // in split deployments each unit only offers part of the set
            let mut spec = wish.spec.clone();
            spec.metric_set = spec.metric_set.intersect(offered);
            if spec.metric_set.is_empty() {
                continue;
            }
            let sub_id = self.next_sub;
            self.next_sub += 1;
            self.owners.insert(sub_id, Owner { xapp, conn });
            self.counters.subscriptions_requested += 1;
            self.send(conn, E2Message::SubscriptionRequest { sub_id, spec });
            sent += 1;
        }
        sent
    }

    pub fn register_xapp(&mut self, xapp: Box<dyn XApp>) -> Result<Registration, RicError> {
        let id = xapp.id().to_string();
        if id.is_empty() {
            return Err(RicError::EmptyId);
        }
        if self.has_xapp(&id) {
            return Err(RicError::DuplicateXApp(id));
        }
        let wishes = xapp.subscriptions();
        if wishes.is_empty() {
            return Err(RicError::NoSubscriptions(id));
        }
        if let Some(bad) = wishes.iter().find(|w| !w.spec.is_valid()) {
            return Err(RicError::InvalidSubscription(format!("{:?}", bad.spec)));
        }
        self.xapps.push(Slot { xapp, wishes, invocations: 0 });
        let idx = self.xapps.len() - 1;
        let conns: Vec<ConnId> = self.conns.keys().copied().collect();
        let requests_sent = conns.into_iter().map(|c| self.subscribe_conn(idx, c)).sum();
        Ok(Registration { requests_sent })
    }

    /// Close a connection from the RIC side.
    pub fn disconnect(&mut self, conn: ConnId, reason: u8) -> Result<(), RicError> {
        if !self.conns.contains_key(&conn) {
            return Err(RicError::UnknownConnection(conn));
        }
        self.send(conn, E2Message::Disconnect { reason });
        self.drop_conn_subs(conn);
        Ok(())
    }

    /// Forget a connection whose transport went away.
    pub fn drop_connection(&mut self, conn: ConnId) {
        self.drop_conn_subs(conn);
        self.conns.remove(&conn);
    }

    fn drop_conn_subs(&mut self, conn: ConnId) {
        let gone: Vec<u32> = self.owners.iter().filter(|(_, o)| o.conn == conn).map(|(s, _)| *s).collect();
        for s in gone {
            self.owners.remove(&s);
        }
        self.recount_active();
    }

    fn recount_active(&mut self) {
        self.counters.subscriptions_active = self.conns.values().map(|c| c.state.subscriptions.len() as u64).sum();
    }

    /// Process one message received on `conn` at virtual time `now`.
    pub fn on_message(&mut self, conn: ConnId, msg: &E2Message, now: u64) -> Result<Effect, RicError> {
        let c = self.conns.get_mut(&conn).ok_or(RicError::UnknownConnection(conn))?;
        let t = handle(&c.state, Side::Ric, msg);
        c.state = t.state;
        for out in t.outgoing {
            if matches!(out, E2Message::ProtocolError { .. }) {
                self.counters.protocol_errors_sent += 1;
            }
            self.outbox.push((conn, out));
        }
        match &t.effect {
            Effect::Established => {
                for i in 0..self.xapps.len() {
                    self.subscribe_conn(i, conn);
                }
            }
            Effect::SubscriptionAccepted(_) => self.recount_active(),
            Effect::SubscriptionRejected(sub, _) => {
                self.owners.remove(sub);
                self.counters.subscriptions_rejected += 1;
            }
            Effect::Deliver { sub_id, seq } => {
                let E2Message::Indication { samples, .. } = msg else { unreachable!("deliver comes from indications") };
                self.route(conn, *sub_id, *seq, samples, now);
            }
            Effect::ControlAcked(ctrl, outcome) => {
                if let Some(a) = self.actions.iter_mut().rev().find(|a| a.ctrl_id == *ctrl) {
                    a.acked = Some(*outcome);
                }
            }
            Effect::PeerError(_) => self.counters.protocol_errors_received += 1,
            Effect::Closed => self.drop_conn_subs(conn),
            _ => {}
        }
        Ok(t.effect)
    }

    fn route(&mut self, conn: ConnId, sub_id: u32, seq: u64, samples: &[MetricSample], now: u64) {
        let Some(owner) = self.owners.get(&sub_id).cloned() else {
            self.send(conn, E2Message::protocol_error(error_code::UNKNOWN_SUBSCRIPTION, format!("sub {sub_id} has no owner")));
            return;
        };
        if owner.conn != conn {
            self.send(conn, E2Message::protocol_error(error_code::UNKNOWN_SUBSCRIPTION, format!("sub {sub_id} belongs to another connection")));
            return;
        }
        let agent_id = self.conns[&conn].state.peer_id.clone().unwrap_or_default();
        let slot = &mut self.xapps[owner.xapp];
        slot.invocations += 1;
        let ctx = IndicationContext { agent_id: &agent_id, sub_id, seq, samples, now };
        let intents = slot.xapp.on_indication(&ctx);
        let xapp_id = slot.xapp.id().to_string();
        self.counters.indications_routed += 1;
        self.counters.samples_routed += samples.len() as u64;
        if self.keep_invocations {
            self.invocations.push(Invocation {
                at: now,
                xapp_id: xapp_id.clone(),
                agent_id: agent_id.clone(),
                sub_id,
                seq,
                samples: samples.len(),
            });
        }
        self.routed.push(RoutedIndication {
            event_id: self.next_event,
            at: now,
            xapp_id: xapp_id.clone(),
            agent_id: agent_id.clone(),
            sub_id,
            seq,
            samples: samples.to_vec(),
        });
        self.next_event += 1;
        for intent in intents {
            let ctrl_id = self.next_ctrl;
            self.next_ctrl += 1;
            let mut action = ControlAction {
                ctrl_id,
                xapp_id: xapp_id.clone(),
                agent_id: agent_id.clone(),
                target_cell: intent.target_cell,
                payload: intent.payload,
                trigger_ts: intent.trigger_ts.min(now),
                issued_ts: now,
                verdict: TimingVerdict::WithinWindow,
                acked: None,
            };
            action.verdict = enforce_timing(&action, &self.timing);
            match action.verdict {
                TimingVerdict::Violation => {
                    self.counters.violations += 1;
                    tracing::warn!(ctrl_id, latency = now - action.trigger_ts, "control action outside near-RT window");
                }
                TimingVerdict::SubWindow => self.counters.sub_window_actions += 1,
                TimingVerdict::WithinWindow => {}
            }
            self.send(
                conn,
                E2Message::ControlRequest { ctrl_id, target_cell: action.target_cell.clone(), action: action.payload.clone() },
            );
            self.actions.push(action);
        }
    }

    /// Close every connection, e.g. when the owning session stops.
    pub fn shutdown(&mut self, reason: u8) {
        let conns: Vec<ConnId> = self.conns.keys().copied().collect();
        for c in conns {
            if self.conns[&c].state.phase != Phase::Closed {
                let _ = self.disconnect(c, reason);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::e2::ControlOutcome;
    use crate::metrics::{Layer, MetricSet};

    fn action(trigger: u64, issued: u64) -> ControlAction {
        ControlAction {
            ctrl_id: 1,
            xapp_id: "x".into(),
            agent_id: "a".into(),
            target_cell: "c".into(),
            payload: vec![],
            trigger_ts: trigger,
            issued_ts: issued,
            verdict: TimingVerdict::WithinWindow,
            acked: None,
        }
    }

    #[test]
    fn timing_boundaries() {
        let tc = TimingClass::NEAR_RT;
        assert_eq!(enforce_timing(&action(0, 500), &tc), TimingVerdict::WithinWindow);
        assert_eq!(enforce_timing(&action(0, 1500), &tc), TimingVerdict::Violation);
        assert_eq!(enforce_timing(&action(100, 110), &tc), TimingVerdict::WithinWindow);
        assert_eq!(enforce_timing(&action(100, 1100), &tc), TimingVerdict::WithinWindow);
        assert_eq!(enforce_timing(&action(100, 109), &tc), TimingVerdict::SubWindow);
        assert_eq!(enforce_timing(&action(100, 1101), &tc), TimingVerdict::Violation);
    }

    /// Records everything and asks for nothing back.
    struct Probe {
        id: String,
        wishes: Vec<SubscriptionWish>,
        seen: Vec<(String, u32, u64)>,
        reply: bool,
    }

    impl Probe {
        fn boxed(id: &str, selector: AgentSelector, sets: MetricSet) -> Box<Probe> {
            Box::new(Probe {
                id: id.into(),
                wishes: vec![SubscriptionWish { selector, spec: SubscriptionSpec::new(100, sets) }],
                seen: vec![],
                reply: false,
            })
        }
    }

    impl XApp for Probe {
        fn id(&self) -> &str {
            &self.id
        }
        fn kind(&self) -> &'static str {
            "probe"
        }
        fn subscriptions(&self) -> Vec<SubscriptionWish> {
            self.wishes.clone()
        }
        fn on_indication(&mut self, ctx: &IndicationContext<'_>) -> Vec<ControlIntent> {
            self.seen.push((ctx.agent_id.to_string(), ctx.sub_id, ctx.seq));
            if self.reply {
                vec![ControlIntent { target_cell: "cell".into(), payload: b"x".to_vec(), trigger_ts: ctx.samples[0].t }]
            } else {
                vec![]
            }
        }
        fn as_any(&self) -> &dyn Any {
            self
        }
    }

    fn setup(ric: &mut Ric, agent: &str, funcs: &[u8]) -> ConnId {
        let c = ric.connect();
        ric.on_message(c, &E2Message::Setup { agent_id: agent.into(), ran_functions: funcs.to_vec() }, 0).unwrap();
        c
    }

    fn accept_all(ric: &mut Ric) {
        for (conn, msg) in ric.take_outbox() {
            if let E2Message::SubscriptionRequest { sub_id, .. } = msg {
                ric.on_message(conn, &E2Message::SubscriptionResponse { sub_id, accepted: true, reason: String::new() }, 0)
                    .unwrap();
            }
        }
    }

    fn sample(t: u64, layer: Layer) -> MetricSample {
        MetricSample { t, layer, latency: 4.0, ue_id: "ue".into(), cell_id: "cell".into() }
    }

    #[test]
    fn fan_out_to_established_agents() {
        let mut ric = Ric::new("ric");
        setup(&mut ric, "a1", &[1, 2, 3]);
        setup(&mut ric, "a2", &[1, 2, 3]);
        ric.connect(); // never sets up
        ric.take_outbox();
        let reg = ric.register_xapp(Probe::boxed("lm", AgentSelector::All, MetricSet::ALL)).unwrap();
        assert_eq!(reg.requests_sent, 2);
        let reqs = ric.take_outbox().into_iter().filter(|(_, m)| matches!(m, E2Message::SubscriptionRequest { .. })).count();
        assert_eq!(reqs, 2);
    }

    #[test]
    fn deferred_subscription_on_setup() {
        let mut ric = Ric::new("ric");
        let reg = ric.register_xapp(Probe::boxed("lm", AgentSelector::All, MetricSet::ALL)).unwrap();
        assert_eq!(reg.requests_sent, 0);
        assert!(ric.take_outbox().is_empty());
        setup(&mut ric, "a1", &[1, 2, 3]);
        let out = ric.take_outbox();
        assert!(matches!(out[0].1, E2Message::SetupAck { .. }));
        assert!(matches!(out[1].1, E2Message::SubscriptionRequest { .. }));
    }

    #[test]
    fn selector_and_offered_functions_narrow_requests() {
        let mut ric = Ric::new("ric");
        setup(&mut ric, "x-cu", &[2]);
        setup(&mut ric, "x-du", &[1, 3]);
        setup(&mut ric, "other", &[1, 2, 3]);
        ric.take_outbox();
        let sel = AgentSelector::Agents(["x-cu".to_string(), "x-du".to_string()].into());
        ric.register_xapp(Probe::boxed("p", sel, MetricSet::ALL)).unwrap();
        let specs: Vec<_> = ric
            .take_outbox()
            .into_iter()
            .filter_map(|(c, m)| match m {
                E2Message::SubscriptionRequest { spec, .. } => Some((c, spec.metric_set)),
                _ => None,
            })
            .collect();
        assert_eq!(specs, vec![(ConnId(1), MetricSet::of(&[Layer::Pdcp])), (ConnId(2), MetricSet::of(&[Layer::Rlc, Layer::Mac]))]);
        // an xApp that wants only PDCP never asks the DU
        ric.register_xapp(Probe::boxed("pdcp", AgentSelector::All, MetricSet::of(&[Layer::Pdcp]))).unwrap();
        assert_eq!(ric.take_outbox().len(), 2);
    }

    #[test]
    fn duplicate_and_empty_registrations_rejected() {
        let mut ric = Ric::new("ric");
        ric.register_xapp(Probe::boxed("lm", AgentSelector::All, MetricSet::ALL)).unwrap();
        assert_eq!(
            ric.register_xapp(Probe::boxed("lm", AgentSelector::All, MetricSet::of(&[Layer::Mac]))).unwrap_err(),
            RicError::DuplicateXApp("lm".into())
        );
        assert_eq!(ric.xapp_infos()[0].subscriptions[0].spec.metric_set, MetricSet::ALL);
        let empty = Box::new(Probe { id: "e".into(), wishes: vec![], seen: vec![], reply: false });
        assert_eq!(ric.register_xapp(empty).unwrap_err(), RicError::NoSubscriptions("e".into()));
    }

    #[test]
    fn indication_routed_once_to_owner() {
        let mut ric = Ric::new("ric");
        ric.register_xapp(Probe::boxed("a", AgentSelector::All, MetricSet::of(&[Layer::Mac]))).unwrap();
        ric.register_xapp(Probe::boxed("b", AgentSelector::All, MetricSet::of(&[Layer::Rlc]))).unwrap();
        let c = setup(&mut ric, "agent", &[1, 2, 3]);
        accept_all(&mut ric);
        let ind = E2Message::Indication { sub_id: 2, seq: 1, samples: vec![sample(10, Layer::Rlc)] };
        ric.on_message(c, &ind, 20).unwrap();
        assert!(ric.xapp::<Probe>("a").unwrap().seen.is_empty());
        assert_eq!(ric.xapp::<Probe>("b").unwrap().seen, vec![("agent".to_string(), 2, 1)]);
        assert_eq!(ric.counters().indications_routed, 1);
        assert_eq!(ric.take_routed().len(), 1);
    }

    #[test]
    fn unknown_sub_id_gets_protocol_error() {
        let mut ric = Ric::new("ric");
        ric.register_xapp(Probe::boxed("a", AgentSelector::All, MetricSet::ALL)).unwrap();
        let c = setup(&mut ric, "agent", &[1, 2, 3]);
        accept_all(&mut ric);
        let eff = ric.on_message(c, &E2Message::Indication { sub_id: 99, seq: 1, samples: vec![] }, 5).unwrap();
        assert_eq!(eff, Effect::Rejected(error_code::UNKNOWN_SUBSCRIPTION));
        let out = ric.take_outbox();
        assert!(matches!(out[0].1, E2Message::ProtocolError { code: error_code::UNKNOWN_SUBSCRIPTION, .. }));
        assert!(ric.xapp::<Probe>("a").unwrap().seen.is_empty());
    }

    #[test]
    fn rejected_subscription_frees_ownership() {
        let mut ric = Ric::new("ric");
        ric.register_xapp(Probe::boxed("a", AgentSelector::All, MetricSet::ALL)).unwrap();
        let c = setup(&mut ric, "agent", &[1, 2, 3]);
        ric.take_outbox();
        ric.on_message(c, &E2Message::SubscriptionResponse { sub_id: 1, accepted: false, reason: "no".into() }, 0).unwrap();
        assert_eq!(ric.counters().subscriptions_rejected, 1);
        assert_eq!(ric.xapp_infos()[0].active_subscriptions, 0);
    }

    #[test]
    fn control_action_stamped_and_acked() {
        let mut ric = Ric::new("ric");
        let mut p = Probe::boxed("ctl", AgentSelector::All, MetricSet::of(&[Layer::Mac]));
        p.reply = true;
        ric.register_xapp(p).unwrap();
        let c = setup(&mut ric, "agent", &[3]);
        accept_all(&mut ric);
        ric.on_message(c, &E2Message::Indication { sub_id: 1, seq: 1, samples: vec![sample(100, Layer::Mac)] }, 120).unwrap();
        ric.on_message(c, &E2Message::Indication { sub_id: 1, seq: 2, samples: vec![sample(100, Layer::Mac)] }, 1200).unwrap();
        ric.on_message(c, &E2Message::Indication { sub_id: 1, seq: 3, samples: vec![sample(1200, Layer::Mac)] }, 1205).unwrap();
        let verdicts: Vec<_> = ric.actions().iter().map(|a| a.verdict).collect();
        assert_eq!(verdicts, vec![TimingVerdict::WithinWindow, TimingVerdict::Violation, TimingVerdict::SubWindow]);
        assert_eq!(ric.counters().violations, 1);
        // violations are still forwarded
        let ctrl = ric.take_outbox().into_iter().filter(|(_, m)| matches!(m, E2Message::ControlRequest { .. })).count();
        assert_eq!(ctrl, 3);
        ric.on_message(c, &E2Message::ControlAck { ctrl_id: 2, outcome: ControlOutcome::Applied }, 1300).unwrap();
        assert_eq!(ric.actions()[1].acked, Some(ControlOutcome::Applied));
    }

    #[test]
    fn disconnect_drops_subscriptions() {
        let mut ric = Ric::new("ric");
        ric.register_xapp(Probe::boxed("a", AgentSelector::All, MetricSet::ALL)).unwrap();
        let c = setup(&mut ric, "agent", &[1, 2, 3]);
        accept_all(&mut ric);
        assert_eq!(ric.counters().subscriptions_active, 1);
        ric.on_message(c, &E2Message::Disconnect { reason: 0 }, 10).unwrap();
        assert_eq!(ric.counters().subscriptions_active, 0);
        assert_eq!(ric.connection(c).unwrap().phase, Phase::Closed);
        let eff = ric.on_message(c, &E2Message::Indication { sub_id: 1, seq: 1, samples: vec![] }, 11).unwrap();
        assert_eq!(eff, Effect::Ignored);
    }
}
