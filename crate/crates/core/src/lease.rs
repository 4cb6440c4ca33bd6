//! Reservation calendar: admits leases of nodes plus a spectrum block over a
//! half-open virtual-time interval, first come first served.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{Inventory, NodeId, NodeRole, SiteId};
use crate::provisioner::{ImageCatalog, RoleTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LeaseId(pub u64);

impl fmt::Display for LeaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A contiguous block of spectrum, `[center - bw/2, center + bw/2)` MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBlock {
    pub center: f64,
    pub bandwidth: f64,
}

impl SpectrumBlock {
    pub fn new(center: f64, bandwidth: f64) -> Self {
        SpectrumBlock { center, bandwidth }
    }

    pub fn lo(&self) -> f64 {
        self.center - self.bandwidth / 2.0
    }

    pub fn hi(&self) -> f64 {
        self.center + self.bandwidth / 2.0
    }

    pub fn overlaps(&self, other: &SpectrumBlock) -> bool {
        self.lo() < other.hi() && other.lo() < self.hi()
    }
}

/// Half-open interval `[start, end)` of virtual milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: u64,
    pub end: u64,
}

impl Interval {
    pub fn new(start: u64, end: u64) -> Self {
        Interval { start, end }
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, t: u64) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaseRequest {
    pub requester: String,
    pub node_ids: BTreeSet<NodeId>,
    pub spectrum: SpectrumBlock,
    pub interval: Interval,
    #[serde(default)]
    pub images: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeaseState {
    Requested,
    Active,
    Expired,
    Terminated,
    Rejected,
}

impl LeaseState {
    pub fn is_terminal(self) -> bool {
        matches!(self, LeaseState::Expired | LeaseState::Terminated | LeaseState::Rejected)
    }

    fn can_become(self, next: LeaseState) -> bool {
        use LeaseState::*;
        matches!((self, next), (Requested, Active | Rejected | Terminated) | (Active, Expired | Terminated))
    }
}

/// Why a request clashes with an already admitted lease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReason {
    pub lease_id: LeaseId,
    /// Nodes both leases want.
    pub shared_nodes: Vec<NodeId>,
    /// Sites where both leases hold nodes on overlapping spectrum.
    pub spectrum_sites: Vec<SiteId>,
}

impl fmt::Display for ConflictReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "conflicts with lease {}", self.lease_id)?;
        if !self.shared_nodes.is_empty() {
            let ids: Vec<&str> = self.shared_nodes.iter().map(NodeId::as_str).collect();
            write!(f, "; nodes {}", ids.join(", "))?;
        }
        if !self.spectrum_sites.is_empty() {
            let ids: Vec<&str> = self.spectrum_sites.iter().map(|s| s.0.as_str()).collect();
            write!(f, "; overlapping spectrum at {}", ids.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lease {
    pub lease_id: LeaseId,
    pub request: LeaseRequest,
    pub state: LeaseState,
    pub decided_at: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicts: Vec<ConflictReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaseTransition {
    pub lease_id: LeaseId,
    pub from: LeaseState,
    pub to: LeaseState,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LeaseError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("spectrum {lo}-{hi} MHz is outside the capability of every radio on node {node}")]
    SpectrumUnsupported { node: NodeId, lo: f64, hi: f64 },
    #[error("a gNB image needs at least one base-station node and one UE node")]
    PairingRule,
    #[error("unknown lease {0}")]
    UnknownLease(LeaseId),
    #[error("lease {0} is already terminal ({1:?})")]
    AlreadyTerminal(LeaseId, LeaseState),
    #[error("clock regression: engine at {now}, requested {requested}")]
    ClockRegression { now: u64, requested: u64 },
    #[error("event log: {0}")]
    Log(String),
}

/// One line of the append-only calendar log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LeaseEvent {
    Decided { lease: Lease },
    Transition(LeaseTransition),
}

/// The calendar. All admissions go through `&mut self`, so wrapping the
/// engine in a mutex makes it the single linearization point.
#[derive(Debug, Clone)]
pub struct LeaseEngine {
    inventory: Arc<Inventory>,
    leases: BTreeMap<LeaseId, Lease>,
    next_id: u64,
    now: u64,
    log: Vec<LeaseEvent>,
}

impl LeaseEngine {
    pub fn new(inventory: Arc<Inventory>) -> Self {
        LeaseEngine { inventory, leases: BTreeMap::new(), next_id: 1, now: 0, log: Vec::new() }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn get(&self, id: LeaseId) -> Option<&Lease> {
        self.leases.get(&id)
    }

    /// All leases, including rejected ones, by id.
    pub fn leases(&self) -> impl Iterator<Item = &Lease> {
        self.leases.values()
    }

    pub fn events(&self) -> &[LeaseEvent] {
        &self.log
    }

    fn check_clock(&self, now: u64) -> Result<(), LeaseError> {
        if now < self.now {
            return Err(LeaseError::ClockRegression { now: self.now, requested: now });
        }
        Ok(())
    }

    /// Structural and capability checks that do not depend on the calendar.
    pub fn validate(&self, req: &LeaseRequest, catalog: &ImageCatalog) -> Result<(), LeaseError> {
        if req.interval.start >= req.interval.end {
            return Err(LeaseError::InvalidRequest("interval start must be before end".into()));
        }
        if req.node_ids.is_empty() {
            return Err(LeaseError::InvalidRequest("node set is empty".into()));
        }
        if !(req.spectrum.bandwidth > 0.0) || !req.spectrum.center.is_finite() {
            return Err(LeaseError::InvalidRequest("spectrum bandwidth must be > 0".into()));
        }
        let (lo, hi) = (req.spectrum.lo(), req.spectrum.hi());
        let mut roles = BTreeSet::new();
        for id in &req.node_ids {
            let node = self.inventory.node(id).ok_or_else(|| LeaseError::UnknownNode(id.clone()))?;
            if !node.radios.iter().any(|r| r.supports(lo, hi)) {
                return Err(LeaseError::SpectrumUnsupported { node: id.clone(), lo, hi });
            }
            roles.insert(node.role);
        }
        let mut wants_gnb = false;
        for name in &req.images {
            let image = catalog.resolve(name).map_err(|_| LeaseError::UnknownImage(name.clone()))?;
            wants_gnb |= image.role_tag == RoleTag::GnbRic;
        }
        if wants_gnb && !(roles.contains(&NodeRole::BaseStation) && roles.iter().any(|r| r.is_ue())) {
            return Err(LeaseError::PairingRule);
        }
        Ok(())
    }

    fn sites_of(&self, nodes: &BTreeSet<NodeId>) -> BTreeSet<SiteId> {
        nodes.iter().filter_map(|id| self.inventory.node(id)).map(|n| n.site_id.clone()).collect()
    }

    /// One reason per admitted, non-terminal lease that overlaps `req` in
    /// time and either shares a node or shares a site with overlapping
    /// spectrum.
    pub fn conflicts(&self, req: &LeaseRequest) -> Vec<ConflictReason> {
        let req_sites = self.sites_of(&req.node_ids);
        let mut out = Vec::new();
        for lease in self.leases.values() {
            if lease.state.is_terminal() || !lease.request.interval.overlaps(&req.interval) {
                continue;
            }
            let shared_nodes: Vec<NodeId> = lease.request.node_ids.intersection(&req.node_ids).cloned().collect();
            let spectrum_sites: Vec<SiteId> = if lease.request.spectrum.overlaps(&req.spectrum) {
                self.sites_of(&lease.request.node_ids).intersection(&req_sites).cloned().collect()
            } else {
                Vec::new()
            };
            if !shared_nodes.is_empty() || !spectrum_sites.is_empty() {
                out.push(ConflictReason { lease_id: lease.lease_id, shared_nodes, spectrum_sites });
            }
        }
        out
    }

    /// Judge `req` against the calendar as it stands. Conflicting requests
    /// are recorded as Rejected leases rather than returned as errors.
    pub fn request_lease(&mut self, req: LeaseRequest, catalog: &ImageCatalog, now: u64) -> Result<Lease, LeaseError> {
        self.check_clock(now)?;
        self.validate(&req, catalog)?;
        self.now = now;
        let conflicts = self.conflicts(&req);
        let state = if !conflicts.is_empty() {
            LeaseState::Rejected
        } else if req.interval.contains(now) {
            LeaseState::Active
        } else {
            LeaseState::Requested
        };
        let lease = Lease { lease_id: LeaseId(self.next_id), request: req, state, decided_at: now, conflicts };
        self.next_id += 1;
        self.log.push(LeaseEvent::Decided { lease: lease.clone() });
        self.leases.insert(lease.lease_id, lease.clone());
        Ok(lease)
    }

    /// Activate leases whose start has been reached and expire those whose
    /// end has passed. Transitions are stamped with the boundary they
    /// crossed and returned ordered by (time, lease id).
    pub fn advance_time(&mut self, now: u64) -> Result<Vec<LeaseTransition>, LeaseError> {
        self.check_clock(now)?;
        self.now = now;
        let mut out = Vec::new();
        for lease in self.leases.values() {
            let iv = lease.request.interval;
            let mut state = lease.state;
            if state == LeaseState::Requested && iv.start <= now {
                out.push(LeaseTransition { lease_id: lease.lease_id, from: state, to: LeaseState::Active, at: iv.start });
                state = LeaseState::Active;
            }
            if state == LeaseState::Active && iv.end <= now {
                out.push(LeaseTransition { lease_id: lease.lease_id, from: state, to: LeaseState::Expired, at: iv.end });
            }
        }
        out.sort_by_key(|t| (t.at, t.lease_id));
        for t in &out {
            self.apply(t);
            self.log.push(LeaseEvent::Transition(t.clone()));
        }
        Ok(out)
    }

    fn apply(&mut self, t: &LeaseTransition) {
        if let Some(l) = self.leases.get_mut(&t.lease_id) {
            debug_assert!(l.state.can_become(t.to), "{:?} -> {:?}", l.state, t.to);
            l.state = t.to;
        }
    }

    pub fn terminate_lease(&mut self, id: LeaseId, now: u64) -> Result<Lease, LeaseError> {
        self.check_clock(now)?;
        let lease = self.leases.get(&id).ok_or(LeaseError::UnknownLease(id))?;
        if lease.state.is_terminal() {
            return Err(LeaseError::AlreadyTerminal(id, lease.state));
        }
        self.now = now;
        let t = LeaseTransition { lease_id: id, from: lease.state, to: LeaseState::Terminated, at: now };
        self.apply(&t);
        self.log.push(LeaseEvent::Transition(t));
        Ok(self.leases[&id].clone())
    }

    /// The event log as JSON lines.
    pub fn log_text(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            out.push_str(&serde_json::to_string(e).expect("lease events serialize"));
            out.push('\n');
        }
        out
    }

    /// Rebuild an engine from its event log.
    pub fn replay(inventory: Arc<Inventory>, log: &str) -> Result<LeaseEngine, LeaseError> {
        let mut engine = LeaseEngine::new(inventory);
        for (n, line) in log.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let event: LeaseEvent =
                serde_json::from_str(line).map_err(|e| LeaseError::Log(format!("line {}: {e}", n + 1)))?;
            match &event {
                LeaseEvent::Decided { lease } => {
                    if engine.leases.contains_key(&lease.lease_id) {
                        return Err(LeaseError::Log(format!("line {}: lease {} decided twice", n + 1, lease.lease_id)));
                    }
                    engine.now = engine.now.max(lease.decided_at);
                    engine.next_id = engine.next_id.max(lease.lease_id.0 + 1);
                    engine.leases.insert(lease.lease_id, lease.clone());
                }
                LeaseEvent::Transition(t) => {
                    let current = engine.leases.get(&t.lease_id).map(|l| l.state);
                    if current != Some(t.from) || !t.from.can_become(t.to) {
                        return Err(LeaseError::Log(format!("line {}: illegal transition {:?}", n + 1, t)));
                    }
                    engine.apply(t);
                    if t.to == LeaseState::Terminated {
                        engine.now = engine.now.max(t.at);
                    }
                }
            }
            engine.log.push(event);
        }
        Ok(engine)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine() -> (LeaseEngine, ImageCatalog) {
        (LeaseEngine::new(Arc::new(Inventory::phase1())), ImageCatalog::builtin())
    }

    fn req(nodes: &[&str], center: f64, bw: f64, start: u64, end: u64) -> LeaseRequest {
        LeaseRequest {
            requester: "alice".into(),
            node_ids: nodes.iter().map(|n| NodeId(n.to_string())).collect(),
            spectrum: SpectrumBlock::new(center, bw),
            interval: Interval::new(start, end),
            images: vec![],
        }
    }

    #[test]
    fn first_request_admitted() {
        let (mut e, cat) = engine();
        let mut r = req(&["ag-bs", "ag-ue1"], 3550.0, 100.0, 0, 3_600_000);
        r.images = vec!["gnb-ric".into(), "nrue".into()];
        let l = e.request_lease(r, &cat, 0).unwrap();
        assert_eq!(l.state, LeaseState::Active);
        let l2 = e.request_lease(req(&["curtiss-bs", "curtiss-ue1"], 3550.0, 100.0, 10, 20), &cat, 0).unwrap();
        assert_eq!(l2.state, LeaseState::Requested);
    }

    #[test]
    fn node_overlap_conflicts() {
        let (mut e, cat) = engine();
        e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 0, 10), &cat, 0).unwrap();
        let c = e.conflicts(&req(&["ag-bs"], 900.0, 10.0, 5, 15));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].shared_nodes, vec![NodeId::from("ag-bs")]);
        assert!(c[0].spectrum_sites.is_empty());
    }

    #[test]
    fn adjacent_intervals_do_not_conflict() {
        let (mut e, cat) = engine();
        e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 0, 10), &cat, 0).unwrap();
        assert!(e.conflicts(&req(&["ag-bs"], 3550.0, 10.0, 10, 20)).is_empty());
    }

    #[test]
    fn touching_spectrum_blocks_do_not_conflict() {
        let (mut e, cat) = engine();
        e.request_lease(req(&["ag-ue1"], 3450.0, 100.0, 0, 10), &cat, 0).unwrap();
        assert!(e.conflicts(&req(&["ag-ue2"], 3550.0, 100.0, 0, 10)).is_empty());
        let c = e.conflicts(&req(&["ag-ue2"], 3540.0, 100.0, 0, 10));
        assert_eq!(c[0].spectrum_sites, vec![SiteId::from("ag-farm")]);
    }

    #[test]
    fn co_channel_at_other_site_is_fine() {
        let (mut e, cat) = engine();
        e.request_lease(req(&["ag-ue1"], 3550.0, 100.0, 0, 10), &cat, 0).unwrap();
        assert!(e.conflicts(&req(&["curtiss-ue1"], 3550.0, 100.0, 0, 10)).is_empty());
    }

    #[test]
    fn rejected_requests_are_kept() {
        let (mut e, cat) = engine();
        e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 0, 10), &cat, 0).unwrap();
        let l = e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 5, 15), &cat, 0).unwrap();
        assert_eq!(l.state, LeaseState::Rejected);
        assert_eq!(l.conflicts.len(), 1);
        assert_eq!(e.leases().count(), 2);
        // a rejected lease never blocks anyone
        assert_eq!(e.conflicts(&req(&["ag-bs"], 3550.0, 10.0, 12, 15)).len(), 0);
    }

    #[test]
    fn validation_errors() {
        let (mut e, cat) = engine();
        assert!(matches!(e.request_lease(req(&["nope"], 3550.0, 10.0, 0, 10), &cat, 0), Err(LeaseError::UnknownNode(_))));
        assert!(matches!(
            e.request_lease(req(&["ag-bs"], 3550.0, 250.0, 0, 10), &cat, 0),
            Err(LeaseError::SpectrumUnsupported { .. })
        ));
        assert!(matches!(
            e.request_lease(req(&["ag-ue1"], 3550.0, 150.0, 0, 10), &cat, 0),
            Err(LeaseError::SpectrumUnsupported { .. })
        ));
        assert!(matches!(e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 5, 5), &cat, 0), Err(LeaseError::InvalidRequest(_))));
        assert!(matches!(e.request_lease(req(&[], 3550.0, 10.0, 0, 5), &cat, 0), Err(LeaseError::InvalidRequest(_))));
        let mut bs_only = req(&["ag-bs"], 3550.0, 10.0, 0, 10);
        bs_only.images = vec!["gnb-ric".into()];
        assert_eq!(e.request_lease(bs_only, &cat, 0), Err(LeaseError::PairingRule));
        let mut bad_img = req(&["ag-bs"], 3550.0, 10.0, 0, 10);
        bad_img.images = vec!["nope".into()];
        assert!(matches!(e.request_lease(bad_img, &cat, 0), Err(LeaseError::UnknownImage(_))));
        assert_eq!(e.leases().count(), 0);
    }

    #[test]
    fn boundaries_activate_and_expire() {
        let (mut e, cat) = engine();
        let id = e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 5, 10), &cat, 0).unwrap().lease_id;
        assert!(e.advance_time(4).unwrap().is_empty());
        let t = e.advance_time(5).unwrap();
        assert_eq!(t, vec![LeaseTransition { lease_id: id, from: LeaseState::Requested, to: LeaseState::Active, at: 5 }]);
        let t = e.advance_time(10).unwrap();
        assert_eq!(t[0].to, LeaseState::Expired);
        assert_eq!(e.get(id).unwrap().state, LeaseState::Expired);
    }

    #[test]
    fn skipped_lease_gets_both_transitions() {
        let (mut e, cat) = engine();
        let id = e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 0, 10), &cat, 0).unwrap().lease_id;
        assert_eq!(e.get(id).unwrap().state, LeaseState::Active);
        let (mut e2, _) = engine();
        e2.request_lease(req(&["ag-bs"], 3550.0, 10.0, 5, 10), &cat, 0).unwrap();
        let t = e2.advance_time(100).unwrap();
        assert_eq!(t.iter().map(|t| (t.to, t.at)).collect::<Vec<_>>(), vec![(LeaseState::Active, 5), (LeaseState::Expired, 10)]);
    }

    #[test]
    fn clock_regression_leaves_state() {
        let (mut e, cat) = engine();
        e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 5, 10), &cat, 0).unwrap();
        e.advance_time(7).unwrap();
        assert!(matches!(e.advance_time(6), Err(LeaseError::ClockRegression { .. })));
        assert_eq!(e.now(), 7);
    }

    #[test]
    fn terminate_guards() {
        let (mut e, cat) = engine();
        let a = e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 0, 10), &cat, 0).unwrap().lease_id;
        let b = e.request_lease(req(&["ag-ue1"], 900.0, 10.0, 50, 60), &cat, 0).unwrap().lease_id;
        assert_eq!(e.terminate_lease(a, 1).unwrap().state, LeaseState::Terminated);
        assert_eq!(e.terminate_lease(b, 1).unwrap().state, LeaseState::Terminated);
        assert_eq!(e.terminate_lease(a, 2), Err(LeaseError::AlreadyTerminal(a, LeaseState::Terminated)));
        assert_eq!(e.terminate_lease(LeaseId(99), 2), Err(LeaseError::UnknownLease(LeaseId(99))));
        let c = e.request_lease(req(&["curtiss-bs"], 900.0, 10.0, 0, 5), &cat, 2).unwrap().lease_id;
        e.advance_time(5).unwrap();
        assert!(matches!(e.terminate_lease(c, 5), Err(LeaseError::AlreadyTerminal(_, LeaseState::Expired))));
    }

    #[test]
    fn log_replays_byte_identically() {
        let (mut e, cat) = engine();
        e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 0, 10), &cat, 0).unwrap();
        e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 5, 15), &cat, 0).unwrap();
        let id = e.request_lease(req(&["ag-ue1"], 3550.5, 0.25, 20, 40), &cat, 1).unwrap().lease_id;
        e.advance_time(12).unwrap();
        e.terminate_lease(id, 13).unwrap();
        let log = e.log_text();
        let r = LeaseEngine::replay(Arc::new(Inventory::phase1()), &log).unwrap();
        assert_eq!(r.log_text(), log);
        assert_eq!(r.leases().cloned().collect::<Vec<_>>(), e.leases().cloned().collect::<Vec<_>>());
        assert_eq!(r.now(), e.now());
    }

    #[test]
    fn replay_rejects_illegal_transition() {
        let (mut e, cat) = engine();
        e.request_lease(req(&["ag-bs"], 3550.0, 10.0, 0, 10), &cat, 0).unwrap();
        let log = e.log_text() + r#"{"event":"transition","lease_id":1,"from":"Requested","to":"Expired","at":3}"#;
        assert!(matches!(LeaseEngine::replay(Arc::new(Inventory::phase1()), &log), Err(LeaseError::Log(_))));
    }
}
