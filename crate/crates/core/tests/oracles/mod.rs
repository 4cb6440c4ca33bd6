//! Brute-force reference implementations used to check the real code,
//! plus the generators and drivers that run both side by side. The
//! reference modules never call into the logic they check.
#![allow(dead_code)]

pub mod lease {
    use std::collections::BTreeSet;

    #[derive(Debug, Clone)]
    pub struct Req {
        pub nodes: BTreeSet<String>,
        pub sites: BTreeSet<String>,
        pub center: f64,
        pub bandwidth: f64,
        pub start: u64,
        pub end: u64,
    }

    fn time_overlap(a: &Req, b: &Req) -> bool {
        a.start < b.end && b.start < a.end
    }

    fn spectrum_overlap(a: &Req, b: &Req) -> bool {
        (a.center - b.center).abs() < (a.bandwidth + b.bandwidth) / 2.0
    }

    pub fn clash(a: &Req, b: &Req) -> bool {
        time_overlap(a, b)
            && (!a.nodes.is_disjoint(&b.nodes) || (spectrum_overlap(a, b) && !a.sites.is_disjoint(&b.sites)))
    }

    /// First-come first-served: each request is checked pairwise against
    /// every earlier accepted one.
    pub fn admit_all(reqs: &[Req]) -> Vec<bool> {
        let mut accepted: Vec<&Req> = Vec::new();
        let mut out = Vec::new();
        for r in reqs {
            let ok = accepted.iter().all(|a| !clash(a, r));
            if ok {
                accepted.push(r);
            }
            out.push(ok);
        }
        out
    }

    /// Walk every interval start and report any instant where two accepted
    /// leases hold the same node or overlapping spectrum at one site.
    pub fn sweep(accepted: &[Req]) -> Vec<String> {
        let mut instants: Vec<u64> = accepted.iter().map(|r| r.start).collect();
        instants.sort_unstable();
        instants.dedup();
        let mut problems = Vec::new();
        for t in instants {
            let live: Vec<&Req> = accepted.iter().filter(|r| r.start <= t && t < r.end).collect();
            for (i, a) in live.iter().enumerate() {
                for b in &live[i + 1..] {
                    if let Some(n) = a.nodes.intersection(&b.nodes).next() {
                        problems.push(format!("t={t}: node {n} double-booked"));
                    }
                    if spectrum_overlap(a, b) {
                        if let Some(s) = a.sites.intersection(&b.sites).next() {
                            problems.push(format!("t={t}: overlapping spectrum at {s}"));
                        }
                    }
                }
            }
        }
        problems
    }

    /// Random valid requests on the phase-1 deployment, all submitted at
    /// t=0, checked against [`admit_all`] and [`sweep`]. Returns the
    /// number admitted.
    pub fn run(seed: u64, n: usize) -> Result<usize, String> {
        use std::sync::Arc;

        use ara_core::inventory::{Inventory, NodeId};
        use ara_core::lease::{Interval, LeaseEngine, LeaseRequest, LeaseState, SpectrumBlock};
        use ara_core::provisioner::ImageCatalog;
        use rand::{Rng, SeedableRng};

        let inv = Arc::new(Inventory::phase1());
        let catalog = ImageCatalog::builtin();
        let ids: Vec<NodeId> = inv.nodes().map(|n| n.node_id.clone()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut engine = LeaseEngine::new(inv.clone());
        let mut refs = Vec::with_capacity(n);
        let mut got = Vec::with_capacity(n);
        for i in 0..n {
            let k = rng.random_range(1..=3);
            let mut nodes = BTreeSet::new();
            while nodes.len() < k {
                nodes.insert(ids[rng.random_range(0..ids.len())].clone());
            }
            let center = rng.random_range(3400.0..3700.0);
            let bandwidth = rng.random_range(10.0..100.0);
            let start = rng.random_range(0..20_000u64);
            let end = start + rng.random_range(1..4_000u64);
            let req = LeaseRequest {
                requester: format!("user{}", i % 7),
                node_ids: nodes.clone(),
                spectrum: SpectrumBlock::new(center, bandwidth),
                interval: Interval::new(start, end),
                images: Vec::new(),
            };
            let lease = engine.request_lease(req, &catalog, 0).map_err(|e| format!("request {i}: {e}"))?;
            got.push(lease.state != LeaseState::Rejected);
            refs.push(Req {
                sites: nodes.iter().map(|id| inv.node(id).unwrap().site_id.0.clone()).collect(),
                nodes: nodes.into_iter().map(|n| n.0).collect(),
                center,
                bandwidth,
                start,
                end,
            });
        }
        let want = admit_all(&refs);
        if let Some(i) = (0..n).find(|&i| want[i] != got[i]) {
            return Err(format!("request {i}: engine admitted={} oracle admitted={}", got[i], want[i]));
        }
        let accepted: Vec<Req> = refs.into_iter().zip(&got).filter(|(_, ok)| **ok).map(|(r, _)| r).collect();
        let problems = sweep(&accepted);
        if let Some(p) = problems.first() {
            return Err(p.clone());
        }
        Ok(accepted.len())
    }
}

pub mod fsm {
    //! Table-driven reference for the E2-lite connection state machine.
    use std::collections::{BTreeMap, BTreeSet};

    use ara_core::e2::{E2ConnectionState, E2Message, MessageKind, Phase, Side};
    use ara_core::metrics::MetricSet;

    pub const OUT_OF_PHASE: u16 = 1;
    pub const NON_MONOTONIC: u16 = 2;
    pub const UNKNOWN_SUB: u16 = 3;

    /// (receiving side, phase, kind) triples that are legal, with the phase
    /// afterwards. Disconnect and ProtocolError are legal everywhere except
    /// Closed and handled separately.
    pub const TABLE: &[(Side, Phase, MessageKind, Phase)] = &[
        (Side::Ric, Phase::Idle, MessageKind::Setup, Phase::Established),
        (Side::Ric, Phase::Established, MessageKind::SubscriptionResponse, Phase::Established),
        (Side::Ric, Phase::Established, MessageKind::Indication, Phase::Established),
        (Side::Ric, Phase::Established, MessageKind::ControlAck, Phase::Established),
        (Side::Agent, Phase::SetupPending, MessageKind::SetupAck, Phase::Established),
        (Side::Agent, Phase::Established, MessageKind::SubscriptionRequest, Phase::Established),
        (Side::Agent, Phase::Established, MessageKind::ControlRequest, Phase::Established),
    ];

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct RefConn {
        pub phase: Phase,
        pub subs: BTreeSet<u32>,
        pub pending: BTreeSet<u32>,
        pub last_seq: BTreeMap<u32, u64>,
        pub errors: u32,
        pub peer_errors: u32,
        pub offered: MetricSet,
    }

    impl RefConn {
        pub fn new(offered: MetricSet) -> Self {
            RefConn {
                phase: Phase::Idle,
                subs: BTreeSet::new(),
                pending: BTreeSet::new(),
                last_seq: BTreeMap::new(),
                errors: 0,
                peer_errors: 0,
                offered,
            }
        }

        pub fn of(s: &E2ConnectionState) -> Self {
            RefConn {
                phase: s.phase,
                subs: s.subscriptions.keys().copied().collect(),
                pending: s.pending.keys().copied().collect(),
                last_seq: s.last_seq.clone(),
                errors: s.errors,
                peer_errors: s.peer_errors,
                offered: s.ran_functions,
            }
        }

        fn close(&mut self) {
            self.phase = Phase::Closed;
            self.subs.clear();
            self.pending.clear();
        }
    }

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct RefOutcome {
        pub next: RefConn,
        pub replies: Vec<MessageKind>,
        pub error: Option<u16>,
    }

    pub fn legal(side: Side, phase: Phase, kind: MessageKind) -> Option<Phase> {
        TABLE.iter().find(|(s, p, k, _)| *s == side && *p == phase && *k == kind).map(|e| e.3)
    }

    pub fn receive(side: Side, conn: &RefConn, msg: &E2Message) -> RefOutcome {
        let mut c = conn.clone();
        let mut replies = Vec::new();
        let mut error = None;
        if c.phase == Phase::Closed {
            return RefOutcome { next: c, replies, error };
        }
        let kind = msg.kind();
        if kind == MessageKind::Disconnect {
            c.close();
            return RefOutcome { next: c, replies, error };
        }
        if kind == MessageKind::ProtocolError {
            c.peer_errors += 1;
            return RefOutcome { next: c, replies, error };
        }
        let Some(next_phase) = legal(side, c.phase, kind) else {
            c.errors += 1;
            return RefOutcome { next: c, replies: vec![MessageKind::ProtocolError], error: Some(OUT_OF_PHASE) };
        };
        let mut fail = |c: &mut RefConn, code: u16| {
            c.errors += 1;
            error = Some(code);
            vec![MessageKind::ProtocolError]
        };
        match msg {
            E2Message::Setup { ran_functions, .. } => {
                c.offered = ran_functions
                    .iter()
                    .filter_map(|b| ara_core::metrics::Layer::from_id(*b))
                    .fold(MetricSet::EMPTY, MetricSet::with);
                replies.push(MessageKind::SetupAck);
            }
            E2Message::SubscriptionResponse { sub_id, accepted, .. } => {
                if c.pending.remove(sub_id) {
                    if *accepted {
                        c.subs.insert(*sub_id);
                    }
                } else {
                    replies = fail(&mut c, UNKNOWN_SUB);
                }
            }
            E2Message::Indication { sub_id, seq, .. } => {
                if !c.subs.contains(sub_id) {
                    replies = fail(&mut c, UNKNOWN_SUB);
                } else if c.last_seq.get(sub_id).is_some_and(|l| seq <= l) {
                    replies = fail(&mut c, NON_MONOTONIC);
                } else {
                    c.last_seq.insert(*sub_id, *seq);
                }
            }
            E2Message::SubscriptionRequest { sub_id, spec } => {
                replies.push(MessageKind::SubscriptionResponse);
                if !c.subs.contains(sub_id) && spec.metric_set.is_subset(c.offered) {
                    c.subs.insert(*sub_id);
                }
            }
            E2Message::ControlRequest { .. } => replies.push(MessageKind::ControlAck),
            _ => {}
        }
        if error.is_none() {
            c.phase = next_phase;
        }
        RefOutcome { next: c, replies, error }
    }

    /// Bookkeeping a side does when it sends a legal message.
    pub fn send(side: Side, conn: &RefConn, msg: &E2Message) -> RefConn {
        let mut c = conn.clone();
        match (side, msg) {
            (_, E2Message::Disconnect { .. }) => c.close(),
            (Side::Agent, E2Message::Setup { .. }) => c.phase = Phase::SetupPending,
            (Side::Agent, E2Message::Indication { sub_id, seq, .. }) => {
                c.last_seq.insert(*sub_id, *seq);
            }
            (Side::Ric, E2Message::SubscriptionRequest { sub_id, .. }) => {
                c.pending.insert(*sub_id);
            }
            _ => {}
        }
        c
    }
}

pub mod reporter {
    //! Expected indications for one subscription, computed by grouping
    //! samples into their report buckets.
    use std::collections::BTreeMap;

    use ara_core::e2::SubscriptionSpec;
    use ara_core::metrics::MetricSample;

    /// (close time, samples) in emission order, given the subscription time
    /// and the last reporting instant.
    pub fn expected(spec: &SubscriptionSpec, subscribed_at: u64, samples: &[MetricSample], until: u64) -> Vec<(u64, Vec<MetricSample>)> {
        let p = u64::from(spec.report_period_ms);
        let first_close = (subscribed_at / p + 1) * p;
        let mut buckets: BTreeMap<u64, Vec<MetricSample>> = BTreeMap::new();
        for s in samples {
            if s.t < subscribed_at || !spec.matches(s) {
                continue;
            }
            let close = s.t.div_ceil(p).saturating_mul(p).max(first_close);
            if close <= until {
                buckets.entry(close).or_default().push(s.clone());
            }
        }
        buckets.into_iter().collect()
    }
}

pub mod threshold {
    /// Scalar replay of the rolling-mean rule: returns (cell, t) of every
    /// firing, in input order.
    pub fn replay(stream: &[(String, u64, f64)], n: usize, theta: f64, cooldown: u64) -> Vec<(String, u64)> {
        let mut history: std::collections::HashMap<&str, Vec<f64>> = Default::default();
        let mut last: std::collections::HashMap<&str, u64> = Default::default();
        let mut out = Vec::new();
        for (cell, t, v) in stream {
            let h = history.entry(cell).or_default();
            h.push(*v);
            if h.len() < n {
                continue;
            }
            let window = &h[h.len() - n..];
            let mean = window.iter().sum::<f64>() / n as f64;
            let cooled = last.get(cell.as_str()).is_none_or(|l| *t >= l + cooldown);
            if mean > theta && cooled {
                last.insert(cell, *t);
                out.push((cell.clone(), *t));
            }
        }
        out
    }
}

pub mod fifo {
    use std::collections::BTreeMap;

    /// Group seq numbers by subscription in invocation order and check each
    /// list equals its sorted form and runs 1, 2, 3, ... without gaps.
    pub fn check(log: &[(u32, u64)]) -> Result<usize, String> {
        let mut per: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        for (sub, seq) in log {
            per.entry(*sub).or_default().push(*seq);
        }
        for (sub, seqs) in &per {
            let mut sorted = seqs.clone();
            sorted.sort_unstable();
            if &sorted != seqs {
                return Err(format!("sub {sub}: delivery order differs from seq order"));
            }
            let expect: Vec<u64> = (1..=seqs.len() as u64).collect();
            if sorted != expect {
                return Err(format!("sub {sub}: seq has gaps or duplicates"));
            }
        }
        Ok(per.len())
    }
}

pub mod stats {
    pub fn median(values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }
}

pub mod vectors {
    use ara_core::e2::{decode, DecodeError, E2Message};
    use serde::Deserialize;

    pub const FILE: &str = include_str!("../../../../testdata/e2-vectors.json");

    #[derive(Debug, Deserialize)]
    pub struct Vector {
        pub name: String,
        pub hex: String,
        #[serde(default)]
        pub expect: Option<E2Message>,
        #[serde(default)]
        pub error: Option<String>,
    }

    pub fn load() -> Vec<Vector> {
        serde_json::from_str(FILE).expect("vector file parses")
    }

    fn error_name(e: &DecodeError) -> String {
        let dbg = format!("{e:?}");
        dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default().to_string()
    }

    /// Names of vectors that do not decode as described.
    pub fn failures(vs: &[Vector]) -> Vec<String> {
        let mut bad = Vec::new();
        for v in vs {
            let bytes = hex::decode(&v.hex).expect("vector hex");
            let got = decode(&bytes);
            let ok = match (&v.expect, &v.error, &got) {
                (Some(m), None, Ok((msg, used))) => msg == m && *used == bytes.len(),
                (None, Some(name), Err(e)) => &error_name(e) == name,
                _ => false,
            };
            if !ok {
                bad.push(format!("{}: {:?}", v.name, got.map(|(m, _)| m)));
            }
        }
        bad
    }
}

pub mod telemetry {
    use ara_core::telemetry::TelemetryRecord;

    /// Stable sort of the accepted insert log by t, then filter.
    pub fn query(log: &[TelemetryRecord], kind: &str, source: Option<&str>, start: u64, end: u64) -> Vec<TelemetryRecord> {
        let mut v: Vec<(usize, &TelemetryRecord)> = log
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                let (k, src, t) = match r {
                    TelemetryRecord::Weather(w) => ("weather", w.site_id.as_str(), w.t),
                    TelemetryRecord::Spectrum(s) => ("spectrum", s.node_id.as_str(), s.t),
                };
                k == kind && source.is_none_or(|s| s == src) && start <= t && t < end
            })
            .collect();
        v.sort_by_key(|(i, r)| {
            let t = match r {
                TelemetryRecord::Weather(w) => w.t,
                TelemetryRecord::Spectrum(s) => s.t,
            };
            (t, *i)
        });
        v.into_iter().map(|(_, r)| r.clone()).collect()
    }
}

pub mod gen {
    //! Random E2 messages.
    use ara_core::e2::{ControlOutcome, E2Message, SubscriptionSpec};
    use ara_core::metrics::{Layer, MetricSample, MetricSet};
    use proptest::prelude::*;

    pub fn text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 _\\-éü漢]{0,24}"
    }

    pub fn layer() -> impl Strategy<Value = Layer> {
        prop_oneof![Just(Layer::Rlc), Just(Layer::Pdcp), Just(Layer::Mac)]
    }

    pub fn metric_set() -> impl Strategy<Value = MetricSet> {
        proptest::collection::vec(layer(), 1..4).prop_map(|ls| MetricSet::of(&ls))
    }

    pub fn sample() -> impl Strategy<Value = MetricSample> {
        (any::<u64>(), layer(), 0.0f64..1.0e6, text(), text()).prop_map(|(t, layer, latency, ue_id, cell_id)| MetricSample {
            t,
            layer,
            latency,
            ue_id,
            cell_id,
        })
    }

    pub fn message() -> impl Strategy<Value = E2Message> {
        prop_oneof![
            (text(), proptest::collection::vec(any::<u8>(), 0..8))
                .prop_map(|(agent_id, ran_functions)| E2Message::Setup { agent_id, ran_functions }),
            text().prop_map(|ric_id| E2Message::SetupAck { ric_id }),
            (any::<u32>(), 1u32.., metric_set(), proptest::option::of(text())).prop_map(|(sub_id, p, m, cell)| {
                E2Message::SubscriptionRequest {
                    sub_id,
                    spec: SubscriptionSpec { report_period_ms: p, metric_set: m, cell_filter: cell },
                }
            }),
            (any::<u32>(), any::<bool>(), text())
                .prop_map(|(sub_id, accepted, reason)| E2Message::SubscriptionResponse { sub_id, accepted, reason }),
            (any::<u32>(), any::<u64>(), proptest::collection::vec(sample(), 0..12))
                .prop_map(|(sub_id, seq, samples)| E2Message::Indication { sub_id, seq, samples }),
            (any::<u32>(), text(), proptest::collection::vec(any::<u8>(), 0..32))
                .prop_map(|(ctrl_id, target_cell, action)| E2Message::ControlRequest { ctrl_id, target_cell, action }),
            (any::<u32>(), prop_oneof![Just(ControlOutcome::Applied), Just(ControlOutcome::Rejected), Just(ControlOutcome::Unsupported)])
                .prop_map(|(ctrl_id, outcome)| E2Message::ControlAck { ctrl_id, outcome }),
            any::<u8>().prop_map(|reason| E2Message::Disconnect { reason }),
            (any::<u16>(), text()).prop_map(|(code, detail)| E2Message::ProtocolError { code, detail }),
        ]
    }
}

pub mod fsm_drive {
    //! Runs the real state machine next to [`super::fsm`].
    use ara_core::e2::{handle, on_send, ControlOutcome, E2ConnectionState, E2Message, MessageKind, Phase, Side, SubscriptionSpec};
    use ara_core::metrics::{Layer, MetricSample, MetricSet};
    use proptest::prelude::*;
    use proptest::test_runner::TestCaseError;

    use super::fsm::{self, RefConn};

    pub const PHASES: [Phase; 4] = [Phase::Idle, Phase::SetupPending, Phase::Established, Phase::Closed];

    fn sample(t: u64) -> MetricSample {
        MetricSample { t, layer: Layer::Mac, latency: 3.0, ue_id: "ue".into(), cell_id: "c".into() }
    }

    pub fn canonical(kind: MessageKind, sub_id: u32, seq: u64) -> E2Message {
        match kind {
            MessageKind::Setup => E2Message::Setup { agent_id: "a".into(), ran_functions: vec![1, 2, 3] },
            MessageKind::SetupAck => E2Message::SetupAck { ric_id: "r".into() },
            MessageKind::SubscriptionRequest => {
                E2Message::SubscriptionRequest { sub_id, spec: SubscriptionSpec::new(100, MetricSet::of(&[Layer::Mac])) }
            }
            MessageKind::SubscriptionResponse => E2Message::SubscriptionResponse { sub_id, accepted: true, reason: String::new() },
            MessageKind::Indication => E2Message::Indication { sub_id, seq, samples: vec![sample(seq)] },
            MessageKind::ControlRequest => E2Message::ControlRequest { ctrl_id: 1, target_cell: "c".into(), action: vec![] },
            MessageKind::ControlAck => E2Message::ControlAck { ctrl_id: 1, outcome: ControlOutcome::Applied },
            MessageKind::Disconnect => E2Message::Disconnect { reason: 0 },
            MessageKind::ProtocolError => E2Message::protocol_error(1, "x"),
        }
    }

    /// A state in `phase` with one active subscription (1, last seq 5) and
    /// one pending (2).
    pub fn seeded(side: Side, phase: Phase) -> E2ConnectionState {
        let mut s = match side {
            Side::Agent => E2ConnectionState::agent("a", MetricSet::ALL),
            Side::Ric => E2ConnectionState::ric("r"),
        };
        s.phase = phase;
        if phase == Phase::Established {
            let spec = SubscriptionSpec::new(100, MetricSet::of(&[Layer::Mac]));
            s.subscriptions.insert(1, spec.clone());
            s.last_seq.insert(1, 5);
            if side == Side::Ric {
                s.pending.insert(2, spec);
                s.ran_functions = MetricSet::ALL;
            }
        }
        s
    }

    fn error_code(msgs: &[E2Message]) -> Option<u16> {
        msgs.iter().find_map(|m| match m {
            E2Message::ProtocolError { code, .. } => Some(*code),
            _ => None,
        })
    }

    pub fn compare(side: Side, state: &E2ConnectionState, msg: &E2Message) -> Result<(), String> {
        let got = handle(state, side, msg);
        let want = fsm::receive(side, &RefConn::of(state), msg);
        let got_kinds: Vec<MessageKind> = got.outgoing.iter().map(E2Message::kind).collect();
        if RefConn::of(&got.state) != want.next {
            return Err(format!("state: got {:?} want {:?}", RefConn::of(&got.state), want.next));
        }
        if got_kinds != want.replies {
            return Err(format!("replies: got {got_kinds:?} want {:?}", want.replies));
        }
        if error_code(&got.outgoing) != want.error {
            return Err(format!("error code: got {:?} want {:?}", error_code(&got.outgoing), want.error));
        }
        Ok(())
    }

    /// Every (side, phase, kind) with a known in-order, known repeated,
    /// pending and unknown subscription id. Returns the number of cases.
    pub fn all_pairs() -> Result<usize, String> {
        let mut cases = 0;
        for side in [Side::Agent, Side::Ric] {
            for phase in PHASES {
                for kind in MessageKind::ALL {
                    for (sub, seq) in [(1, 6), (1, 5), (2, 1), (9, 1)] {
                        let st = seeded(side, phase);
                        compare(side, &st, &canonical(kind, sub, seq))
                            .map_err(|e| format!("{side:?} {phase:?} {kind:?} sub={sub} seq={seq}: {e}"))?;
                        cases += 1;
                    }
                }
            }
        }
        Ok(cases)
    }

    #[derive(Debug, Clone)]
    pub enum Step {
        AgentSetup,
        Subscribe(u8),
        Indicate(u8, u8),
        Control,
        AgentDisconnect,
        RicDisconnect,
        /// Injected straight into a receiver, bypassing `on_send`.
        Garbage(u8, bool),
    }

    pub fn step() -> impl Strategy<Value = Step> {
        prop_oneof![
            3 => Just(Step::AgentSetup),
            3 => (1u8..15).prop_map(Step::Subscribe),
            6 => (0u8..4, 1u8..3).prop_map(|(s, g)| Step::Indicate(s, g)),
            2 => Just(Step::Control),
            1 => Just(Step::AgentDisconnect),
            1 => Just(Step::RicDisconnect),
            1 => (1u8..=9, any::<bool>()).prop_map(|(k, to_ric)| Step::Garbage(k, to_ric)),
        ]
    }

    pub fn trace() -> impl Strategy<Value = Vec<Step>> {
        proptest::collection::vec(step(), 0..=20)
    }

    struct Pair {
        agent: E2ConnectionState,
        ric: E2ConnectionState,
        ref_agent: RefConn,
        ref_ric: RefConn,
        next_sub: u32,
    }

    fn other(s: Side) -> Side {
        match s {
            Side::Agent => Side::Ric,
            Side::Ric => Side::Agent,
        }
    }

    impl Pair {
        fn sides(&mut self, side: Side) -> (&mut E2ConnectionState, &mut RefConn) {
            match side {
                Side::Agent => (&mut self.agent, &mut self.ref_agent),
                Side::Ric => (&mut self.ric, &mut self.ref_ric),
            }
        }

        fn deliver(&mut self, to: Side, m: &E2Message) -> Result<Vec<E2Message>, TestCaseError> {
            let (recv, ref_recv) = self.sides(to);
            let t = handle(recv, to, m);
            let want = fsm::receive(to, ref_recv, m);
            prop_assert_eq!(RefConn::of(&t.state), want.next.clone());
            *recv = t.state;
            *ref_recv = want.next;
            Ok(t.outgoing)
        }

        /// Send from `from`, deliver to the other side, then deliver any
        /// replies back, checking real and reference at every hop.
        fn exchange(&mut self, from: Side, msg: E2Message) -> Result<(), TestCaseError> {
            let (sender, ref_sender) = self.sides(from);
            let Ok(next) = on_send(sender, from, &msg) else { return Ok(()) };
            *sender = next;
            *ref_sender = fsm::send(from, ref_sender, &msg);
            let mut queue = vec![(other(from), msg)];
            while let Some((to, m)) = queue.pop() {
                for reply in self.deliver(to, &m)? {
                    let (recv, ref_recv) = self.sides(to);
                    if let Ok(n) = on_send(recv, to, &reply) {
                        *recv = n;
                        *ref_recv = fsm::send(to, ref_recv, &reply);
                    }
                    queue.push((other(to), reply));
                }
            }
            Ok(())
        }
    }

    /// Play `steps` on a connected agent/RIC pair and require the real
    /// and reference states to agree after every hop and at the end.
    pub fn run_trace(steps: Vec<Step>) -> Result<(), TestCaseError> {
        let offered = MetricSet::of(&[Layer::Mac, Layer::Rlc]);
        let mut p = Pair {
            agent: E2ConnectionState::agent("a", offered),
            ric: E2ConnectionState::ric("r"),
            ref_agent: RefConn::new(offered),
            ref_ric: RefConn::new(MetricSet::EMPTY),
            next_sub: 1,
        };
        let clean = !steps.iter().any(|s| matches!(s, Step::Garbage(..)));
        for s in steps {
            match s {
                Step::AgentSetup => p.exchange(Side::Agent, canonical(MessageKind::Setup, 0, 0))?,
                Step::Subscribe(bits) => {
                    let set = Layer::ALL
                        .into_iter()
                        .enumerate()
                        .filter(|(i, _)| bits & (1 << i) != 0)
                        .fold(MetricSet::EMPTY, |m, (_, l)| m.with(l));
                    let sub_id = p.next_sub;
                    p.next_sub += 1;
                    p.exchange(Side::Ric, E2Message::SubscriptionRequest { sub_id, spec: SubscriptionSpec::new(100, set) })?;
                }
                Step::Indicate(pick, gap) => {
                    let subs: Vec<u32> = p.agent.subscriptions.keys().copied().collect();
                    if let Some(&sub_id) = subs.get(pick as usize % subs.len().max(1)) {
                        let seq = p.agent.last_seq.get(&sub_id).copied().unwrap_or(0) + u64::from(gap);
                        p.exchange(Side::Agent, E2Message::Indication { sub_id, seq, samples: vec![sample(seq)] })?;
                    }
                }
                Step::Control => p.exchange(Side::Ric, canonical(MessageKind::ControlRequest, 0, 0))?,
                Step::AgentDisconnect => p.exchange(Side::Agent, canonical(MessageKind::Disconnect, 0, 0))?,
                Step::RicDisconnect => p.exchange(Side::Ric, canonical(MessageKind::Disconnect, 0, 0))?,
                Step::Garbage(k, to_ric) => {
                    let to = if to_ric { Side::Ric } else { Side::Agent };
                    p.deliver(to, &canonical(MessageKind::from_u8(k).unwrap(), 99, 1))?;
                }
            }
        }
        prop_assert_eq!(RefConn::of(&p.agent), p.ref_agent.clone());
        prop_assert_eq!(RefConn::of(&p.ric), p.ref_ric.clone());
        // garbage can leave the sides disagreeing on subscriptions
        if clean && p.agent.phase == Phase::Established && p.ric.phase == Phase::Established {
            prop_assert_eq!(p.agent.subscriptions.keys().collect::<Vec<_>>(), p.ric.subscriptions.keys().collect::<Vec<_>>());
        }
        Ok(())
    }
}
