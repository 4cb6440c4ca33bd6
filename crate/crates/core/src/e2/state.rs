//! Per-connection E2-lite state machine.
//!
//! [`handle`] is the pure receive-side transition function; [`on_send`]
//! records the effect of messages a side originates (opening Setup, RIC
//! subscription requests, agent indications, Disconnect).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{error_code, ControlOutcome, E2Message, SubscriptionSpec};
use crate::metrics::{Layer, MetricSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    SetupPending,
    Established,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Agent,
    Ric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct E2ConnectionState {
    pub phase: Phase,
    /// Id this side announces (agent id or RIC id).
    pub local_id: String,
    /// Id learned from the peer's Setup or SetupAck.
    pub peer_id: Option<String>,
    /// Metric sets the agent declared. On the agent side these are fixed at
    /// construction; the RIC learns them from Setup.
    pub ran_functions: MetricSet,
    pub subscriptions: BTreeMap<u32, SubscriptionSpec>,
    /// RIC side: requests sent but not yet answered.
    pub pending: BTreeMap<u32, SubscriptionSpec>,
    /// Highest seq seen (RIC) or sent (agent) per subscription.
    pub last_seq: BTreeMap<u32, u64>,
    /// ProtocolErrors this side emitted.
    pub errors: u32,
    /// ProtocolErrors received from the peer.
    pub peer_errors: u32,
}

impl E2ConnectionState {
    pub fn agent(agent_id: impl Into<String>, functions: MetricSet) -> Self {
        E2ConnectionState {
            phase: Phase::Idle,
            local_id: agent_id.into(),
            peer_id: None,
            ran_functions: functions,
            subscriptions: BTreeMap::new(),
            pending: BTreeMap::new(),
            last_seq: BTreeMap::new(),
            errors: 0,
            peer_errors: 0,
        }
    }

    pub fn ric(ric_id: impl Into<String>) -> Self {
        E2ConnectionState::agent(ric_id, MetricSet::EMPTY)
    }

    fn close(&mut self) {
        self.phase = Phase::Closed;
        self.subscriptions.clear();
        self.pending.clear();
    }
}

/// Side effect of a received message, for the owner of the connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    None,
    /// Setup completed (RIC received Setup, or agent received SetupAck).
    Established,
    /// RIC: an in-order indication for an active subscription; hand it on.
    Deliver { sub_id: u32, seq: u64 },
    /// Agent: a subscription request was accepted and is now active.
    SubscriptionActivated(u32),
    /// RIC: the agent accepted a pending subscription.
    SubscriptionAccepted(u32),
    /// RIC: the agent refused a pending subscription.
    SubscriptionRejected(u32, String),
    /// Agent: a control request arrived and was acknowledged.
    ControlReceived(u32),
    /// RIC: the agent acknowledged a control request.
    ControlAcked(u32, ControlOutcome),
    /// A ProtocolError was emitted; the message was dropped.
    Rejected(u16),
    PeerError(u16),
    Closed,
    /// Message arrived after Closed and was discarded.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: E2ConnectionState,
    pub outgoing: Vec<E2Message>,
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("cannot send {kind} in phase {phase:?}")]
    OutOfPhase { kind: &'static str, phase: Phase },
    #[error("sub_id {0} already in use on this connection")]
    DuplicateSubscription(u32),
    #[error("sub_id {0} is not active")]
    UnknownSubscription(u32),
    #[error("seq {seq} not above last seq {last} for sub {sub_id}")]
    NonMonotonicSeq { sub_id: u32, seq: u64, last: u64 },
    #[error("{0} is not sent by this side")]
    WrongDirection(&'static str),
}

fn kind_name(msg: &E2Message) -> &'static str {
    match msg {
        E2Message::Setup { .. } => "Setup",
        E2Message::SetupAck { .. } => "SetupAck",
        E2Message::SubscriptionRequest { .. } => "SubscriptionRequest",
        E2Message::SubscriptionResponse { .. } => "SubscriptionResponse",
        E2Message::Indication { .. } => "Indication",
        E2Message::ControlRequest { .. } => "ControlRequest",
        E2Message::ControlAck { .. } => "ControlAck",
        E2Message::Disconnect { .. } => "Disconnect",
        E2Message::ProtocolError { .. } => "ProtocolError",
    }
}

fn reject(mut state: E2ConnectionState, code: u16, detail: String) -> Transition {
    state.errors += 1;
    Transition { state, outgoing: vec![E2Message::protocol_error(code, detail)], effect: Effect::Rejected(code) }
}

fn ok(state: E2ConnectionState, outgoing: Vec<E2Message>, effect: Effect) -> Transition {
    Transition { state, outgoing, effect }
}

/// Receive-side transition. Pure: the input state is not modified.
pub fn handle(state: &E2ConnectionState, side: Side, msg: &E2Message) -> Transition {
    let mut s = state.clone();
    if s.phase == Phase::Closed {
        return ok(s, vec![], Effect::Ignored);
    }
    match msg {
        E2Message::Disconnect { .. } => {
            s.close();
            return ok(s, vec![], Effect::Closed);
        }
        E2Message::ProtocolError { code, .. } => {
            s.peer_errors += 1;
            return ok(s, vec![], Effect::PeerError(*code));
        }
        _ => {}
    }
    let out_of_phase = |s: E2ConnectionState| {
        let detail = format!("{} not allowed in phase {:?}", kind_name(msg), s.phase);
        reject(s, error_code::OUT_OF_PHASE, detail)
    };
    match (side, s.phase, msg) {
        (Side::Ric, Phase::Idle, E2Message::Setup { agent_id, ran_functions }) => {
            s.phase = Phase::Established;
            s.peer_id = Some(agent_id.clone());
            // reserved ids are accepted but cannot be subscribed to
            s.ran_functions = ran_functions
                .iter()
                .filter_map(|id| Layer::from_id(*id))
                .fold(MetricSet::EMPTY, MetricSet::with);
            let ack = E2Message::SetupAck { ric_id: s.local_id.clone() };
            ok(s, vec![ack], Effect::Established)
        }
        (Side::Ric, Phase::Established, E2Message::SubscriptionResponse { sub_id, accepted, reason }) => {
            match s.pending.remove(sub_id) {
                Some(spec) if *accepted => {
                    s.subscriptions.insert(*sub_id, spec);
                    ok(s, vec![], Effect::SubscriptionAccepted(*sub_id))
                }
                Some(_) => ok(s, vec![], Effect::SubscriptionRejected(*sub_id, reason.clone())),
                None => reject(s, error_code::UNKNOWN_SUBSCRIPTION, format!("no pending subscription {sub_id}")),
            }
        }
        (Side::Ric, Phase::Established, E2Message::Indication { sub_id, seq, .. }) => {
            if !s.subscriptions.contains_key(sub_id) {
                return reject(s, error_code::UNKNOWN_SUBSCRIPTION, format!("no active subscription {sub_id}"));
            }
            match s.last_seq.get(sub_id) {
                Some(&last) if *seq <= last => reject(
                    s,
                    error_code::NON_MONOTONIC_SEQ,
                    format!("seq {seq} not above {last} for subscription {sub_id}"),
                ),
                _ => {
                    s.last_seq.insert(*sub_id, *seq);
                    ok(s, vec![], Effect::Deliver { sub_id: *sub_id, seq: *seq })
                }
            }
        }
        (Side::Ric, Phase::Established, E2Message::ControlAck { ctrl_id, outcome }) => {
            ok(s, vec![], Effect::ControlAcked(*ctrl_id, *outcome))
        }
        (Side::Agent, Phase::SetupPending, E2Message::SetupAck { ric_id }) => {
            s.phase = Phase::Established;
            s.peer_id = Some(ric_id.clone());
            ok(s, vec![], Effect::Established)
        }
        (Side::Agent, Phase::Established, E2Message::SubscriptionRequest { sub_id, spec }) => {
            let refuse = |s: E2ConnectionState, reason: &str| {
                let resp = E2Message::SubscriptionResponse { sub_id: *sub_id, accepted: false, reason: reason.to_string() };
                ok(s, vec![resp], Effect::None)
            };
            if s.subscriptions.contains_key(sub_id) {
                refuse(s, "duplicate sub_id")
            } else if !spec.metric_set.is_subset(s.ran_functions) {
                refuse(s, "metric set not offered by this agent")
            } else {
                s.subscriptions.insert(*sub_id, spec.clone());
                let resp = E2Message::SubscriptionResponse { sub_id: *sub_id, accepted: true, reason: String::new() };
                ok(s, vec![resp], Effect::SubscriptionActivated(*sub_id))
            }
        }
        (Side::Agent, Phase::Established, E2Message::ControlRequest { ctrl_id, .. }) => {
            let ack = E2Message::ControlAck { ctrl_id: *ctrl_id, outcome: ControlOutcome::Applied };
            ok(s, vec![ack], Effect::ControlReceived(*ctrl_id))
        }
        _ => out_of_phase(s),
    }
}

/// Account for a message this side is about to send. Returns the updated
/// state, or an error if the message may not be sent now.
pub fn on_send(state: &E2ConnectionState, side: Side, msg: &E2Message) -> Result<E2ConnectionState, StateError> {
    let mut s = state.clone();
    let phase_err = |s: &E2ConnectionState| StateError::OutOfPhase { kind: kind_name(msg), phase: s.phase };
    if s.phase == Phase::Closed {
        return Err(phase_err(&s));
    }
    match (side, msg) {
        (_, E2Message::Disconnect { .. }) => s.close(),
        (_, E2Message::ProtocolError { .. }) => {}
        (Side::Agent, E2Message::Setup { .. }) => {
            if s.phase != Phase::Idle {
                return Err(phase_err(&s));
            }
            s.phase = Phase::SetupPending;
        }
        (Side::Agent, E2Message::Indication { sub_id, seq, .. }) => {
            if s.phase != Phase::Established {
                return Err(phase_err(&s));
            }
            if !s.subscriptions.contains_key(sub_id) {
                return Err(StateError::UnknownSubscription(*sub_id));
            }
            if let Some(&last) = s.last_seq.get(sub_id) {
                if *seq <= last {
                    return Err(StateError::NonMonotonicSeq { sub_id: *sub_id, seq: *seq, last });
                }
            }
            s.last_seq.insert(*sub_id, *seq);
        }
        (Side::Agent, E2Message::SubscriptionResponse { .. } | E2Message::ControlAck { .. }) => {
            if s.phase != Phase::Established {
                return Err(phase_err(&s));
            }
        }
        (Side::Ric, E2Message::SubscriptionRequest { sub_id, spec }) => {
            if s.phase != Phase::Established {
                return Err(phase_err(&s));
            }
            if s.subscriptions.contains_key(sub_id) || s.pending.contains_key(sub_id) {
                return Err(StateError::DuplicateSubscription(*sub_id));
            }
            s.pending.insert(*sub_id, spec.clone());
        }
        (Side::Ric, E2Message::SetupAck { .. }) => {
            if s.phase != Phase::Established {
                return Err(phase_err(&s));
            }
        }
        (Side::Ric, E2Message::ControlRequest { .. }) => {
            if s.phase != Phase::Established {
                return Err(phase_err(&s));
            }
        }
        _ => return Err(StateError::WrongDirection(kind_name(msg))),
    }
    Ok(s)
}
