//! Request and response bodies that are not core domain types.

use ara_core::lease::LeaseTransition;
use ara_core::provisioner::SessionId;
use ara_core::ric::{ControlAction, RicCounters, RoutedIndication};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

/// One routed indication on the live stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveEvent {
    pub session: SessionId,
    #[serde(flatten)]
    pub indication: RoutedIndication,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdvanceRequest {
    #[serde(default)]
    pub dt_ms: Option<u64>,
    #[serde(default)]
    pub to_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockReport {
    pub now: u64,
    pub lease_transitions: Vec<LeaseTransition>,
    pub stopped_sessions: Vec<SessionId>,
    pub routed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockView {
    pub now: u64,
    pub seed: u64,
    pub deployment: String,
    /// Live-stream events discarded because a subscriber fell behind.
    pub stream_drops: u64,
    pub stream_subscribers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByodView {
    pub ric_id: String,
    pub agents: Vec<String>,
    pub counters: RicCounters,
    pub control_actions: Vec<ControlAction>,
}
