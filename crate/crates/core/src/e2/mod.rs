//! E2-lite: a small framed protocol between RAN agents and the near-RT-RIC.
//!
//! Frame layout (all integers big-endian):
//!
//! ```text
//! +------+------+---------+------+----------------+-------------+
//! | 0x45 | 0x32 | version | kind | payload length | payload ... |
//! |  'E' |  '2' |  0x01   |  u8  |      u32       |             |
//! +------+------+---------+------+----------------+-------------+
//! ```
//!
//! Lists are a `u16` count followed by the elements, text is a `u16` byte
//! length followed by UTF-8. Payloads are capped at [`MAX_PAYLOAD`] bytes;
//! senders split large indications across frames.

mod codec;
mod state;

pub use codec::{decode, encode, encoded_sample_len, DecodeError, EncodeError, FrameBuffer};
pub use state::{handle, on_send, E2ConnectionState, Effect, Phase, Side, StateError, Transition};

use serde::{Deserialize, Serialize};

use crate::metrics::{MetricSample, MetricSet};

pub const MAGIC: [u8; 2] = [0x45, 0x32];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 8;
pub const MAX_PAYLOAD: usize = 65_535;

/// Wire discriminants for [`E2Message`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageKind {
    Setup = 1,
    SetupAck = 2,
    SubscriptionRequest = 3,
    SubscriptionResponse = 4,
    Indication = 5,
    ControlRequest = 6,
    ControlAck = 7,
    Disconnect = 8,
    ProtocolError = 9,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::Setup,
        MessageKind::SetupAck,
        MessageKind::SubscriptionRequest,
        MessageKind::SubscriptionResponse,
        MessageKind::Indication,
        MessageKind::ControlRequest,
        MessageKind::ControlAck,
        MessageKind::Disconnect,
        MessageKind::ProtocolError,
    ];

    pub fn from_u8(b: u8) -> Option<MessageKind> {
        MessageKind::ALL.into_iter().find(|k| *k as u8 == b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubscriptionSpec {
    pub report_period_ms: u32,
    pub metric_set: MetricSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_filter: Option<String>,
}

impl SubscriptionSpec {
    pub fn new(report_period_ms: u32, metric_set: MetricSet) -> Self {
        SubscriptionSpec { report_period_ms, metric_set, cell_filter: None }
    }

    pub fn is_valid(&self) -> bool {
        self.report_period_ms >= 1 && !self.metric_set.is_empty()
    }

    pub fn matches(&self, sample: &MetricSample) -> bool {
        self.metric_set.contains(sample.layer) && self.cell_filter.as_ref().is_none_or(|c| *c == sample.cell_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ControlOutcome {
    Applied = 0,
    Rejected = 1,
    Unsupported = 2,
}

impl ControlOutcome {
    pub fn from_u8(b: u8) -> Option<ControlOutcome> {
        match b {
            0 => Some(ControlOutcome::Applied),
            1 => Some(ControlOutcome::Rejected),
            2 => Some(ControlOutcome::Unsupported),
            _ => None,
        }
    }
}

/// Disconnect reason codes. Other values are carried through unchanged.
pub mod disconnect {
    pub const NORMAL: u8 = 0;
    pub const SESSION_STOPPED: u8 = 1;
    pub const LEASE_EXPIRED: u8 = 2;
    pub const PROTOCOL_VIOLATION: u8 = 3;
}

/// ProtocolError codes.
pub mod error_code {
    pub const OUT_OF_PHASE: u16 = 1;
    pub const NON_MONOTONIC_SEQ: u16 = 2;
    pub const UNKNOWN_SUBSCRIPTION: u16 = 3;
    pub const MALFORMED_FRAME: u16 = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum E2Message {
    Setup { agent_id: String, ran_functions: Vec<u8> },
    SetupAck { ric_id: String },
    SubscriptionRequest { sub_id: u32, spec: SubscriptionSpec },
    SubscriptionResponse { sub_id: u32, accepted: bool, reason: String },
    Indication { sub_id: u32, seq: u64, samples: Vec<MetricSample> },
    ControlRequest { ctrl_id: u32, target_cell: String, action: Vec<u8> },
    ControlAck { ctrl_id: u32, outcome: ControlOutcome },
    Disconnect { reason: u8 },
    ProtocolError { code: u16, detail: String },
}

impl E2Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            E2Message::Setup { .. } => MessageKind::Setup,
            E2Message::SetupAck { .. } => MessageKind::SetupAck,
            E2Message::SubscriptionRequest { .. } => MessageKind::SubscriptionRequest,
            E2Message::SubscriptionResponse { .. } => MessageKind::SubscriptionResponse,
            E2Message::Indication { .. } => MessageKind::Indication,
            E2Message::ControlRequest { .. } => MessageKind::ControlRequest,
            E2Message::ControlAck { .. } => MessageKind::ControlAck,
            E2Message::Disconnect { .. } => MessageKind::Disconnect,
            E2Message::ProtocolError { .. } => MessageKind::ProtocolError,
        }
    }

    pub fn protocol_error(code: u16, detail: impl Into<String>) -> E2Message {
        E2Message::ProtocolError { code, detail: detail.into() }
    }
}
