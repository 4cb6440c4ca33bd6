//! Simulated disaggregated RAN on a virtual clock: gNB agents, a
//! booster-aware coverage model, and seeded per-layer latency generation.

mod agent;
pub mod export;
mod link;
mod report;

pub use agent::{AttachOutcome, E2Entity, RanAgent, Units, VirtualClock};
pub use link::{in_range, link_distance, LayerLatency, LinkModel, ONE_MILE_M};
pub use report::{ReportCounters, ReportedIndication, Reporter};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RanError {
    #[error("node {node} must be {expected}")]
    WrongRole { node: String, expected: &'static str },
    #[error("nodes {0} and {1} use different coordinate frames")]
    IncomparablePositions(String, String),
    #[error("UE {ue} is {distance_m:.0} m away, beyond the {threshold_m:.0} m coverage radius")]
    OutOfRange { ue: String, distance_m: f64, threshold_m: f64 },
    #[error("invalid link model: {0}")]
    InvalidLinkModel(String),
    #[error("step size must be positive")]
    ZeroStep,
    #[error("clock regression: now {now}, requested {requested}")]
    ClockRegression { now: u64, requested: u64 },
}

/// Deterministically derive an independent seed for a named stream.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
