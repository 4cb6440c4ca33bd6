use serde::{Deserialize, Serialize};

use crate::inventory::{NodeRecord, NodeRole};
use crate::metrics::Layer;

use super::RanError;

/// One statute mile in meters.
pub const ONE_MILE_M: f64 = 1609.344;

/// Log-normal latency parameters for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerLatency {
    pub median_ms: f64,
    pub jitter_fraction: f64,
}

/// Coverage radii and per-layer latency model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    /// Coverage radius when either end lacks a booster, meters.
    pub base_radius: f64,
    /// Coverage radius when both ends carry a booster, meters.
    pub boosted_radius: f64,
    pub rlc: LayerLatency,
    pub pdcp: LayerLatency,
    pub mac: LayerLatency,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            base_radius: 300.0,
            boosted_radius: 2000.0,
            rlc: LayerLatency { median_ms: 4.0, jitter_fraction: 0.25 },
            pdcp: LayerLatency { median_ms: 5.0, jitter_fraction: 0.25 },
            mac: LayerLatency { median_ms: 3.0, jitter_fraction: 0.25 },
        }
    }
}

impl LinkModel {
    pub fn latency(&self, layer: Layer) -> LayerLatency {
        match layer {
            Layer::Rlc => self.rlc,
            Layer::Pdcp => self.pdcp,
            Layer::Mac => self.mac,
        }
    }

    pub fn latency_mut(&mut self, layer: Layer) -> &mut LayerLatency {
        match layer {
            Layer::Rlc => &mut self.rlc,
            Layer::Pdcp => &mut self.pdcp,
            Layer::Mac => &mut self.mac,
        }
    }

    pub fn validate(&self) -> Result<(), RanError> {
        let bad = |m: &str| Err(RanError::InvalidLinkModel(m.to_string()));
        if !(self.base_radius > 0.0 && self.base_radius < self.boosted_radius) {
            return bad("need 0 < base_radius < boosted_radius");
        }
        if !(self.boosted_radius > ONE_MILE_M) {
            return bad("boosted_radius must exceed one mile (1609 m)");
        }
        for layer in Layer::ALL {
            let l = self.latency(layer);
            if !(l.median_ms > 0.0) {
                return bad(&format!("{layer} median_ms must be > 0"));
            }
            if !(0.0..1.0).contains(&l.jitter_fraction) {
                return bad(&format!("{layer} jitter_fraction must be in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Coverage radius that applies between `bs` and `ue`.
    pub fn radius_for(&self, bs: &NodeRecord, ue: &NodeRecord) -> f64 {
        if bs.booster.is_some() && ue.booster.is_some() {
            self.boosted_radius
        } else {
            self.base_radius
        }
    }
}

/// Distance between a base station and a UE, checking roles.
pub fn link_distance(bs: &NodeRecord, ue: &NodeRecord) -> Result<f64, RanError> {
    if bs.role != NodeRole::BaseStation {
        return Err(RanError::WrongRole { node: bs.node_id.0.clone(), expected: "base-station" });
    }
    if !ue.role.is_ue() {
        return Err(RanError::WrongRole { node: ue.node_id.0.clone(), expected: "fixed-ue or mobile-ue" });
    }
    bs.position
        .distance_m(&ue.position)
        .ok_or_else(|| RanError::IncomparablePositions(bs.node_id.0.clone(), ue.node_id.0.clone()))
}

/// Whether `ue` is within coverage of `bs`. Both ends need a booster for
/// the extended radius.
pub fn in_range(bs: &NodeRecord, ue: &NodeRecord, lm: &LinkModel) -> Result<bool, RanError> {
    Ok(link_distance(bs, ue)? <= lm.radius_for(bs, ue))
}
