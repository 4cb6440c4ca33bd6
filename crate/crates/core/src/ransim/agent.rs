use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::inventory::{NodeId, NodeRecord, NodeRole};
use crate::metrics::{Layer, MetricSample, MetricSet};

use super::link::{link_distance, LinkModel};
use super::{derive_seed, RanError};

/// Monotone virtual time in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct VirtualClock {
    now: u64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(now: u64) -> Self {
        VirtualClock { now }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn advance(&mut self, dt: u64) -> u64 {
        self.now += dt;
        self.now
    }

    pub fn advance_to(&mut self, t: u64) -> Result<u64, RanError> {
        if t < self.now {
            return Err(RanError::ClockRegression { now: self.now, requested: t });
        }
        self.now = t;
        Ok(t)
    }
}

/// Which base-station units an agent models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Units {
    /// When set, CU and DU appear as separate E2 entities.
    pub split: bool,
}

/// One endpoint an agent exposes to the RIC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct E2Entity {
    pub entity_id: String,
    pub functions: MetricSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttachOutcome {
    Attached { at: u64 },
    AlreadyAttached,
}

/// A simulated gNB bound to one base-station node. CU, DU and RU are
/// co-located unless split mode is enabled.
#[derive(Debug, Clone)]
pub struct RanAgent {
    agent_id: String,
    bs: NodeRecord,
    cell_id: String,
    units: Units,
    metric_sets: MetricSet,
    latency: LinkModel,
    attached: BTreeMap<NodeId, u64>,
    rng: ChaCha8Rng,
}

impl RanAgent {
    pub fn new(agent_id: impl Into<String>, bs: NodeRecord, lm: &LinkModel, seed: u64) -> Result<Self, RanError> {
        if bs.role != NodeRole::BaseStation {
            return Err(RanError::WrongRole { node: bs.node_id.0.clone(), expected: "base-station" });
        }
        let agent_id = agent_id.into();
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &agent_id));
        Ok(RanAgent {
            cell_id: bs.node_id.0.clone(),
            agent_id,
            bs,
            units: Units { split: false },
            metric_sets: MetricSet::ALL,
            latency: lm.clone(),
            attached: BTreeMap::new(),
            rng,
        })
    }

    pub fn with_split(mut self, split: bool) -> Self {
        self.units.split = split;
        self
    }

    pub fn with_metric_sets(mut self, sets: MetricSet) -> Self {
        self.metric_sets = sets;
        self
    }

    pub fn with_cell_id(mut self, cell: impl Into<String>) -> Self {
        self.cell_id = cell.into();
        self
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn bs_node(&self) -> &NodeRecord {
        &self.bs
    }

    pub fn cell_id(&self) -> &str {
        &self.cell_id
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn metric_sets(&self) -> MetricSet {
        self.metric_sets
    }

    pub fn attached(&self) -> impl Iterator<Item = &NodeId> {
        self.attached.keys()
    }

    pub fn is_attached(&self, ue: &NodeId) -> bool {
        self.attached.contains_key(ue)
    }

    /// E2 endpoints this agent presents: one when co-located, a CU (PDCP)
    /// and a DU (RLC, MAC) in split mode.
    pub fn entities(&self) -> Vec<E2Entity> {
        if !self.units.split {
            return vec![E2Entity { entity_id: self.agent_id.clone(), functions: self.metric_sets }];
        }
        let cu = MetricSet::of(&[Layer::Pdcp]);
        let du = MetricSet::of(&[Layer::Rlc, Layer::Mac]);
        [("cu", cu), ("du", du)]
            .into_iter()
            .filter_map(|(suffix, f)| {
                let functions = MetricSet::of(&f.layers().filter(|l| self.metric_sets.contains(*l)).collect::<Vec<_>>());
                (!functions.is_empty()).then(|| E2Entity { entity_id: format!("{}-{suffix}", self.agent_id), functions })
            })
            .collect()
    }

    /// Scale the median latency of one layer, e.g. to model a load surge.
    pub fn set_layer_median(&mut self, layer: Layer, median_ms: f64) {
        self.latency.latency_mut(layer).median_ms = median_ms;
    }

    pub fn layer_median(&self, layer: Layer) -> f64 {
        self.latency.latency(layer).median_ms
    }

    pub fn attach_ue(&mut self, ue: &NodeRecord, lm: &LinkModel, now: u64) -> Result<AttachOutcome, RanError> {
        let distance = link_distance(&self.bs, ue)?;
        let threshold = lm.radius_for(&self.bs, ue);
        if distance > threshold {
            return Err(RanError::OutOfRange {
                ue: ue.node_id.0.clone(),
                distance_m: distance,
                threshold_m: threshold,
            });
        }
        if self.attached.contains_key(&ue.node_id) {
            return Ok(AttachOutcome::AlreadyAttached);
        }
        self.attached.insert(ue.node_id.clone(), now);
        Ok(AttachOutcome::Attached { at: now })
    }

    pub fn detach_ue(&mut self, ue: &NodeId) -> bool {
        self.attached.remove(ue).is_some()
    }

    /// One sampling tick at virtual time `t`: a sample per attached UE per
    /// declared layer, in (ue, layer) order.
    pub fn sample(&mut self, t: u64) -> Vec<MetricSample> {
        let mut out = Vec::with_capacity(self.attached.len() * self.metric_sets.len());
        for ue in self.attached.keys() {
            for layer in self.metric_sets.layers() {
                let p = self.latency.latency(layer);
                let z: f64 = StandardNormal.sample(&mut self.rng);
                out.push(MetricSample {
                    t,
                    layer,
                    latency: p.median_ms * (p.jitter_fraction * z).exp(),
                    ue_id: ue.0.clone(),
                    cell_id: self.cell_id.clone(),
                });
            }
        }
        out
    }

    /// Advance `clock` by `dt` and take one sampling tick at the new time.
    pub fn step(&mut self, clock: &mut VirtualClock, dt: u64) -> Result<Vec<MetricSample>, RanError> {
        if dt == 0 {
            return Err(RanError::ZeroStep);
        }
        let t = clock.advance(dt);
        Ok(self.sample(t))
    }
}
