//! Per-layer latency observations shared by the simulator, the E2-lite codec
//! and the xApps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Protocol layer a latency sample was measured at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    #[serde(rename = "RLC")]
    Rlc,
    #[serde(rename = "PDCP")]
    Pdcp,
    #[serde(rename = "MAC")]
    Mac,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Rlc, Layer::Pdcp, Layer::Mac];

    /// Numeric metric-set id used on the wire. Ids above 3 are reserved.
    pub fn id(self) -> u8 {
        match self {
            Layer::Rlc => 1,
            Layer::Pdcp => 2,
            Layer::Mac => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Layer> {
        match id {
            1 => Some(Layer::Rlc),
            2 => Some(Layer::Pdcp),
            3 => Some(Layer::Mac),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::Rlc => "RLC",
            Layer::Pdcp => "PDCP",
            Layer::Mac => "MAC",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RLC" => Ok(Layer::Rlc),
            "PDCP" => Ok(Layer::Pdcp),
            "MAC" => Ok(Layer::Mac),
            other => Err(format!("unknown layer {other:?}")),
        }
    }
}

/// A set of layers, stored as a bitmask over [`Layer::id`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MetricSet(u8);

impl MetricSet {
    pub const EMPTY: MetricSet = MetricSet(0);
    pub const ALL: MetricSet = MetricSet(0b1110);

    pub fn of(layers: &[Layer]) -> MetricSet {
        layers.iter().fold(MetricSet::EMPTY, |s, l| s.with(*l))
    }

    pub fn with(self, layer: Layer) -> MetricSet {
        MetricSet(self.0 | (1 << layer.id()))
    }

    pub fn contains(self, layer: Layer) -> bool {
        self.0 & (1 << layer.id()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: MetricSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: MetricSet) -> MetricSet {
        MetricSet(self.0 | other.0)
    }

    pub fn intersect(self, other: MetricSet) -> MetricSet {
        MetricSet(self.0 & other.0)
    }

    /// Members in ascending id order.
    pub fn layers(self) -> impl Iterator<Item = Layer> {
        Layer::ALL.into_iter().filter(move |l| self.contains(*l))
    }

    pub fn len(self) -> usize {
        self.layers().count()
    }
}

impl Serialize for MetricSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.layers())
    }
}

impl<'de> Deserialize<'de> for MetricSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let layers = Vec::<Layer>::deserialize(d)?;
        Ok(MetricSet::of(&layers))
    }
}

/// One latency observation for one UE on one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    /// Virtual ms.
    pub t: u64,
    pub layer: Layer,
    /// Milliseconds, never negative.
    pub latency: f64,
    pub ue_id: String,
    pub cell_id: String,
}
