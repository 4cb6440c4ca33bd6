//! Static description of the testbed: sites, nodes, radios and boosters.
//!
//! An [`Inventory`] is loaded once from a deployment-description document
//! (TOML with top-level `sites` and `nodes` arrays), validated, and then
//! treated as immutable for the lifetime of the process.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ransim::{in_range, LinkModel};

/// Bundled phase-1 farm deployment (2 base stations, 4 fixed UEs).
pub const PHASE1_FIXTURE: &str = include_str!("../../../deployments/ara-phase1.toml");
/// Bundled indoor sandbox (25 hosts, 2 SDRs each).
pub const SANDBOX_FIXTURE: &str = include_str!("../../../deployments/sandbox-50.toml");

/// Maximum channel bandwidth of the wideband base-station SDR class, in MHz.
pub const WIDEBAND_MAX_BANDWIDTH_MHZ: f64 = 200.0;

const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<&str> for SiteId {
    fn from(s: &str) -> Self {
        SiteId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteKind {
    Farm,
    Campus,
    Sandbox,
}

/// A location. Farm and campus sites use geographic coordinates in decimal
/// degrees; the sandbox uses a local planar grid in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Position {
    Geo { lat: f64, lon: f64 },
    Planar { x: f64, y: f64 },
}

impl Position {
    fn is_planar(&self) -> bool {
        matches!(self, Position::Planar { .. })
    }

    /// Distance in meters, or `None` if the two positions are in different frames.
    ///
    /// Geographic distance uses the equirectangular approximation, which is
    /// well under 0.1% off at the few-kilometer scale of a farm deployment.
    pub fn distance_m(&self, other: &Position) -> Option<f64> {
        match (self, other) {
            (Position::Geo { lat: la1, lon: lo1 }, Position::Geo { lat: la2, lon: lo2 }) => {
                let phi1 = la1.to_radians();
                let phi2 = la2.to_radians();
                let x = (lo2 - lo1).to_radians() * ((phi1 + phi2) / 2.0).cos();
                let y = phi2 - phi1;
                Some(EARTH_RADIUS_M * (x * x + y * y).sqrt())
            }
            (Position::Planar { x: x1, y: y1 }, Position::Planar { x: x2, y: y2 }) => {
                Some((x2 - x1).hypot(y2 - y1))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub site_id: SiteId,
    pub name: String,
    pub kind: SiteKind,
    pub position: Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadioClass {
    /// Tower-class SDR (USRP N320 style), up to 200 MHz of bandwidth.
    WidebandSdr,
    /// Bus-powered SDR (USRP B210 style) used at UEs and in the sandbox.
    PortableSdr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioUnitSpec {
    pub model_class: RadioClass,
    /// MHz
    pub max_bandwidth: f64,
    /// `[min, max]` tunable range in MHz.
    pub freq_range: [f64; 2],
}

impl RadioUnitSpec {
    /// Whether this radio can carry a block spanning `[lo, hi)` MHz.
    pub fn supports(&self, lo_mhz: f64, hi_mhz: f64) -> bool {
        let bw = hi_mhz - lo_mhz;
        bw <= self.max_bandwidth && lo_mhz >= self.freq_range[0] && hi_mhz <= self.freq_range[1]
    }
}

/// Tower-mounted or UE booster: a power amplifier on TX plus a low-noise
/// amplifier on RX.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoosterSpec {
    /// Power amplifier gain, dB.
    pub tx_gain: f64,
    /// Low-noise amplifier gain, dB.
    pub rx_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRole {
    BaseStation,
    FixedUe,
    MobileUe,
    SandboxHost,
}

impl NodeRole {
    pub fn is_ue(self) -> bool {
        matches!(self, NodeRole::FixedUe | NodeRole::MobileUe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: NodeId,
    pub site_id: SiteId,
    pub role: NodeRole,
    pub position: Position,
    pub radios: Vec<RadioUnitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub booster: Option<BoosterSpec>,
    /// Control-plane address; for field UEs this is the commercial
    /// management channel.
    pub mgmt_endpoint: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum InventoryError {
    #[error("malformed deployment document: {0}")]
    Parse(String),
    #[error("invalid {id}: {reason}")]
    Validation { id: String, reason: String },
}

fn invalid(id: impl fmt::Display, reason: impl Into<String>) -> InventoryError {
    InventoryError::Validation {
        id: id.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct DeploymentDoc {
    #[serde(default)]
    sites: Vec<Site>,
    #[serde(default)]
    nodes: Vec<NodeRecord>,
}

/// A validated, immutable testbed description.
#[derive(Debug, Clone, PartialEq)]
pub struct Inventory {
    sites: BTreeMap<SiteId, Site>,
    nodes: BTreeMap<NodeId, NodeRecord>,
}

/// Role and/or site predicate for [`Inventory::list_nodes`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeFilter {
    pub role: Option<NodeRole>,
    pub site: Option<SiteId>,
}

impl NodeFilter {
    pub fn role(role: NodeRole) -> Self {
        NodeFilter {
            role: Some(role),
            site: None,
        }
    }

    pub fn site(site: impl Into<String>) -> Self {
        NodeFilter {
            role: None,
            site: Some(SiteId(site.into())),
        }
    }

    fn matches(&self, node: &NodeRecord) -> bool {
        self.role.is_none_or(|r| r == node.role) && self.site.as_ref().is_none_or(|s| *s == node.site_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsCoverage {
    pub bs_id: NodeId,
    pub in_range_ues: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub base_stations: Vec<BsCoverage>,
    /// Base stations with fewer than [`MIN_UES_PER_BS`] UEs in range.
    pub flagged: Vec<NodeId>,
}

/// Every BS cell is expected to have at least this many UEs within range.
pub const MIN_UES_PER_BS: usize = 2;

impl Inventory {
    /// Parse and validate a deployment document.
    pub fn load(source: &str) -> Result<Inventory, InventoryError> {
        let doc: DeploymentDoc =
            toml::from_str(source).map_err(|e| InventoryError::Parse(e.to_string()))?;
        Inventory::from_parts(doc.sites, doc.nodes)
    }

    pub fn phase1() -> Inventory {
        Inventory::load(PHASE1_FIXTURE).expect("bundled phase-1 fixture is valid")
    }

    pub fn sandbox() -> Inventory {
        Inventory::load(SANDBOX_FIXTURE).expect("bundled sandbox fixture is valid")
    }

    pub fn from_parts(sites: Vec<Site>, nodes: Vec<NodeRecord>) -> Result<Inventory, InventoryError> {
        let mut site_map = BTreeMap::new();
        for site in sites {
            validate_site(&site)?;
            let id = site.site_id.clone();
            if site_map.insert(id.clone(), site).is_some() {
                return Err(invalid(&id, "duplicate site_id"));
            }
        }
        let mut node_map = BTreeMap::new();
        for node in nodes {
            let site = site_map
                .get(&node.site_id)
                .ok_or_else(|| invalid(&node.node_id, format!("unknown site_id {}", node.site_id)))?;
            validate_node(&node, site)?;
            let id = node.node_id.clone();
            if node_map.insert(id.clone(), node).is_some() {
                return Err(invalid(&id, "duplicate node_id"));
            }
        }
        Ok(Inventory {
            sites: site_map,
            nodes: node_map,
        })
    }

    /// Serialize back to a deployment document.
    pub fn to_document(&self) -> String {
        let doc = DeploymentDoc {
            sites: self.sites.values().cloned().collect(),
            nodes: self.nodes.values().cloned().collect(),
        };
        toml::to_string(&doc).expect("inventory serializes")
    }

    pub fn site(&self, id: &SiteId) -> Option<&Site> {
        self.sites.get(id)
    }

    pub fn sites(&self) -> impl Iterator<Item = &Site> {
        self.sites.values()
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeRecord> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn radio_count(&self) -> usize {
        self.nodes.values().map(|n| n.radios.len()).sum()
    }

    /// Nodes matching `filter`, ordered by node_id.
    pub fn list_nodes(&self, filter: &NodeFilter) -> Vec<&NodeRecord> {
        self.nodes.values().filter(|n| filter.matches(n)).collect()
    }

    /// A copy of this inventory without `node_id`.
    pub fn without_node(&self, node_id: &NodeId) -> Inventory {
        let mut inv = self.clone();
        inv.nodes.remove(node_id);
        inv
    }

    /// For every base station, the UEs it covers under `lm`; base stations
    /// covering fewer than two UEs are flagged.
    pub fn validate_coverage(&self, lm: &LinkModel) -> CoverageReport {
        let ues: Vec<&NodeRecord> = self.nodes.values().filter(|n| n.role.is_ue()).collect();
        let mut report = CoverageReport {
            base_stations: Vec::new(),
            flagged: Vec::new(),
        };
        for bs in self.nodes.values().filter(|n| n.role == NodeRole::BaseStation) {
            let in_range_ues: Vec<NodeId> = ues
                .iter()
                .filter(|ue| in_range(bs, ue, lm).unwrap_or(false))
                .map(|ue| ue.node_id.clone())
                .collect();
            if in_range_ues.len() < MIN_UES_PER_BS {
                report.flagged.push(bs.node_id.clone());
            }
            report.base_stations.push(BsCoverage {
                bs_id: bs.node_id.clone(),
                in_range_ues,
            });
        }
        report
    }
}

fn validate_site(site: &Site) -> Result<(), InventoryError> {
    if site.site_id.0.is_empty() {
        return Err(invalid("<site>", "empty site_id"));
    }
    match (site.kind, site.position) {
        (SiteKind::Sandbox, Position::Planar { x, y }) => {
            if !x.is_finite() || !y.is_finite() {
                return Err(invalid(&site.site_id, "non-finite planar position"));
            }
        }
        (SiteKind::Sandbox, Position::Geo { .. }) => {
            return Err(invalid(&site.site_id, "sandbox site must use planar x/y position"));
        }
        (_, Position::Planar { .. }) => {
            return Err(invalid(&site.site_id, "outdoor site must use lat/lon position"));
        }
        (_, Position::Geo { lat, lon }) => check_lat_lon(&site.site_id, lat, lon)?,
    }
    Ok(())
}

fn check_lat_lon(id: impl fmt::Display, lat: f64, lon: f64) -> Result<(), InventoryError> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(invalid(id, format!("latitude {lat} outside [-90, 90]")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(invalid(id, format!("longitude {lon} outside [-180, 180]")));
    }
    Ok(())
}

fn validate_radio(id: &NodeId, radio: &RadioUnitSpec) -> Result<(), InventoryError> {
    if !(radio.max_bandwidth > 0.0) {
        return Err(invalid(id, "radio max_bandwidth must be > 0"));
    }
    if radio.model_class == RadioClass::WidebandSdr && radio.max_bandwidth != WIDEBAND_MAX_BANDWIDTH_MHZ {
        return Err(invalid(id, "wideband-sdr max_bandwidth must be 200 MHz"));
    }
    if !(radio.freq_range[0] < radio.freq_range[1]) {
        return Err(invalid(id, "radio freq_range min must be below max"));
    }
    Ok(())
}

fn validate_node(node: &NodeRecord, site: &Site) -> Result<(), InventoryError> {
    let id = &node.node_id;
    if id.0.is_empty() {
        return Err(invalid("<node>", "empty node_id"));
    }
    if node.mgmt_endpoint.trim().is_empty() {
        return Err(invalid(id, "empty mgmt_endpoint"));
    }
    if node.position.is_planar() != site.position.is_planar() {
        return Err(invalid(id, "position frame differs from its site"));
    }
    if let Position::Geo { lat, lon } = node.position {
        check_lat_lon(id, lat, lon)?;
    }
    match node.role {
        NodeRole::SandboxHost if node.radios.len() != 2 => {
            return Err(invalid(id, "sandbox host must have exactly 2 radios"));
        }
        NodeRole::BaseStation | NodeRole::FixedUe if node.radios.is_empty() => {
            return Err(invalid(id, "node needs at least one radio"));
        }
        _ => {}
    }
    for radio in &node.radios {
        validate_radio(id, radio)?;
    }
    if let Some(b) = &node.booster {
        if !(b.tx_gain >= 0.0 && b.rx_gain >= 0.0) {
            return Err(invalid(id, "booster gains must be >= 0 dB"));
        }
    }
    Ok(())
}

/// Ids of a node set grouped by role, for quick BS/UE checks.
pub fn roles_of<'a>(inv: &Inventory, ids: impl IntoIterator<Item = &'a NodeId>) -> BTreeSet<NodeRole> {
    ids.into_iter().filter_map(|id| inv.node(id)).map(|n| n.role).collect()
}
