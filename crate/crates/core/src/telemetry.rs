//! Auxiliary sensor data: weather stations at the sites and spectrum
//! monitor readings from nodes. Append-only; sorted at query time.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{Inventory, NodeId, NodeRole, SiteId};
use crate::ransim::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeBase {
    #[default]
    Virtual,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherReading {
    pub t: u64,
    #[serde(default)]
    pub time_base: TimeBase,
    pub site_id: String,
    /// degrees C
    pub temperature: f64,
    /// m/s
    pub wind_speed: f64,
    /// mm/h
    pub precipitation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSample {
    pub t: u64,
    #[serde(default)]
    pub time_base: TimeBase,
    pub node_id: String,
    /// MHz
    pub center: f64,
    /// MHz
    pub bandwidth: f64,
    /// dBm
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TelemetryRecord {
    Weather(WeatherReading),
    Spectrum(SpectrumSample),
}

impl TelemetryRecord {
    pub fn t(&self) -> u64 {
        match self {
            TelemetryRecord::Weather(w) => w.t,
            TelemetryRecord::Spectrum(s) => s.t,
        }
    }

    pub fn kind(&self) -> TelemetryKind {
        match self {
            TelemetryRecord::Weather(_) => TelemetryKind::Weather,
            TelemetryRecord::Spectrum(_) => TelemetryKind::Spectrum,
        }
    }

    /// Site id for weather, node id for spectrum.
    pub fn source(&self) -> &str {
        match self {
            TelemetryRecord::Weather(w) => &w.site_id,
            TelemetryRecord::Spectrum(s) => &s.node_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TelemetryKind {
    Weather,
    Spectrum,
}

impl std::str::FromStr for TelemetryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weather" => Ok(TelemetryKind::Weather),
            "spectrum" => Ok(TelemetryKind::Spectrum),
            other => Err(format!("unknown telemetry kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TelemetryError {
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("inverted range [{start}, {end})")]
    InvertedRange { start: u64, end: u64 },
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Series {
    Weather(Vec<WeatherReading>),
    Spectrum(Vec<SpectrumSample>),
}

impl Series {
    pub fn len(&self) -> usize {
        match self {
            Series::Weather(v) => v.len(),
            Series::Spectrum(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TelemetryKind {
        match self {
            Series::Weather(_) => TelemetryKind::Weather,
            Series::Spectrum(_) => TelemetryKind::Spectrum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Watermark {
    pub kind: TelemetryKind,
    pub source: String,
    pub records: u64,
    pub high_water_t: u64,
    /// Records that arrived with t below the high-water mark at the time.
    pub late: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryQuery {
    pub kind: TelemetryKind,
    /// Site id (weather) or node id (spectrum); `None` selects all.
    pub source: Option<String>,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone)]
pub struct TelemetryStore {
    inventory: Arc<Inventory>,
    log: Vec<TelemetryRecord>,
    marks: BTreeMap<(TelemetryKind, String), Watermark>,
}

fn check(cond: bool, what: &str) -> Result<(), TelemetryError> {
    if cond {
        Ok(())
    } else {
        Err(TelemetryError::Invalid(what.to_string()))
    }
}

impl TelemetryStore {
    pub fn new(inventory: Arc<Inventory>) -> Self {
        TelemetryStore { inventory, log: Vec::new(), marks: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn validate(&self, rec: &TelemetryRecord) -> Result<(), TelemetryError> {
        match rec {
            TelemetryRecord::Weather(w) => {
                check(w.temperature.is_finite(), "temperature must be finite")?;
                check(w.wind_speed >= 0.0 && w.wind_speed.is_finite(), "wind_speed must be >= 0")?;
                check(w.precipitation >= 0.0 && w.precipitation.is_finite(), "precipitation must be >= 0")?;
                if self.inventory.site(&SiteId(w.site_id.clone())).is_none() {
                    return Err(TelemetryError::UnknownSite(w.site_id.clone()));
                }
            }
            TelemetryRecord::Spectrum(s) => {
                check(s.bandwidth > 0.0 && s.bandwidth.is_finite(), "bandwidth must be > 0")?;
                check(s.center.is_finite() && s.power.is_finite(), "center and power must be finite")?;
                if self.inventory.node(&NodeId(s.node_id.clone())).is_none() {
                    return Err(TelemetryError::UnknownNode(s.node_id.clone()));
                }
            }
        }
        Ok(())
    }

    /// Append a record; returns its id (position in the insert log).
    pub fn ingest(&mut self, rec: TelemetryRecord) -> Result<u64, TelemetryError> {
        self.validate(&rec)?;
        let key = (rec.kind(), rec.source().to_string());
        let t = rec.t();
        let m = self.marks.entry(key).or_insert_with(|| Watermark {
            kind: rec.kind(),
            source: rec.source().to_string(),
            records: 0,
            high_water_t: t,
            late: 0,
        });
        if m.records > 0 && t < m.high_water_t {
            m.late += 1;
        }
        m.high_water_t = m.high_water_t.max(t);
        m.records += 1;
        self.log.push(rec);
        Ok(self.log.len() as u64 - 1)
    }

    pub fn watermarks(&self) -> Vec<Watermark> {
        self.marks.values().cloned().collect()
    }

    /// Records of one kind with t in `[start, end)`, ordered by t and then
    /// by insertion.
    pub fn query(&self, q: &TelemetryQuery) -> Result<Series, TelemetryError> {
        if q.start > q.end {
            return Err(TelemetryError::InvertedRange { start: q.start, end: q.end });
        }
        let mut hits: Vec<&TelemetryRecord> = self
            .log
            .iter()
            .filter(|r| r.kind() == q.kind)
            .filter(|r| q.source.as_deref().is_none_or(|s| r.source() == s))
            .filter(|r| (q.start..q.end).contains(&r.t()))
            .collect();
        hits.sort_by_key(|r| r.t());
        Ok(match q.kind {
            TelemetryKind::Weather => Series::Weather(
                hits.into_iter()
                    .filter_map(|r| match r {
                        TelemetryRecord::Weather(w) => Some(w.clone()),
                        _ => None,
                    })
                    .collect(),
            ),
            TelemetryKind::Spectrum => Series::Spectrum(
                hits.into_iter()
                    .filter_map(|r| match r {
                        TelemetryRecord::Spectrum(s) => Some(s.clone()),
                        _ => None,
                    })
                    .collect(),
            ),
        })
    }
}

pub const WEATHER_HEADER: &str = "t,time_base,site_id,temperature,wind_speed,precipitation";
pub const SPECTRUM_HEADER: &str = "t,time_base,node_id,center,bandwidth,power";

fn write_rows<T: Serialize>(header: &str, rows: &[T]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header.split(',')).expect("write to memory");
    for r in rows {
        w.serialize(r).expect("flat record serializes");
    }
    w.into_inner().expect("flush to memory")
}

/// Header plus one row per record. Text fields are quoted when needed.
pub fn export_csv(series: &Series) -> Vec<u8> {
    match series {
        Series::Weather(v) => write_rows(WEATHER_HEADER, v),
        Series::Spectrum(v) => write_rows(SPECTRUM_HEADER, v),
    }
}

pub fn parse_csv(kind: TelemetryKind, bytes: &[u8]) -> Result<Series, TelemetryError> {
    let mut r = csv::Reader::from_reader(bytes);
    let err = |e: csv::Error| TelemetryError::Csv(e.to_string());
    Ok(match kind {
        TelemetryKind::Weather => Series::Weather(r.deserialize().collect::<Result<_, _>>().map_err(err)?),
        TelemetryKind::Spectrum => Series::Spectrum(r.deserialize().collect::<Result<_, _>>().map_err(err)?),
    })
}

/// Seeded synthetic weather (one station per site) and spectrum readings
/// (one monitor per base station) every `every_ms` over `[start, end)`.
pub fn generate(inv: &Inventory, seed: u64, start: u64, end: u64, every_ms: u64) -> Vec<TelemetryRecord> {
    let every = every_ms.max(1);
    let mut out = Vec::new();
    for site in inv.sites() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("weather/{}", site.site_id.0)));
        let mut temp = rng.random_range(5.0..25.0);
        let step = Normal::new(0.0, 0.2).expect("valid normal");
        let mut t = start;
        while t < end {
            temp += step.sample(&mut rng);
            let wind: f64 = rng.random_range(0.0..12.0);
            let rain: f64 = if rng.random_bool(0.1) { rng.random_range(0.1..8.0) } else { 0.0 };
            out.push(TelemetryRecord::Weather(WeatherReading {
                t,
                time_base: TimeBase::Virtual,
                site_id: site.site_id.0.clone(),
                temperature: temp,
                wind_speed: wind,
                precipitation: rain,
            }));
            t += every;
        }
    }
    for node in inv.nodes().filter(|n| n.role == NodeRole::BaseStation) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("spectrum/{}", node.node_id)));
        let noise = Normal::new(-95.0, 3.0).expect("valid normal");
        let mut t = start;
        while t < end {
            out.push(TelemetryRecord::Spectrum(SpectrumSample {
                t,
                time_base: TimeBase::Virtual,
                node_id: node.node_id.0.clone(),
                center: 3550.0,
                bandwidth: 100.0,
                power: noise.sample(&mut rng),
            }));
            t += every;
        }
    }
    out
}
