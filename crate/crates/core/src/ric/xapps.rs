//! Reference xApps.

use std::any::Any;
use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{AgentSelector, ControlIntent, IndicationContext, SubscriptionWish, XApp};
use crate::e2::SubscriptionSpec;
use crate::metrics::{Layer, MetricSet};

pub const CHART_HEADER: &str = "t_ms,layer,latency_ms,rolling_mean_ms,ue_id,cell_id";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: u64,
    pub latency: f64,
    /// Mean of the last `window` samples of this layer, in arrival order.
    pub rolling_mean: f64,
    pub ue_id: String,
    pub cell_id: String,
}

/// Keeps a per-layer latency time series with a rolling mean and exports
/// it for charting.
#[derive(Debug, Clone)]
pub struct LatencyMonitor {
    id: String,
    selector: AgentSelector,
    period_ms: u32,
    window: usize,
    series: BTreeMap<Layer, Vec<SeriesPoint>>,
    recent: BTreeMap<Layer, VecDeque<f64>>,
}

impl LatencyMonitor {
    pub const DEFAULT_WINDOW: usize = 10;
    pub const DEFAULT_PERIOD_MS: u32 = 100;

    pub fn new(id: impl Into<String>) -> Self {
        LatencyMonitor {
            id: id.into(),
            selector: AgentSelector::All,
            period_ms: Self::DEFAULT_PERIOD_MS,
            window: Self::DEFAULT_WINDOW,
            series: BTreeMap::new(),
            recent: BTreeMap::new(),
        }
    }

    pub fn with_selector(mut self, selector: AgentSelector) -> Self {
        self.selector = selector;
        self
    }

    pub fn with_period(mut self, period_ms: u32) -> Self {
        self.period_ms = period_ms;
        self
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window.max(1);
        self
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Time-ordered points for `layer`; ties keep arrival order.
    pub fn series(&self, layer: Layer) -> &[SeriesPoint] {
        self.series.get(&layer).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    /// Sample median of one layer's latencies.
    pub fn median(&self, layer: Layer) -> Option<f64> {
        let mut v: Vec<f64> = self.series(layer).iter().map(|p| p.latency).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
    }

    /// Columnar chart export: one row per point, layers in RLC, PDCP, MAC
    /// order, each layer time-ordered.
    pub fn chart_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CHART_HEADER.split(',')).expect("write to memory");
        for layer in Layer::ALL {
            for p in self.series(layer) {
                w.write_record([
                    p.t.to_string(),
                    layer.name().to_string(),
                    p.latency.to_string(),
                    p.rolling_mean.to_string(),
                    p.ue_id.clone(),
                    p.cell_id.clone(),
                ])
                .expect("write to memory");
            }
        }
        w.into_inner().expect("flush to memory")
    }

    fn push(&mut self, layer: Layer, t: u64, latency: f64, ue_id: &str, cell_id: &str) {
        let recent = self.recent.entry(layer).or_default();
        recent.push_back(latency);
        if recent.len() > self.window {
            recent.pop_front();
        }
        let rolling_mean = recent.iter().sum::<f64>() / recent.len() as f64;
        let series = self.series.entry(layer).or_default();
        let at = series.partition_point(|p| p.t <= t);
        series.insert(at, SeriesPoint { t, latency, rolling_mean, ue_id: ue_id.to_string(), cell_id: cell_id.to_string() });
    }
}

impl XApp for LatencyMonitor {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> &'static str {
        "latency-monitor"
    }

    fn subscriptions(&self) -> Vec<SubscriptionWish> {
        vec![SubscriptionWish { selector: self.selector.clone(), spec: SubscriptionSpec::new(self.period_ms, MetricSet::ALL) }]
    }

    fn on_indication(&mut self, ctx: &IndicationContext<'_>) -> Vec<ControlIntent> {
        for s in ctx.samples {
            self.push(s.layer, s.t, s.latency, &s.ue_id, &s.cell_id);
        }
        Vec::new()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// One firing of [`ThresholdControl`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Firing {
    pub cell_id: String,
    pub t: u64,
    pub mean_ms: f64,
}

/// Watches MAC latency per cell and asks the cell to back off when the
/// mean of its last `n` samples exceeds `threshold_ms`, at most once per
/// `cooldown_ms` of sample time.
#[derive(Debug, Clone)]
pub struct ThresholdControl {
    id: String,
    selector: AgentSelector,
    period_ms: u32,
    n: usize,
    threshold_ms: f64,
    cooldown_ms: u64,
    windows: BTreeMap<String, VecDeque<f64>>,
    last_fire: BTreeMap<String, u64>,
    firings: Vec<Firing>,
}

impl ThresholdControl {
    pub const DEFAULT_N: usize = 20;
    pub const DEFAULT_THRESHOLD_MS: f64 = 8.0;
    pub const DEFAULT_COOLDOWN_MS: u64 = 200;

    pub fn new(id: impl Into<String>) -> Self {
        ThresholdControl {
            id: id.into(),
            selector: AgentSelector::All,
            period_ms: LatencyMonitor::DEFAULT_PERIOD_MS,
            n: Self::DEFAULT_N,
            threshold_ms: Self::DEFAULT_THRESHOLD_MS,
            cooldown_ms: Self::DEFAULT_COOLDOWN_MS,
            windows: BTreeMap::new(),
            last_fire: BTreeMap::new(),
            firings: Vec::new(),
        }
    }

    pub fn with_params(mut self, n: usize, threshold_ms: f64, cooldown_ms: u64) -> Self {
        self.n = n.max(1);
        self.threshold_ms = threshold_ms;
        self.cooldown_ms = cooldown_ms;
        self
    }

    pub fn with_selector(mut self, selector: AgentSelector) -> Self {
        self.selector = selector;
        self
    }

    pub fn with_period(mut self, period_ms: u32) -> Self {
        self.period_ms = period_ms;
        self
    }

    pub fn firings(&self) -> &[Firing] {
        &self.firings
    }

    /// Feed one MAC sample; returns the mean if it fires.
    pub fn observe(&mut self, cell_id: &str, t: u64, latency: f64) -> Option<f64> {
        let w = self.windows.entry(cell_id.to_string()).or_default();
        w.push_back(latency);
        if w.len() > self.n {
            w.pop_front();
        }
        if w.len() < self.n {
            return None;
        }
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        if mean <= self.threshold_ms {
            return None;
        }
        if let Some(&last) = self.last_fire.get(cell_id) {
            if t < last + self.cooldown_ms {
                return None;
            }
        }
        self.last_fire.insert(cell_id.to_string(), t);
        self.firings.push(Firing { cell_id: cell_id.to_string(), t, mean_ms: mean });
        Some(mean)
    }
}

impl XApp for ThresholdControl {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> &'static str {
        "threshold-control"
    }

    fn subscriptions(&self) -> Vec<SubscriptionWish> {
        vec![SubscriptionWish {
            selector: self.selector.clone(),
            spec: SubscriptionSpec::new(self.period_ms, MetricSet::of(&[Layer::Mac])),
        }]
    }

    fn on_indication(&mut self, ctx: &IndicationContext<'_>) -> Vec<ControlIntent> {
        let mut out = Vec::new();
        for s in ctx.samples.iter().filter(|s| s.layer == Layer::Mac) {
            if let Some(mean) = self.observe(&s.cell_id, s.t, s.latency) {
                out.push(ControlIntent {
                    target_cell: s.cell_id.clone(),
                    payload: format!("throttle cell={} mean_ms={mean:.3}", s.cell_id).into_bytes(),
                    trigger_ts: s.t,
                });
            }
        }
        out
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricSample;

    fn s(t: u64, layer: Layer, latency: f64) -> MetricSample {
        MetricSample { t, layer, latency, ue_id: "ue1".into(), cell_id: "cell".into() }
    }

    fn feed(x: &mut dyn XApp, samples: &[MetricSample]) -> Vec<ControlIntent> {
        x.on_indication(&IndicationContext { agent_id: "a", sub_id: 1, seq: 1, samples, now: 0 })
    }

    #[test]
    fn monitor_partitions_by_layer() {
        let mut m = LatencyMonitor::new("lm");
        let samples: Vec<_> = (0..100u64).flat_map(|i| Layer::ALL.map(|l| s(i * 10, l, 4.0))).collect();
        feed(&mut m, &samples);
        for l in Layer::ALL {
            assert_eq!(m.series(l).len(), 100);
        }
    }

    #[test]
    fn constant_input_constant_mean() {
        let mut m = LatencyMonitor::new("lm").with_window(7);
        let samples: Vec<_> = (0..50u64).map(|i| s(i, Layer::Mac, 5.0)).collect();
        feed(&mut m, &samples);
        assert!(m.series(Layer::Mac).iter().all(|p| p.rolling_mean == 5.0));
        assert_eq!(m.median(Layer::Mac), Some(5.0));
        assert_eq!(m.median(Layer::Rlc), None);
    }

    #[test]
    fn rolling_mean_window() {
        let mut m = LatencyMonitor::new("lm").with_window(2);
        feed(&mut m, &[s(1, Layer::Rlc, 1.0), s(2, Layer::Rlc, 3.0), s(3, Layer::Rlc, 5.0)]);
        let means: Vec<f64> = m.series(Layer::Rlc).iter().map(|p| p.rolling_mean).collect();
        assert_eq!(means, vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn series_sorted_when_arrivals_interleave() {
        let mut m = LatencyMonitor::new("lm");
        feed(&mut m, &[s(100, Layer::Mac, 1.0), s(200, Layer::Mac, 2.0)]);
        feed(&mut m, &[s(150, Layer::Mac, 3.0)]);
        let ts: Vec<u64> = m.series(Layer::Mac).iter().map(|p| p.t).collect();
        assert_eq!(ts, vec![100, 150, 200]);
    }

    #[test]
    fn chart_has_header_and_rows() {
        let mut m = LatencyMonitor::new("lm");
        assert_eq!(String::from_utf8(m.chart_csv()).unwrap(), format!("{CHART_HEADER}\n"));
        feed(&mut m, &[s(10, Layer::Mac, 2.5), s(10, Layer::Rlc, 1.5)]);
        let text = String::from_utf8(m.chart_csv()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "10,RLC,1.5,1.5,ue1,cell");
        assert_eq!(lines[2], "10,MAC,2.5,2.5,ue1,cell");
    }

    #[test]
    fn below_threshold_never_fires() {
        let mut x = ThresholdControl::new("tc");
        let samples: Vec<_> = (0..500u64).map(|i| s(i * 10, Layer::Mac, 7.9)).collect();
        assert!(feed(&mut x, &samples).is_empty());
    }

    #[test]
    fn fires_once_then_cools_down() {
        let mut x = ThresholdControl::new("tc");
        // 20 samples at 10 ms spacing above threshold, then back to normal
        let mut samples: Vec<_> = (1..=20u64).map(|i| s(i * 10, Layer::Mac, 9.0)).collect();
        samples.extend((21..=60u64).map(|i| s(i * 10, Layer::Mac, 1.0)));
        let out = feed(&mut x, &samples);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].trigger_ts, 200);
        assert_eq!(out[0].target_cell, "cell");
    }

    #[test]
    fn sustained_surge_fires_every_cooldown() {
        let mut x = ThresholdControl::new("tc");
        let samples: Vec<_> = (1..=100u64).map(|i| s(i * 10, Layer::Mac, 12.0)).collect();
        let ts: Vec<u64> = feed(&mut x, &samples).iter().map(|i| i.trigger_ts).collect();
        assert_eq!(ts, vec![200, 400, 600, 800, 1000]);
    }

    #[test]
    fn other_layers_ignored() {
        let mut x = ThresholdControl::new("tc").with_params(2, 1.0, 0);
        assert!(feed(&mut x, &[s(1, Layer::Rlc, 50.0), s(2, Layer::Pdcp, 50.0)]).is_empty());
    }
}
