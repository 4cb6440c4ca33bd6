//! Metric stream export: JSON lines for machines, CSV columns for plotting.

use std::io;

use crate::metrics::MetricSample;

/// One JSON object per line with fields `t`, `layer`, `latency`, `ue_id`, `cell_id`.
pub fn to_json_lines(samples: &[MetricSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

pub fn from_json_lines(text: &str) -> Result<Vec<MetricSample>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// CSV with header `t_ms,layer,latency_ms,ue_id,cell_id`.
pub fn to_columnar(samples: &[MetricSample]) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t_ms", "layer", "latency_ms", "ue_id", "cell_id"])?;
    for s in samples {
        w.write_record([s.t.to_string(), s.layer.to_string(), s.latency.to_string(), s.ue_id.clone(), s.cell_id.clone()])?;
    }
    w.into_inner().map_err(|e| e.into_error())
}
