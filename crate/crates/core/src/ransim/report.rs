use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::e2::{encoded_sample_len, E2Message, SubscriptionSpec, MAX_PAYLOAD};
use crate::metrics::MetricSample;

// sub_id + seq + sample count
const INDICATION_OVERHEAD: usize = 4 + 8 + 2;

/// An indication produced by a [`Reporter`], stamped with the virtual time
/// its bucket closed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportedIndication {
    pub at: u64,
    pub sub_id: u32,
    pub seq: u64,
    pub samples: Vec<MetricSample>,
}

impl ReportedIndication {
    pub fn to_message(&self) -> E2Message {
        E2Message::Indication { sub_id: self.sub_id, seq: self.seq, samples: self.samples.clone() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounters {
    pub generated: u64,
    /// Samples placed in at least one emitted indication.
    pub delivered: u64,
    /// Samples no active subscription wanted.
    pub unmatched: u64,
    /// Samples buffered for a subscription that was removed before its
    /// bucket closed.
    pub dropped: u64,
}

#[derive(Debug, Clone)]
struct Bucket {
    spec: SubscriptionSpec,
    next_close: u64,
    next_seq: u64,
    pending: Vec<(u64, MetricSample)>,
}

#[derive(Debug, Clone, Copy)]
struct Fate {
    outstanding: u32,
    delivered: bool,
}

/// Buckets an agent's samples per subscription and turns each closed bucket
/// into indications with gapless, strictly increasing seq numbers.
#[derive(Debug, Clone, Default)]
pub struct Reporter {
    buckets: BTreeMap<u32, Bucket>,
    fates: BTreeMap<u64, Fate>,
    next_serial: u64,
    counters: ReportCounters,
}

impl Reporter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counters(&self) -> ReportCounters {
        self.counters
    }

    /// Samples still waiting for their bucket to close.
    pub fn pending(&self) -> u64 {
        self.fates.len() as u64
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = (&u32, &SubscriptionSpec)> {
        self.buckets.iter().map(|(id, b)| (id, &b.spec))
    }

    /// Start bucketing for `sub_id`; the first bucket closes at the next
    /// multiple of the report period after `now`. Seq starts at 1.
    pub fn subscribe(&mut self, sub_id: u32, spec: SubscriptionSpec, now: u64) {
        let period = u64::from(spec.report_period_ms.max(1));
        let next_close = (now / period + 1) * period;
        self.buckets.insert(sub_id, Bucket { spec, next_close, next_seq: 1, pending: Vec::new() });
    }

    pub fn unsubscribe(&mut self, sub_id: u32) {
        if let Some(b) = self.buckets.remove(&sub_id) {
            for (serial, _) in b.pending {
                self.settle(serial, false);
            }
        }
    }

    pub fn unsubscribe_all(&mut self) {
        let ids: Vec<u32> = self.buckets.keys().copied().collect();
        for id in ids {
            self.unsubscribe(id);
        }
    }

    fn settle(&mut self, serial: u64, delivered: bool) {
        let Some(f) = self.fates.get_mut(&serial) else { return };
        if delivered && !f.delivered {
            f.delivered = true;
            self.counters.delivered += 1;
        }
        f.outstanding -= 1;
        if f.outstanding == 0 {
            if !f.delivered {
                self.counters.dropped += 1;
            }
            self.fates.remove(&serial);
        }
    }

    /// Ingest samples taken up to `now` and emit every bucket that closes at
    /// or before `now`, in (close time, sub_id) order.
    pub fn report(&mut self, samples: &[MetricSample], now: u64) -> Vec<ReportedIndication> {
        for sample in samples {
            self.counters.generated += 1;
            let serial = self.next_serial;
            self.next_serial += 1;
            let mut matched = 0u32;
            for b in self.buckets.values_mut() {
                if b.spec.matches(sample) {
                    b.pending.push((serial, sample.clone()));
                    matched += 1;
                }
            }
            if matched == 0 {
                self.counters.unmatched += 1;
            } else {
                self.fates.insert(serial, Fate { outstanding: matched, delivered: false });
            }
        }
        let mut out = Vec::new();
        let mut settled = Vec::new();
        for (&sub_id, b) in self.buckets.iter_mut() {
            let period = u64::from(b.spec.report_period_ms.max(1));
            while b.next_close <= now {
                let close = b.next_close;
                let split = b.pending.partition_point(|(_, s)| s.t <= close);
                let closed: Vec<(u64, MetricSample)> = b.pending.drain(..split).collect();
                if !closed.is_empty() {
                    for chunk in chunk_by_frame(closed) {
                        settled.extend(chunk.iter().map(|(serial, _)| *serial));
                        out.push(ReportedIndication {
                            at: close,
                            sub_id,
                            seq: b.next_seq,
                            samples: chunk.into_iter().map(|(_, s)| s).collect(),
                        });
                        b.next_seq += 1;
                    }
                }
                // skip straight past empty periods
                if b.pending.is_empty() && now >= close + period {
                    b.next_close = (now / period + 1) * period;
                } else {
                    b.next_close += period;
                }
            }
        }
        for serial in settled {
            self.settle(serial, true);
        }
        out.sort_by_key(|i| (i.at, i.sub_id, i.seq));
        out
    }
}

/// Split samples so every indication fits in one frame.
fn chunk_by_frame(samples: Vec<(u64, MetricSample)>) -> Vec<Vec<(u64, MetricSample)>> {
    let mut chunks = Vec::new();
    let mut cur = Vec::new();
    let mut size = INDICATION_OVERHEAD;
    for (serial, s) in samples {
        let len = encoded_sample_len(&s);
        if !cur.is_empty() && (size + len > MAX_PAYLOAD || cur.len() == u16::MAX as usize) {
            chunks.push(std::mem::take(&mut cur));
            size = INDICATION_OVERHEAD;
        }
        size += len;
        cur.push((serial, s));
    }
    if !cur.is_empty() {
        chunks.push(cur);
    }
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::e2::encode;
    use crate::metrics::{Layer, MetricSet};

    fn samples_at(t: u64) -> Vec<MetricSample> {
        Layer::ALL
            .iter()
            .map(|&layer| MetricSample { t, layer, latency: 1.0, ue_id: "ue".into(), cell_id: "cell".into() })
            .collect()
    }

    #[test]
    fn hundred_ms_period_yields_ten_indications() {
        let mut r = Reporter::new();
        r.subscribe(1, SubscriptionSpec::new(100, MetricSet::ALL), 0);
        let mut out = Vec::new();
        for k in 1..=100 {
            out.extend(r.report(&samples_at(k * 10), k * 10));
        }
        assert_eq!(out.len(), 10);
        for (i, ind) in out.iter().enumerate() {
            assert_eq!(ind.seq, i as u64 + 1);
            assert_eq!(ind.at, (i as u64 + 1) * 100);
            assert_eq!(ind.samples.len(), 30);
            assert!(ind.samples.iter().all(|s| s.t > ind.at - 100 && s.t <= ind.at));
        }
        let c = r.counters();
        assert_eq!((c.generated, c.delivered, c.unmatched), (300, 300, 0));
    }

    #[test]
    fn metric_filter_applies() {
        let mut r = Reporter::new();
        r.subscribe(1, SubscriptionSpec::new(50, MetricSet::of(&[Layer::Mac])), 0);
        let out: Vec<_> = (1..=10).flat_map(|k| r.report(&samples_at(k * 10), k * 10)).collect();
        assert!(out.iter().flat_map(|i| &i.samples).all(|s| s.layer == Layer::Mac));
        let c = r.counters();
        assert_eq!(c.delivered, 10);
        assert_eq!(c.unmatched, 20);
    }

    #[test]
    fn cell_filter_applies() {
        let mut r = Reporter::new();
        let mut spec = SubscriptionSpec::new(10, MetricSet::ALL);
        spec.cell_filter = Some("other".into());
        r.subscribe(1, spec, 0);
        assert!(r.report(&samples_at(10), 10).is_empty());
        assert_eq!(r.counters().unmatched, 3);
    }

    #[test]
    fn large_buckets_split_into_frames() {
        let mut r = Reporter::new();
        r.subscribe(9, SubscriptionSpec::new(1000, MetricSet::ALL), 0);
        let many: Vec<MetricSample> = (0..4000)
            .map(|i| MetricSample { t: 500, layer: Layer::Mac, latency: 1.0, ue_id: format!("ue-{i}"), cell_id: "cell".into() })
            .collect();
        let out = r.report(&many, 1000);
        assert!(out.len() > 1);
        assert_eq!(out.iter().map(|i| i.samples.len()).sum::<usize>(), 4000);
        assert_eq!(out.iter().map(|i| i.seq).collect::<Vec<_>>(), (1..=out.len() as u64).collect::<Vec<_>>());
        for ind in &out {
            encode(&ind.to_message()).expect("every chunk fits a frame");
        }
    }

    #[test]
    fn unsubscribe_counts_dropped() {
        let mut r = Reporter::new();
        r.subscribe(1, SubscriptionSpec::new(100, MetricSet::ALL), 0);
        r.report(&samples_at(10), 10);
        assert_eq!(r.pending(), 3);
        r.unsubscribe(1);
        let c = r.counters();
        assert_eq!((c.generated, c.delivered, c.unmatched, c.dropped), (3, 0, 0, 3));
        assert_eq!(r.pending(), 0);
    }

    #[test]
    fn overlapping_subscriptions_deliver_once_each() {
        let mut r = Reporter::new();
        r.subscribe(1, SubscriptionSpec::new(10, MetricSet::ALL), 0);
        r.subscribe(2, SubscriptionSpec::new(20, MetricSet::of(&[Layer::Mac])), 0);
        let out: Vec<_> = (1..=4).flat_map(|k| r.report(&samples_at(k * 10), k * 10)).collect();
        assert_eq!(out.iter().filter(|i| i.sub_id == 1).count(), 4);
        assert_eq!(out.iter().filter(|i| i.sub_id == 2).count(), 2);
        let c = r.counters();
        assert_eq!(c.generated, 12);
        assert_eq!(c.delivered, 12);
        assert_eq!(r.pending(), 0);
    }
}
