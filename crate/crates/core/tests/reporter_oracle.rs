mod oracles;

use std::collections::BTreeMap;

use ara_core::e2::SubscriptionSpec;
use ara_core::metrics::{Layer, MetricSample, MetricSet};
use ara_core::ransim::Reporter;
use proptest::prelude::*;

fn spec() -> impl Strategy<Value = SubscriptionSpec> {
    (
        prop_oneof![Just(10u32), Just(50), Just(100), 1u32..300],
        proptest::collection::vec(prop_oneof![Just(Layer::Rlc), Just(Layer::Pdcp), Just(Layer::Mac)], 1..4),
        proptest::option::of(prop_oneof![Just("c0".to_string()), Just("c1".to_string())]),
    )
        .prop_map(|(p, ls, cell)| SubscriptionSpec { report_period_ms: p, metric_set: MetricSet::of(&ls), cell_filter: cell })
}

/// Steps of (dt, samples taken in that step as (offset back from now, layer, cell)).
fn steps() -> impl Strategy<Value = Vec<(u64, Vec<(u8, u8, bool)>)>> {
    proptest::collection::vec((1u64..120, proptest::collection::vec((any::<u8>(), 0u8..3, any::<bool>()), 0..6)), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn buckets_match_oracle(specs in proptest::collection::vec(spec(), 1..4), start in 0u64..1000, steps in steps()) {
        let mut r = Reporter::new();
        for (i, s) in specs.iter().enumerate() {
            r.subscribe(i as u32 + 1, s.clone(), start);
        }
        let mut now = start;
        let mut all = Vec::new();
        let mut out = Vec::new();
        for (dt, raw) in steps {
            let prev = now;
            now += dt;
            let mut batch: Vec<MetricSample> = raw
                .into_iter()
                .map(|(back, l, c)| MetricSample {
                    t: now - u64::from(back) % dt,
                    layer: Layer::ALL[l as usize],
                    latency: 1.0,
                    ue_id: "ue".into(),
                    cell_id: if c { "c1" } else { "c0" }.into(),
                })
                .collect();
            batch.sort_by_key(|s| s.t);
            prop_assert!(batch.iter().all(|s| s.t > prev));
            all.extend(batch.iter().cloned());
            out.extend(r.report(&batch, now));
        }
        for (i, s) in specs.iter().enumerate() {
            let sub = i as u32 + 1;
            let mine: Vec<_> = out.iter().filter(|x| x.sub_id == sub).collect();
            let seqs: Vec<u64> = mine.iter().map(|x| x.seq).collect();
            prop_assert_eq!(seqs, (1..=mine.len() as u64).collect::<Vec<_>>());
            let mut got: BTreeMap<u64, Vec<MetricSample>> = BTreeMap::new();
            for x in &mine {
                got.entry(x.at).or_default().extend(x.samples.iter().cloned());
            }
            let want: BTreeMap<u64, Vec<MetricSample>> = oracles::reporter::expected(s, start, &all, now).into_iter().collect();
            prop_assert_eq!(got, want);
        }
        let c = r.counters();
        prop_assert_eq!(c.generated, all.len() as u64);
        prop_assert!(c.delivered + c.unmatched <= c.generated);
        prop_assert!(c.generated <= c.delivered + c.unmatched + r.pending());
        r.unsubscribe_all();
        let c = r.counters();
        prop_assert_eq!(r.pending(), 0);
        prop_assert_eq!(c.generated, c.delivered + c.unmatched + c.dropped);
    }
}
