use std::path::Path;

use ferryline::geocell::CellId;
use ferryline::simulator::{
    run_block, run_experiment, run_experiment_sequential, run_experiment_threads, RunConfig,
    Selector,
};
use ferryline::traces::{self, LoadOptions};
use ferryline::world::{self, BlockProfile, FerryOffer, TrafficClass, WorldConfig};
use proptest::prelude::*;

fn block() -> CellId {
    CellId::parse("wtw3u4y").unwrap()
}

fn offers() -> impl Strategy<Value = Vec<FerryOffer>> {
    prop::collection::vec((1i64..3600, 1i64..20_000), 1..120).prop_map(|v| {
        let mut t = 0;
        v.into_iter()
            .map(|(gap, d)| {
                t += gap;
                FerryOffer {
                    block: block(),
                    vehicle_id: format!("v{t}"),
                    time: t,
                    delivery_delay: d,
                }
            })
            .collect()
    })
}

fn profile(tau_low: i64, tau_high: i64) -> BlockProfile {
    BlockProfile {
        block: block(),
        offer_count: 0,
        tau_low,
        tau_high,
        traffic_class: TrafficClass::High,
    }
}

proptest! {
    /// Lowering a fixed threshold never raises the average delivery delay.
    #[test]
    fn tighter_threshold_never_raises_delivery(stream in offers(), a in 1i64..20_000, b in 1i64..20_000) {
        let (small, large) = (a.min(b), a.max(b));
        let cfg = RunConfig { selector: Selector::Low, ..RunConfig::default() };
        let tight = run_block(&stream, &profile(small, large), &cfg, 0).unwrap();
        let loose = run_block(&stream, &profile(large, large), &cfg, 0).unwrap();
        prop_assert!(tight.accepted_count <= loose.accepted_count);
        if let (Some(t), Some(l)) = (tight.avg_delivery, loose.avg_delivery) {
            prop_assert!(t <= l);
        }
    }

    /// Totals are sums over the hourly series.
    #[test]
    fn hourly_series_adds_up(stream in offers(), sel in 0usize..5, seed in any::<u64>()) {
        let cfg = RunConfig { selector: Selector::ALL[sel], seed, ..RunConfig::default() };
        let m = run_block(&stream, &profile(900, 15_000), &cfg, 0).unwrap();
        let offers: u64 = m.hourly_series.iter().map(|h| h.offers).sum();
        let accepted: u64 = m.hourly_series.iter().map(|h| h.accepted).sum();
        prop_assert_eq!(offers, stream.len() as u64);
        prop_assert_eq!(accepted, m.accepted_count);
        prop_assert!(m.hourly_series.windows(2).all(|w| w[0].hour < w[1].hour));
        let last = stream.last().unwrap().time;
        prop_assert!(m.total_waiting <= last);
    }
}

fn toy_world(days: u32) -> world::World {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy_trace.csv");
    let t = traces::load_csv(&path, &LoadOptions::default()).unwrap().0;
    world::build_world(&t, &WorldConfig::default())
        .unwrap()
        .replicate(days)
        .unwrap()
}

#[test]
fn blocks_run_independently() {
    let w = toy_world(2);
    for s in Selector::ALL {
        let cfg = RunConfig {
            selector: s,
            days: 2,
            seed: 3,
            ..RunConfig::default()
        };
        let report = run_experiment(&w, &cfg).unwrap();
        // Each block replayed alone, in reverse order.
        for b in report.blocks.iter().rev() {
            let alone =
                run_block(&w.offers[&b.block], &w.profiles[&b.block], &cfg, w.start).unwrap();
            assert_eq!(&alone, b);
        }
    }
}

#[test]
fn thread_count_does_not_change_reports() {
    let w = toy_world(3);
    let cfg = RunConfig {
        selector: Selector::Ensemble,
        days: 3,
        seed: 9,
        ..RunConfig::default()
    };
    let one = run_experiment_sequential(&w, &cfg).unwrap();
    for threads in [2, 3, 8] {
        assert_eq!(run_experiment_threads(&w, &cfg, threads).unwrap(), one);
    }
}

#[test]
fn single_block_class_equals_block() {
    let w = toy_world(1);
    let cfg = RunConfig {
        selector: Selector::High,
        ..RunConfig::default()
    };
    let r = run_experiment_sequential(&w, &cfg).unwrap();
    let high = r
        .classes
        .iter()
        .find(|c| c.class == TrafficClass::High)
        .unwrap();
    let b = r
        .blocks
        .iter()
        .find(|b| b.traffic_class == TrafficClass::High)
        .unwrap();
    assert_eq!(high.blocks, 1);
    assert_eq!(high.avg_overall, b.avg_overall);
    assert_eq!(high.avg_waiting, b.avg_waiting);
    assert_eq!(high.avg_delivery, b.avg_delivery);
}
