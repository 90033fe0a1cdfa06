use std::collections::BTreeMap;

use ferryline::geocell::GeoPoint;
use ferryline::traces::{self, LoadOptions, TraceRecord, TraceSet, SECONDS_PER_DAY};
use proptest::prelude::*;

fn record() -> impl Strategy<Value = TraceRecord> {
    (
        0u32..20,
        0i64..86_000,
        -90.0f64..=90.0,
        -180.0f64..=180.0,
        0.0f64..40.0,
        0.0f64..360.0,
    )
        .prop_map(|(v, t, lat, lon, speed, heading)| TraceRecord {
            vehicle_id: format!("car{v}"),
            timestamp: t,
            position: GeoPoint::new(lat, lon).unwrap(),
            speed,
            heading,
        })
}

fn multiset(t: &TraceSet) -> BTreeMap<(String, i64), usize> {
    let mut m = BTreeMap::new();
    for r in t.records() {
        *m.entry((r.vehicle_id.clone(), r.timestamp)).or_default() += 1;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(records in prop::collection::vec(record(), 1..60)) {
        let (t, _) = TraceSet::from_records(records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.save_csv(&path).unwrap();
        let (back, report) = traces::load_csv(&path, &LoadOptions::default()).unwrap();
        prop_assert_eq!(report.duplicates, 0);
        prop_assert!(report.malformed_rows.is_empty());
        prop_assert_eq!(&back, &t);

        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), again);
    }

    #[test]
    fn replication_composes(records in prop::collection::vec(record(), 1..20), a in 1u32..4, b in 1u32..4) {
        let (t, _) = TraceSet::from_records(records).unwrap();
        let direct = traces::replicate_days(&t, a * b).unwrap();
        let inner = traces::replicate_days(&t, a).unwrap();
        let nested = traces::replicate_with_period(&inner, b, i64::from(a) * SECONDS_PER_DAY);
        prop_assert_eq!(multiset(&direct), multiset(&nested));
        prop_assert_eq!(direct.len(), t.len() * (a * b) as usize);
    }
}

#[test]
fn toy_fixture_loads_cleanly() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy_trace.csv");
    let (t, report) = traces::load_csv(&path, &LoadOptions::default()).unwrap();
    assert_eq!(t.len(), 114);
    assert_eq!(report.rows, 114);
    assert!(report.malformed_rows.is_empty());
    assert!(t.span() < SECONDS_PER_DAY);
}
