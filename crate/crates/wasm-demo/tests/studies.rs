use cxlssd_wasm_demo::{compaction_sweep, context_switch_study, provider_histogram};

#[test]
fn sweep_matches_unit_loads() {
    let points = compaction_sweep(4, 8, 256, 50_000, 500_000, 3).unwrap();
    assert_eq!(points.len(), 7);
    for p in &points {
        assert_eq!(p.sequential_ns, p.pages as u64 * 550_000);
        assert_eq!(p.parallel_ns % 550_000, 0);
        assert!(p.busy_units == 32 && p.speedup >= 8.0, "{p:?}");
    }
    // one unit: nothing to overlap
    let single = compaction_sweep(1, 1, 64, 50_000, 500_000, 3).unwrap();
    assert!(single.iter().all(|p| p.speedup == 1.0));
}

#[test]
fn histograms_by_mode() {
    let c = provider_histogram("constant", 99_720, 0, 0.0, 5_000, 1_000, 1).unwrap();
    assert_eq!((c.bins.len(), c.bins[0].count, c.stddev_ns), (1, 5_000, 0.0));

    let s = provider_histogram("spike", 68_000, 372_000, 0.01, 100_000, 1_000, 1).unwrap();
    assert_eq!(s.bins.len(), 2);
    let frac = s.bins[1].count as f64 / 100_000.0;
    assert!((frac - 0.01).abs() < 0.002, "{frac}");
    assert_eq!(s.bins[1].lower_ns, 440_000);

    let e = provider_histogram("empirical", 0, 0, 0.0, 100_000, 50_000, 1).unwrap();
    assert!((e.stddev_ns / 974_160.0 - 1.0).abs() < 0.05);
    assert!(e.bins.len() > 20);

    assert!(provider_histogram("wavy", 1, 0, 0.0, 1, 1, 1).is_err());
    assert!(provider_histogram("constant", 1, 0, 0.0, 1, 0, 1).is_err());
}

#[test]
fn more_threads_hide_latency() {
    let pts = context_switch_study(3, 0.3, 2_000, 0, 3_000, 4).unwrap();
    assert_eq!(pts.len(), 3);
    assert_eq!(pts[0].context_switches, 0);
    assert!(pts[1].context_switches > 0);
    assert!(pts[1].total_cycles < pts[0].total_cycles);
    assert!(pts[2].total_cycles <= pts[1].total_cycles);
}
