use proptest::prelude::*;
use taskpar::bench::{self, BenchParams};
use taskpar::scheduler::{run, spawn_all, SchedulerConfig};
use taskpar::ProgramGraph;

#[test]
fn every_benchmark_survives_export_and_import() {
    let library = bench::behaviors();
    for e in bench::registry() {
        let b = (e.build)(&BenchParams::default()).unwrap();
        let text = b.graph.to_json();
        let mut imported = ProgramGraph::from_json(&text).unwrap();
        assert_eq!(imported.stats().unwrap(), b.graph.stats().unwrap(), "{}", e.name);
        assert_eq!(imported.to_json(), text, "{}: export is not a fixed point", e.name);

        // Imported behaviors are placeholders until resolved by key.
        assert!(spawn_all(&imported, &b.harness).is_err());
        assert!(imported.resolve_behaviors(&library).is_empty(), "{}", e.name);
        let mut state = spawn_all(&imported, &b.harness).unwrap();
        let report = run(&mut state, &SchedulerConfig::default()).unwrap();
        b.check(&report).unwrap_or_else(|m| panic!("{}: {m}", e.name));
    }
}

#[test]
fn import_rejects_garbage() {
    assert!(ProgramGraph::from_json("[]").is_err());
    assert!(ProgramGraph::from_json("{\"top\": 3}").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ring_sizes_round_trip(n in 2usize..40, seed in 0u64..1000) {
        let b = bench::build("ring", &BenchParams { size: Some(n), seed, ..Default::default() }).unwrap();
        let imported = ProgramGraph::from_json(&b.graph.to_json()).unwrap();
        let stats = imported.stats().unwrap();
        prop_assert_eq!((stats.num_definitions, stats.num_instances, stats.num_channels), (2, 2 * n, 3 * n));
    }
}
