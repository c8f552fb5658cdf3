//! Reproducibility of reports and traces, and trace replay under
//! multi-worker scheduling.

use std::collections::BTreeMap;

use taskpar::bench::{self, BenchInstance, BenchParams};
use taskpar::scheduler::{run_traced, spawn_all, trace, SchedulerConfig, SchedulerMode};

fn traced(b: &BenchInstance, config: &SchedulerConfig) -> (taskpar::RunReport, Vec<trace::TraceEvent>) {
    let mut state = spawn_all(&b.graph, &b.harness).unwrap();
    run_traced(&mut state, config).unwrap()
}

fn capacities(b: &BenchInstance, mode: SchedulerMode) -> BTreeMap<String, Option<usize>> {
    b.graph
        .flatten()
        .unwrap()
        .channels
        .iter()
        .map(|c| (c.path.clone(), (mode == SchedulerMode::Coroutine).then_some(c.capacity)))
        .collect()
}

#[test]
fn single_worker_runs_are_bit_identical() {
    for e in bench::registry() {
        for seed in [0, 9] {
            let b = (e.build)(&BenchParams { seed, ..Default::default() }).unwrap();
            let config = SchedulerConfig::default().seed(seed);
            let (r0, t0) = traced(&b, &config);
            let text = trace::render(&t0);
            for _ in 0..4 {
                let (r, t) = traced(&b, &config);
                assert_eq!(r, r0, "{}", e.name);
                assert_eq!(trace::render(&t), text, "{}", e.name);
            }
        }
    }
}

#[test]
fn rendered_trace_parses_back() {
    let b = bench::build("ring", &BenchParams::default()).unwrap();
    let (_, events) = traced(&b, &SchedulerConfig::default());
    let text = trace::render(&events);
    let parsed: Vec<_> = text.lines().map(|l| trace::TraceEvent::parse(l).unwrap()).collect();
    assert_eq!(parsed, events);
}

#[test]
fn multi_worker_traces_replay() {
    for e in bench::registry() {
        let b = (e.build)(&BenchParams::default()).unwrap();
        for seed in 0..4 {
            let config = SchedulerConfig::default().workers(4).seed(seed);
            let (report, events) = traced(&b, &config);
            assert!(report.outcome.is_completed(), "{}", e.name);
            trace::validate_replay(&events, &capacities(&b, SchedulerMode::Coroutine))
                .unwrap_or_else(|m| panic!("{} seed {seed}: {m}", e.name));
            // Whatever the interleaving, each channel carries the same tokens.
            let (_, single) = traced(&b, &SchedulerConfig::default());
            if e.name != "network" && e.name != "ring" {
                assert_eq!(trace::written_sequences(&events), trace::written_sequences(&single), "{}", e.name);
            }
        }
    }
}

#[test]
fn sequential_traces_replay_without_capacity() {
    let b = bench::build("pipeline", &BenchParams::default()).unwrap();
    let (report, events) = traced(&b, &SchedulerConfig::sequential());
    assert!(report.outcome.is_completed());
    trace::validate_replay(&events, &capacities(&b, SchedulerMode::Sequential)).unwrap();
}
