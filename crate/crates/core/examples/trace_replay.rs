//! Record a multi-worker trace, print a few lines and check that every
//! channel's history replays through a plain queue.
//!
//! cargo run --example trace_replay

use std::collections::BTreeMap;

use taskpar::bench::{self, BenchParams};
use taskpar::scheduler::{run_traced, spawn_all, trace, SchedulerConfig};

fn main() {
    let b = bench::build("network", &BenchParams::default()).unwrap();
    let capacities: BTreeMap<String, Option<usize>> = b
        .graph
        .flatten()
        .unwrap()
        .channels
        .iter()
        .map(|c| (c.path.clone(), Some(c.capacity)))
        .collect();

    let mut state = spawn_all(&b.graph, &b.harness).unwrap();
    let (report, events) = run_traced(&mut state, &SchedulerConfig::default().workers(4).seed(3)).unwrap();
    println!("{} events, outcome {}", events.len(), report.outcome.name());
    for line in trace::render(&events).lines().take(8) {
        println!("  {line}");
    }
    match trace::validate_replay(&events, &capacities) {
        Ok(()) => println!("replay: valid"),
        Err(e) => println!("replay: {e}"),
    }
    let busiest = trace::written_sequences(&events)
        .into_iter()
        .max_by_key(|(_, tokens)| tokens.len())
        .unwrap();
    println!("busiest channel {} carried {} tokens", busiest.0, busiest.1.len());
}
