//! Run every registered benchmark under several worker counts and check it
//! against its oracle.
//!
//! cargo run --release --example benchmarks

use std::time::Instant;

use taskpar::bench::{self, BenchParams};
use taskpar::scheduler::{run, spawn_all, SchedulerConfig};

fn main() {
    for entry in bench::registry() {
        let b = (entry.build)(&BenchParams { seed: 1, ..Default::default() }).unwrap();
        let stats = b.graph.stats().unwrap();
        print!(
            "{:<10} defs={:<2} inst={:<4} chans={:<4}",
            entry.name, stats.num_definitions, stats.num_instances, stats.num_channels
        );
        for workers in [1, 4] {
            let start = Instant::now();
            let mut state = spawn_all(&b.graph, &b.harness).unwrap();
            let report = run(&mut state, &SchedulerConfig::default().workers(workers)).unwrap();
            let verdict = if b.check(&report).is_ok() { "ok" } else { "MISMATCH" };
            print!(
                "  w{workers}: {} {verdict} steps={} {:.1?}",
                report.outcome.name(),
                report.steps,
                start.elapsed()
            );
        }
        println!();
    }
}
