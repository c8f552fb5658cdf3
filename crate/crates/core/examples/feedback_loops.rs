//! Programs with feedback channels: the sequential baseline gets stuck,
//! cooperative scheduling completes and matches the oracle.
//!
//! cargo run --example feedback_loops

use taskpar::bench::{self, BenchParams};
use taskpar::scheduler::{run, spawn_all, SchedulerConfig};

fn main() {
    for name in ["cannon", "page_rank", "pipeline"] {
        let b = bench::build(name, &BenchParams::default()).unwrap();
        for config in [SchedulerConfig::sequential(), SchedulerConfig::default().workers(2)] {
            let mut state = spawn_all(&b.graph, &b.harness).unwrap();
            let report = run(&mut state, &config).unwrap();
            let oracle = match report.outcome.is_completed() {
                true => match b.check(&report) {
                    Ok(()) => "oracle ok".to_owned(),
                    Err(e) => format!("oracle mismatch: {e}"),
                },
                false => String::new(),
            };
            println!("{name:<10} {:<10} {:<18} {oracle}", report.mode, report.outcome.name());
            if let taskpar::RunOutcome::SequentialFailure { instance, channel } = &report.outcome {
                println!("           stuck: {instance} reading empty {channel}");
            }
        }
    }
    let b = bench::build("cannon", &BenchParams::default()).unwrap();
    let mut state = spawn_all(&b.graph, &b.harness).unwrap();
    let report = run(&mut state, &SchedulerConfig::default()).unwrap();
    println!("cannon C = {:?}", report.output("C"));
}
