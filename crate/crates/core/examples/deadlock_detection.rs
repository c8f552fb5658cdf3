//! A read cycle with no initial tokens. The run stops with a wait-for chain
//! naming the tasks and channels involved.
//!
//! cargo run --example deadlock_detection

use taskpar::bench::pass_behavior;
use taskpar::scheduler::{run, spawn_all, SchedulerConfig};
use taskpar::{ChildInvocation, Harness, ProgramGraph, RunOutcome, TaskDefinition, TokenType};

fn main() {
    let mut g = ProgramGraph::new("Loop");
    g.add_token_type(TokenType::new("W", 16)).unwrap();
    g.add_definition(
        TaskDefinition::leaf("Relay")
            .input("in", "W")
            .output("out", "W")
            .behavior(pass_behavior()),
    )
    .unwrap();
    let mut top = TaskDefinition::parent("Loop");
    for i in 0..3 {
        top = top.channel(format!("c{i}"), "W", 1).invoke(
            ChildInvocation::of("Relay")
                .channel("in", format!("c{i}"))
                .channel("out", format!("c{}", (i + 1) % 3)),
        );
    }
    g.add_definition(top).unwrap();

    for workers in [1, 3] {
        let mut state = spawn_all(&g, &Harness::new()).unwrap();
        let report = run(&mut state, &SchedulerConfig::default().workers(workers)).unwrap();
        match &report.outcome {
            RunOutcome::Deadlock(chain) => {
                println!("workers={workers}: deadlock");
                println!("  {chain}");
                println!("  instances: {:?}", chain.instances().collect::<Vec<_>>());
            }
            other => println!("workers={workers}: {}", other.name()),
        }
    }
}
