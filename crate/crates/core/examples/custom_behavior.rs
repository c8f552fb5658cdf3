//! Write a leaf behavior as an async block, feed the top-level input from
//! the harness and read the drained output.
//!
//! cargo run --example custom_behavior

use taskpar::channel::Token;
use taskpar::scheduler::{run, spawn_all, SchedulerConfig};
use taskpar::{BehaviorRef, ChildInvocation, Harness, ProgramGraph, TaskDefinition, TaskIo, TokenType};

/// Emits a running sum per transaction: every EoT on the input closes one
/// group, which becomes one output value followed by an EoT.
fn group_sum() -> BehaviorRef {
    BehaviorRef::from_async("example.group_sum", |io: TaskIo| async move {
        let input = io.istream("in")?;
        let out = io.ostream("out")?;
        let groups = io.scalar_int("groups")?;
        for _ in 0..groups {
            let mut sum = 0;
            // Peek for the end of the group without consuming it.
            while !input.eot().await {
                sum += input.read_data().await?;
            }
            input.read_eot().await?;
            out.write(sum).await?;
        }
        out.close().await
    })
}

fn main() {
    let mut g = ProgramGraph::new("Top");
    g.add_token_type(TokenType::new("Word", 32)).unwrap();
    g.add_definition(
        TaskDefinition::leaf("GroupSum")
            .input("in", "Word")
            .output("out", "Word")
            .scalar("groups")
            .behavior(group_sum()),
    )
    .unwrap();
    g.add_definition(
        TaskDefinition::parent("Top").input("in", "Word").output("out", "Word").invoke(
            ChildInvocation::of("GroupSum")
                .pass("in", "in")
                .pass("out", "out")
                .scalar("groups", taskpar::ScalarValue::Int(3)),
        ),
    )
    .unwrap();

    let d = Token::Data;
    let feed = [d(1), d(2), d(3), Token::Eot, Token::Eot, d(40), d(2), Token::Eot];
    let harness = Harness::new().feed("in", feed);
    let mut state = spawn_all(&g, &harness).unwrap();
    let report = run(&mut state, &SchedulerConfig::default()).unwrap();
    println!("outcome: {}", report.outcome.name());
    println!("group sums: {:?}", report.output("out"));
    println!("drained: {}", report.is_drained());
}
