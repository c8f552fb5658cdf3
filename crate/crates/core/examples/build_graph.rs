//! Build a two-level task hierarchy by hand, validate it, flatten it and
//! export the graph exchange format.
//!
//! cargo run --example build_graph

use taskpar::bench::pass_behavior;
use taskpar::{ChildInvocation, ProgramGraph, TaskDefinition, TokenType};

fn main() {
    let mut g = ProgramGraph::new("Top");
    g.add_token_type(TokenType::new("Byte", 8)).unwrap();
    g.add_definition(
        TaskDefinition::leaf("Stage")
            .input("in", "Byte")
            .output("out", "Byte")
            .behavior(pass_behavior()),
    )
    .unwrap();
    // A parent that wraps two stages and forwards its own ports.
    g.add_definition(
        TaskDefinition::parent("Pair")
            .input("in", "Byte")
            .output("out", "Byte")
            .channel("mid", "Byte", 4)
            .invoke(ChildInvocation::of("Stage").pass("in", "in").channel("out", "mid"))
            .invoke(ChildInvocation::of("Stage").channel("in", "mid").pass("out", "out")),
    )
    .unwrap();
    g.add_definition(
        TaskDefinition::parent("Top")
            .input("in", "Byte")
            .output("out", "Byte")
            .channel("link", "Byte", 2)
            .invoke(ChildInvocation::of("Pair").pass("in", "in").channel("out", "link"))
            .invoke(ChildInvocation::of("Pair").channel("in", "link").pass("out", "out")),
    )
    .unwrap();

    let report = g.validate();
    println!("valid: {}", report.is_valid());

    let elab = g.flatten().unwrap();
    println!("instances:");
    for i in &elab.instances {
        println!("  {} ({})", i.path, i.definition);
    }
    println!("channels:");
    for c in &elab.channels {
        println!("  {} cap={} boundary={}", c.path, c.capacity, c.is_boundary());
    }
    println!("stats: {:?}", g.stats().unwrap());

    // A broken variant: a channel with no consumer.
    let mut bad = g.clone();
    bad.add_definition(
        TaskDefinition::parent("Dangling")
            .channel("lost", "Byte", 1)
            .invoke(ChildInvocation::of("Stage").channel("in", "lost").channel("out", "lost2")),
    )
    .unwrap();
    bad.top = "Dangling".into();
    for v in bad.validate().violations {
        println!("violation: {v}");
    }

    let json = g.to_json();
    println!("exported {} bytes of graph JSON", json.len());
}
