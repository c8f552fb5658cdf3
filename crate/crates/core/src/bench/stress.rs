//! Instance-count stress: `k` identical pass-through tasks in a chain
//! between the top-level ports `in` and `out`. The harness feeds `in`;
//! whatever leaves `out` is recorded under `out`.

use std::collections::BTreeMap;

use super::{pass_behavior, BenchError, BenchInstance, BenchParams, Oracle};
use crate::channel::Token;
use crate::graph::{ChildInvocation, ProgramGraph, TaskDefinition, TokenType};
use crate::scheduler::Harness;

pub const MAX_CHAIN: usize = 100_000;
pub const DEFAULT_CHAIN: usize = 564;

/// The graph alone; chain channels have capacity 2.
pub fn stress_graph(k: usize) -> Result<ProgramGraph, BenchError> {
    if !(1..=MAX_CHAIN).contains(&k) {
        return Err(BenchError::BadSize(format!("stress chain length must be in 1..={MAX_CHAIN}, got {k}")));
    }
    let mut g = ProgramGraph::new("Stress");
    g.add_token_type(TokenType::new("Word", 32)).expect("fresh graph");
    g.add_definition(
        TaskDefinition::leaf("Pass")
            .input("in", "Word")
            .output("out", "Word")
            .behavior(pass_behavior()),
    )
    .expect("fresh graph");

    let mut top = TaskDefinition::parent("Stress").input("in", "Word").output("out", "Word");
    for i in 0..k - 1 {
        top = top.channel(format!("c{i}"), "Word", 2);
    }
    for i in 0..k {
        let mut call = ChildInvocation::of("Pass");
        call = if i == 0 { call.pass("in", "in") } else { call.channel("in", format!("c{}", i - 1)) };
        call = if i + 1 == k { call.pass("out", "out") } else { call.channel("out", format!("c{i}")) };
        top = top.invoke(call);
    }
    g.add_definition(top).expect("fresh graph");
    Ok(g)
}

/// Chain of `k` stages carrying `tokens` values.
pub fn build_stress(k: usize, tokens: usize) -> Result<BenchInstance, BenchError> {
    let graph = stress_graph(k)?;
    let values: Vec<u64> = (0..tokens as u64).map(|v| v * 3 + 1).collect();
    let mut feed: Vec<Token> = values.iter().map(|v| Token::Data(*v)).collect();
    feed.push(Token::Eot);
    Ok(BenchInstance {
        name: "stress".into(),
        graph,
        harness: Harness::new().feed("in", feed),
        oracle: Oracle::Exact(BTreeMap::from([("out".into(), values)])),
    })
}

pub fn from_params(p: &BenchParams) -> Result<BenchInstance, BenchError> {
    let k = p.instances.or(p.size).unwrap_or(DEFAULT_CHAIN);
    build_stress(k, 16)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{run, spawn_all, RunOutcome, SchedulerConfig};

    #[test]
    fn chain_counts() {
        let stats = stress_graph(256).unwrap().stats().unwrap();
        assert_eq!((stats.num_definitions, stats.num_instances, stats.num_channels), (1, 256, 257));
    }

    #[test]
    fn short_chain_forwards_in_order() {
        let bench = build_stress(5, 20).unwrap();
        let mut state = spawn_all(&bench.graph, &bench.harness).unwrap();
        let report = run(&mut state, &SchedulerConfig::default()).unwrap();
        assert_eq!(report.outcome, RunOutcome::Completed);
        bench.check(&report).unwrap();
        assert!(report.is_drained());
    }

    #[test]
    fn single_stage_chain() {
        let bench = build_stress(1, 3).unwrap();
        let mut state = spawn_all(&bench.graph, &bench.harness).unwrap();
        let report = run(&mut state, &SchedulerConfig::sequential()).unwrap();
        assert_eq!(report.outcome, RunOutcome::Completed);
        bench.check(&report).unwrap();
    }

    #[test]
    fn bad_sizes() {
        assert!(build_stress(0, 1).is_err());
    }
}
