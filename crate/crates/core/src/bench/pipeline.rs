//! A linear pipeline: `Source` writes `0..n`, a chain of pass-through stages
//! forwards it, and `Sink` emits what arrives under `sink`.

use std::collections::BTreeMap;

use super::{pass_behavior, BenchError, BenchInstance, BenchParams, Oracle};
use crate::graph::{ChildInvocation, ProgramGraph, ScalarValue, TaskDefinition, TokenType};
use crate::scheduler::behavior::{BehaviorRef, TaskIo};
use crate::scheduler::Harness;

pub const MAX_STAGES: usize = 4096;

pub fn source_behavior() -> BehaviorRef {
    BehaviorRef::from_async("pipeline.source", |io: TaskIo| async move {
        let n = io.scalar_int("n")?;
        let out = io.ostream("out")?;
        for v in 0..n {
            out.write(v as u64).await?;
        }
        out.close().await
    })
}

pub fn sink_behavior() -> BehaviorRef {
    BehaviorRef::from_async("pipeline.sink", |io: TaskIo| async move {
        let input = io.istream("in")?;
        while !input.eot().await {
            let v = input.read_data().await?;
            io.emit("sink", v);
        }
        input.read_eot().await
    })
}

pub fn build_pipeline(tokens: usize, stages: usize, capacity: usize) -> Result<BenchInstance, BenchError> {
    if stages > MAX_STAGES {
        return Err(BenchError::BadSize(format!("at most {MAX_STAGES} stages")));
    }
    if capacity == 0 {
        return Err(BenchError::BadSize("channel capacity must be positive".into()));
    }
    let mut g = ProgramGraph::new("Pipeline");
    g.add_token_type(TokenType::new("Word", 32)).expect("fresh graph");
    g.add_definition(
        TaskDefinition::leaf("Source")
            .output("out", "Word")
            .scalar("n")
            .behavior(source_behavior()),
    )
    .expect("fresh graph");
    g.add_definition(
        TaskDefinition::leaf("Pass")
            .input("in", "Word")
            .output("out", "Word")
            .behavior(pass_behavior()),
    )
    .expect("fresh graph");
    g.add_definition(TaskDefinition::leaf("Sink").input("in", "Word").behavior(sink_behavior()))
        .expect("fresh graph");

    let mut top = TaskDefinition::parent("Pipeline");
    for s in 0..=stages {
        top = top.channel(format!("c{s}"), "Word", capacity);
    }
    top = top.invoke(
        ChildInvocation::of("Source")
            .channel("out", "c0")
            .scalar("n", ScalarValue::Int(tokens as i64)),
    );
    for s in 0..stages {
        top = top.invoke(
            ChildInvocation::of("Pass")
                .channel("in", format!("c{s}"))
                .channel("out", format!("c{}", s + 1)),
        );
    }
    g.add_definition(top.invoke(ChildInvocation::of("Sink").channel("in", format!("c{stages}"))))
        .expect("fresh graph");

    Ok(BenchInstance {
        name: "pipeline".into(),
        graph: g,
        harness: Harness::new(),
        oracle: Oracle::Exact(BTreeMap::from([("sink".into(), (0..tokens as u64).collect())])),
    })
}

pub fn from_params(p: &BenchParams) -> Result<BenchInstance, BenchError> {
    build_pipeline(p.size.unwrap_or(100), p.instances.unwrap_or(3), 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{run, spawn_all, RunOutcome, SchedulerConfig};

    #[test]
    fn both_modes_deliver_everything() {
        let bench = build_pipeline(50, 4, 1).unwrap();
        for config in [SchedulerConfig::default(), SchedulerConfig::sequential(), SchedulerConfig::default().workers(3)] {
            let mut state = spawn_all(&bench.graph, &bench.harness).unwrap();
            let report = run(&mut state, &config).unwrap();
            assert_eq!(report.outcome, RunOutcome::Completed);
            bench.check(&report).unwrap();
            assert!(report.is_drained());
        }
    }

    #[test]
    fn zero_stages_and_zero_tokens() {
        let bench = build_pipeline(0, 0, 2).unwrap();
        let mut state = spawn_all(&bench.graph, &bench.harness).unwrap();
        let report = run(&mut state, &SchedulerConfig::default()).unwrap();
        assert_eq!(report.outcome, RunOutcome::Completed);
        assert_eq!(report.total_eot_tokens(), 1);
    }
}
