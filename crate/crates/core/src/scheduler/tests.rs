use super::behavior::BehaviorRef;
use super::*;
use crate::graph::{ChildInvocation, ScalarValue, TaskDefinition, TokenType};

fn source() -> BehaviorRef {
    BehaviorRef::from_async("test.source", |io: TaskIo| async move {
        let out = io.ostream("out")?;
        for v in 0..io.scalar_int("n")? as u64 {
            out.write(v).await?;
        }
        out.close().await
    })
}

fn sink() -> BehaviorRef {
    BehaviorRef::from_async("test.sink", |io: TaskIo| async move {
        let input = io.istream("in")?;
        while let Token::Data(v) = input.read().await {
            io.emit("sink", v);
        }
        Ok(())
    })
}

fn chain(n: i64, capacity: usize) -> ProgramGraph {
    let mut g = ProgramGraph::new("Top");
    g.add_token_type(TokenType::new("Word", 32)).unwrap();
    g.add_definition(TaskDefinition::leaf("Src").output("out", "Word").scalar("n").behavior(source()))
        .unwrap();
    g.add_definition(TaskDefinition::leaf("Snk").input("in", "Word").behavior(sink()))
        .unwrap();
    g.add_definition(
        TaskDefinition::parent("Top")
            .channel("c", "Word", capacity)
            .invoke(ChildInvocation::of("Src").channel("out", "c").scalar("n", ScalarValue::Int(n)))
            .invoke(ChildInvocation::of("Snk").channel("in", "c")),
    )
    .unwrap();
    g
}

/// Two tasks that each read from the other before writing.
fn read_cycle() -> ProgramGraph {
    let body = BehaviorRef::from_async("test.read_first", |io: TaskIo| async move {
        let input = io.istream("in")?;
        let out = io.ostream("out")?;
        let v = input.read_data().await?;
        out.write(v).await
    });
    let mut g = ProgramGraph::new("Top");
    g.add_token_type(TokenType::new("Word", 32)).unwrap();
    g.add_definition(TaskDefinition::leaf("P").input("in", "Word").output("out", "Word").behavior(body))
        .unwrap();
    g.add_definition(
        TaskDefinition::parent("Top")
            .channel("ab", "Word", 2)
            .channel("ba", "Word", 2)
            .invoke(ChildInvocation::of("P").channel("in", "ba").channel("out", "ab"))
            .invoke(ChildInvocation::of("P").channel("in", "ab").channel("out", "ba")),
    )
    .unwrap();
    g
}

#[test]
fn spawn_all_creates_pending_contexts() {
    let state = spawn_all(&chain(3, 2), &Harness::new()).unwrap();
    assert_eq!(state.task_contexts(), 2);
    assert_eq!(state.harness_contexts(), 0);
    assert!(state.all_pending());
}

#[test]
fn chain_completes_with_capacity_one() {
    let mut state = spawn_all(&chain(10, 1), &Harness::new()).unwrap();
    let report = run(&mut state, &SchedulerConfig::default()).unwrap();
    assert_eq!(report.outcome, RunOutcome::Completed);
    assert_eq!(report.output("sink"), (0..10).collect::<Vec<_>>());
    let c = report.channel("Top/c").unwrap();
    assert_eq!(c.stats.max_occupancy, 1);
    assert_eq!(c.stats.total_written, 11);
    assert!(report.is_drained());
}

#[test]
fn second_run_is_rejected() {
    let mut state = spawn_all(&chain(1, 2), &Harness::new()).unwrap();
    run(&mut state, &SchedulerConfig::default()).unwrap();
    assert!(matches!(
        run(&mut state, &SchedulerConfig::default()),
        Err(SimError::AlreadyRun)
    ));
}

#[test]
fn read_cycle_deadlocks_with_cycle_chain() {
    for workers in [1, 2] {
        let mut state = spawn_all(&read_cycle(), &Harness::new()).unwrap();
        let report = run(&mut state, &SchedulerConfig::default().workers(workers)).unwrap();
        let RunOutcome::Deadlock(chain) = report.outcome else {
            panic!("expected deadlock, got {:?}", report.outcome);
        };
        assert_eq!(chain.cause, deadlock::DeadlockCause::Cycle);
        assert_eq!(chain.links.len(), 2);
        let mut insts: Vec<_> = chain.instances().collect();
        insts.sort();
        assert_eq!(insts, ["Top/P.0", "Top/P.1"]);
    }
}

#[test]
fn sequential_mode_handles_feed_forward_and_ignores_capacity() {
    let mut state = spawn_all(&chain(5, 1), &Harness::new()).unwrap();
    let report = run(&mut state, &SchedulerConfig::sequential()).unwrap();
    assert_eq!(report.outcome, RunOutcome::Completed);
    assert_eq!(report.channel("Top/c").unwrap().stats.max_occupancy, 6);
}

#[test]
fn sequential_mode_fails_on_feedback() {
    let mut state = spawn_all(&read_cycle(), &Harness::new()).unwrap();
    let report = run(&mut state, &SchedulerConfig::sequential()).unwrap();
    assert_eq!(
        report.outcome,
        RunOutcome::SequentialFailure {
            instance: "Top/P.0".into(),
            channel: "Top/ba".into()
        }
    );
}

#[test]
fn watchdog_stops_runaway() {
    let spin = BehaviorRef::new("test.spin", |io: TaskIo| {
        struct Spin(IStream);
        impl LeafBehavior for Spin {
            fn resume(&mut self) -> Result<StepOutcome, BehaviorError> {
                Ok(StepOutcome::Yielded(self.0.wait_reason()))
            }
        }
        Box::new(Spin(io.istream("in").unwrap()))
    });
    let mut g = ProgramGraph::new("Top");
    g.add_token_type(TokenType::new("Word", 32)).unwrap();
    g.add_definition(TaskDefinition::leaf("Src").output("out", "Word").scalar("n").behavior(source()))
        .unwrap();
    g.add_definition(TaskDefinition::leaf("Spin").input("in", "Word").behavior(spin)).unwrap();
    g.add_definition(
        TaskDefinition::parent("Top")
            .channel("c", "Word", 4)
            .invoke(ChildInvocation::of("Src").channel("out", "c").scalar("n", ScalarValue::Int(1)))
            .invoke(ChildInvocation::of("Spin").channel("in", "c")),
    )
    .unwrap();
    let mut state = spawn_all(&g, &Harness::new()).unwrap();
    let report = run(&mut state, &SchedulerConfig::default().max_steps(50)).unwrap();
    assert_eq!(report.outcome, RunOutcome::WatchdogExpired { max_steps: 50 });
    assert_eq!(report.steps, 50);
}

#[test]
fn behavior_error_is_reported() {
    let bad = BehaviorRef::from_async("test.bad", |io: TaskIo| async move {
        io.ostream("out")?.write(1 << 40).await
    });
    let mut g = ProgramGraph::new("Top");
    g.add_token_type(TokenType::new("Word", 32)).unwrap();
    g.add_definition(TaskDefinition::leaf("Bad").output("out", "Word").behavior(bad)).unwrap();
    g.add_definition(TaskDefinition::leaf("Snk").input("in", "Word").behavior(sink())).unwrap();
    g.add_definition(
        TaskDefinition::parent("Top")
            .channel("c", "Word", 2)
            .invoke(ChildInvocation::of("Bad").channel("out", "c"))
            .invoke(ChildInvocation::of("Snk").channel("in", "c")),
    )
    .unwrap();
    let mut state = spawn_all(&g, &Harness::new()).unwrap();
    let err = run(&mut state, &SchedulerConfig::default()).unwrap_err();
    assert!(matches!(err, SimError::BehaviorPanic { ref instance, .. } if instance == "Top/Bad.0"));
}

#[test]
fn missing_behavior_is_rejected_at_spawn() {
    let mut g = ProgramGraph::new("Solo");
    g.add_definition(TaskDefinition::leaf("Solo")).unwrap();
    assert!(matches!(
        spawn_all(&g, &Harness::new()),
        Err(SimError::MissingBehavior(name)) if name == "Solo"
    ));
}

#[test]
fn boundary_ports_are_fed_and_drained() {
    let pass = BehaviorRef::from_async("test.pass", |io: TaskIo| async move {
        let input = io.istream("in")?;
        let out = io.ostream("out")?;
        loop {
            match input.read().await {
                Token::Data(v) => out.write(v * 2).await?,
                Token::Eot => return out.close().await,
            }
        }
    });
    let mut g = ProgramGraph::new("Dbl");
    g.add_token_type(TokenType::new("Word", 32)).unwrap();
    g.add_definition(TaskDefinition::leaf("Dbl").input("in", "Word").output("out", "Word").behavior(pass))
        .unwrap();
    let harness = Harness::new().feed("in", (1..=5).map(Token::Data).chain([Token::Eot]));
    let mut state = spawn_all(&g, &harness).unwrap();
    assert_eq!(state.harness_contexts(), 2);
    let report = run(&mut state, &SchedulerConfig::default()).unwrap();
    assert_eq!(report.outcome, RunOutcome::Completed);
    assert_eq!(report.output("out"), [2, 4, 6, 8, 10]);

    assert!(matches!(
        spawn_all(&g, &Harness::new().feed("nope", [])),
        Err(SimError::UnknownBoundaryPort(_))
    ));
}

#[test]
fn traced_runs_replay() {
    let mut state = spawn_all(&chain(20, 2), &Harness::new()).unwrap();
    let (report, events) = run_traced(&mut state, &SchedulerConfig::default()).unwrap();
    assert!(report.outcome.is_completed());
    let caps = report
        .channels
        .iter()
        .map(|c| (c.channel.clone(), Some(c.capacity)))
        .collect();
    trace::validate_replay(&events, &caps).unwrap();
    let written = trace::written_sequences(&events);
    assert_eq!(written["Top/c"].len(), 21);
}
