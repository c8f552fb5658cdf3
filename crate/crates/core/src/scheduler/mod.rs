//! Executes a flattened program.
//!
//! Two modes are provided:
//!
//! * **Coroutine**: every leaf instance gets a suspended context at spawn
//!   time. The run loop resumes contexts from a FIFO ready queue; a context
//!   that yields on an empty read or a full write is parked on that channel
//!   and becomes ready again only when the opposite endpoint changes it.
//!   With `workers > 1` contexts are pinned to worker threads and cross-worker
//!   wakeups travel through per-worker mailboxes.
//! * **Sequential**: runs each instance to completion in instantiation order
//!   with channel capacities ignored. This is the baseline that cannot
//!   simulate feedback paths; the first read from an empty channel ends the
//!   run with [`RunOutcome::SequentialFailure`].

pub mod behavior;
pub mod deadlock;
pub(crate) mod runtime;
pub mod trace;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering::SeqCst};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelState, ChannelStats, Token};
use crate::graph::{
    ChannelId, Elaboration, Endpoint, GraphError, InstanceId, PortDirection, ProgramGraph,
};
use behavior::{BehaviorError, IStream, LeafBehavior, OStream, TaskIo};
use deadlock::WaitChain;
use runtime::{lock, CtxCell, OpKind, OpRecord, Parked, RtChannel};
use trace::{OpDetail, TraceEvent, TraceKind};

/// Watchdog limit on resumes when the config does not set one.
pub const DEFAULT_MAX_STEPS: u64 = 100_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    NotValidated(#[from] GraphError),
    #[error("task definition `{0}` has no resolved behavior")]
    MissingBehavior(String),
    #[error("harness feeds unknown boundary input `{0}`")]
    UnknownBoundaryPort(String),
    #[error("behavior of `{instance}` failed: {message}")]
    BehaviorPanic { instance: String, message: String },
    #[error("simulation state was already run; spawn a fresh one")]
    AlreadyRun,
    #[error("invalid scheduler config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SuspendReason {
    WaitNonEmpty(ChannelId),
    WaitNonFull(ChannelId),
    /// Any one of the listed single-channel conditions. Produced by
    /// behaviors that poll several streams with non-blocking operations.
    WaitAny(Vec<SuspendReason>),
}

impl SuspendReason {
    /// The single-channel conditions this reason waits on.
    pub fn conditions(&self) -> Vec<(ChannelId, Wait)> {
        match self {
            SuspendReason::WaitNonEmpty(c) => vec![(*c, Wait::NonEmpty)],
            SuspendReason::WaitNonFull(c) => vec![(*c, Wait::NonFull)],
            SuspendReason::WaitAny(all) => all.iter().flat_map(|r| r.conditions()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Wait {
    NonEmpty,
    NonFull,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Yielded(SuspendReason),
    Finished,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerMode {
    #[default]
    Coroutine,
    Sequential,
}

impl FromStr for SchedulerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coroutine" => Ok(SchedulerMode::Coroutine),
            "sequential" => Ok(SchedulerMode::Sequential),
            other => Err(format!("unknown scheduler `{other}` (coroutine|sequential)")),
        }
    }
}

impl fmt::Display for SchedulerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerMode::Coroutine => "coroutine",
            SchedulerMode::Sequential => "sequential",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchedulerConfig {
    pub mode: SchedulerMode,
    pub workers: usize,
    pub seed: u64,
    pub max_steps: Option<u64>,
    pub trace: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            mode: SchedulerMode::Coroutine,
            workers: 1,
            seed: 0,
            max_steps: Some(DEFAULT_MAX_STEPS),
            trace: false,
        }
    }
}

impl SchedulerConfig {
    pub fn sequential() -> Self {
        Self {
            mode: SchedulerMode::Sequential,
            ..Self::default()
        }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = Some(max_steps);
        self
    }
}

/// Tokens the test harness drives into the top-level task's input ports.
/// Output ports are drained automatically into [`RunReport::outputs`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Harness {
    pub inputs: BTreeMap<String, Vec<Token>>,
}

impl Harness {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(mut self, port: impl Into<String>, tokens: impl IntoIterator<Item = Token>) -> Self {
        self.inputs.entry(port.into()).or_default().extend(tokens);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    Deadlock(WaitChain),
    SequentialFailure { instance: String, channel: String },
    WatchdogExpired { max_steps: u64 },
}

impl RunOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunOutcome::Completed)
    }

    pub fn name(&self) -> &'static str {
        match self {
            RunOutcome::Completed => "Completed",
            RunOutcome::Deadlock(_) => "Deadlock",
            RunOutcome::SequentialFailure { .. } => "SequentialFailure",
            RunOutcome::WatchdogExpired { .. } => "WatchdogExpired",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChannelReport {
    pub channel: String,
    pub capacity: usize,
    #[serde(flatten)]
    pub stats: ChannelStats,
    pub final_occupancy: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InstanceResumes {
    pub instance: String,
    pub resumes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub mode: SchedulerMode,
    pub outcome: RunOutcome,
    /// Behavior resumes performed.
    pub steps: u64,
    pub channels: Vec<ChannelReport>,
    pub resumes: Vec<InstanceResumes>,
    /// Values emitted by behaviors and drained from boundary outputs, by label.
    pub outputs: BTreeMap<String, Vec<u64>>,
}

impl RunReport {
    pub fn channel(&self, path: &str) -> Option<&ChannelReport> {
        self.channels.iter().find(|c| c.channel == path)
    }

    pub fn output(&self, label: &str) -> &[u64] {
        self.outputs.get(label).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total_data_tokens(&self) -> u64 {
        self.channels
            .iter()
            .map(|c| c.stats.total_written - c.stats.eot_written)
            .sum()
    }

    pub fn total_eot_tokens(&self) -> u64 {
        self.channels.iter().map(|c| c.stats.eot_written).sum()
    }

    /// True when every channel is empty and every written EoT was consumed.
    pub fn is_drained(&self) -> bool {
        self.channels
            .iter()
            .all(|c| c.final_occupancy == 0 && c.stats.eot_read == c.stats.eot_written)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "mode: {}\noutcome: {}\nsteps: {}\n",
            self.mode,
            self.outcome.name(),
            self.steps
        );
        match &self.outcome {
            RunOutcome::Deadlock(chain) => out.push_str(&format!("wait-for: {chain}\n")),
            RunOutcome::SequentialFailure { instance, channel } => {
                out.push_str(&format!("blocked: {instance} reading empty {channel}\n"))
            }
            RunOutcome::WatchdogExpired { max_steps } => {
                out.push_str(&format!("watchdog: exceeded {max_steps} steps\n"))
            }
            RunOutcome::Completed => {}
        }
        out.push_str("channels:\n");
        for c in &self.channels {
            out.push_str(&format!(
                "  {} cap={} written={} read={} eot={} max_occ={} final_occ={}\n",
                c.channel,
                c.capacity,
                c.stats.total_written,
                c.stats.total_read,
                c.stats.eot_written,
                c.stats.max_occupancy,
                c.final_occupancy
            ));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum CtxKind {
    Task(InstanceId),
    Feeder,
    Drainer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Status {
    Pending,
    Runnable,
    Parked,
    Finished,
}

pub(crate) struct Ctx {
    pub id: usize,
    pub path: String,
    pub kind: CtxKind,
    behavior: Box<dyn LeafBehavior>,
    cell: Arc<CtxCell>,
    pub status: Status,
    pub reason: Option<SuspendReason>,
    pub resumes: u64,
    epoch: u64,
}

impl Ctx {
    fn required(&self) -> bool {
        self.kind != CtxKind::Drainer
    }
}

/// One suspended context per leaf instance, plus harness contexts for the
/// top-level task's external ports.
pub struct SimulationState {
    elab: Elaboration,
    channels: Vec<Arc<RtChannel>>,
    contexts: Vec<Ctx>,
    producer_ctx: Vec<usize>,
    consumer_ctx: Vec<usize>,
    ran: bool,
}

impl SimulationState {
    pub fn elaboration(&self) -> &Elaboration {
        &self.elab
    }

    /// Contexts belonging to leaf task instances.
    pub fn task_contexts(&self) -> usize {
        self.contexts
            .iter()
            .filter(|c| matches!(c.kind, CtxKind::Task(_)))
            .count()
    }

    pub fn harness_contexts(&self) -> usize {
        self.contexts.len() - self.task_contexts()
    }

    /// True while no context has been resumed yet.
    pub fn all_pending(&self) -> bool {
        self.contexts.iter().all(|c| c.status == Status::Pending)
    }

    /// Tokens currently buffered in a channel, head first.
    pub fn channel_contents(&self, id: ChannelId) -> Vec<Token> {
        lock(&self.channels[id.0].inner).state.contents().collect()
    }

    pub(crate) fn contexts(&self) -> &[Ctx] {
        &self.contexts
    }

    pub(crate) fn channel_path(&self, id: ChannelId) -> &str {
        &self.channels[id.0].path
    }

    pub(crate) fn producer_of(&self, id: ChannelId) -> usize {
        self.producer_ctx[id.0]
    }

    pub(crate) fn consumer_of(&self, id: ChannelId) -> usize {
        self.consumer_ctx[id.0]
    }

    pub(crate) fn render_reason(&self, reason: &SuspendReason) -> String {
        match reason {
            SuspendReason::WaitNonEmpty(c) => format!("wait-non-empty({})", self.channel_path(*c)),
            SuspendReason::WaitNonFull(c) => format!("wait-non-full({})", self.channel_path(*c)),
            SuspendReason::WaitAny(all) => {
                let parts: Vec<_> = all.iter().map(|r| self.render_reason(r)).collect();
                format!("wait-any({})", parts.join(","))
            }
        }
    }
}

/// Creates one suspended context per leaf instance. No behavior runs yet.
pub fn spawn_all(graph: &ProgramGraph, harness: &Harness) -> Result<SimulationState, SimError> {
    let elab = graph.flatten()?;

    let channels: Vec<Arc<RtChannel>> = elab
        .channels
        .iter()
        .map(|c| {
            Arc::new(RtChannel::new(
                c.id,
                c.path.clone(),
                ChannelState::new(c.capacity, c.token_type.bit_width),
            ))
        })
        .collect();

    let inputs: Vec<&str> = elab
        .channels
        .iter()
        .filter_map(|c| match &c.producer {
            Endpoint::Boundary { port } => Some(port.as_str()),
            _ => None,
        })
        .collect();
    if let Some(unknown) = harness.inputs.keys().find(|p| !inputs.contains(&p.as_str())) {
        return Err(SimError::UnknownBoundaryPort(unknown.clone()));
    }

    let mut contexts = Vec::new();
    let mut producer_ctx = vec![usize::MAX; channels.len()];
    let mut consumer_ctx = vec![usize::MAX; channels.len()];

    for inst in &elab.instances {
        let def = graph.definition(&inst.definition).expect("flattened");
        let behavior = def
            .behavior
            .as_ref()
            .filter(|b| b.is_resolved())
            .ok_or_else(|| SimError::MissingBehavior(def.name.clone()))?;
        let id = contexts.len();
        let mut ins = BTreeMap::new();
        let mut outs = BTreeMap::new();
        for (port, ch) in &inst.channel_bindings {
            let dir = def.port(port).expect("bound port exists").direction;
            if dir == PortDirection::OutputStream {
                outs.insert(port.clone(), channels[ch.0].clone());
                producer_ctx[ch.0] = id;
            } else {
                ins.insert(port.clone(), channels[ch.0].clone());
                consumer_ctx[ch.0] = id;
            }
        }
        let cell = Arc::new(CtxCell::default());
        let io = TaskIo::new(inst.path.clone(), ins, outs, inst.scalars.clone(), cell.clone());
        let behavior = behavior.instantiate(io).expect("resolved");
        contexts.push(Ctx {
            id,
            path: inst.path.clone(),
            kind: CtxKind::Task(inst.instance_id),
            behavior,
            cell,
            status: Status::Pending,
            reason: None,
            resumes: 0,
            epoch: 0,
        });
    }

    for ch in &elab.channels {
        let rt = &channels[ch.id.0];
        if let Endpoint::Boundary { port } = &ch.producer {
            let id = contexts.len();
            producer_ctx[ch.id.0] = id;
            let cell = Arc::new(CtxCell::default());
            let io = TaskIo::new(
                format!("harness:{port}"),
                BTreeMap::new(),
                BTreeMap::from([(port.clone(), rt.clone())]),
                BTreeMap::new(),
                cell.clone(),
            );
            let feeder = Feeder {
                out: io.ostream(port).expect("just bound"),
                tokens: harness.inputs.get(port).cloned().unwrap_or_default().into(),
            };
            contexts.push(Ctx {
                id,
                path: io.path().to_owned(),
                kind: CtxKind::Feeder,
                behavior: Box::new(feeder),
                cell,
                status: Status::Pending,
                reason: None,
                resumes: 0,
                epoch: 0,
            });
        }
        if let Endpoint::Boundary { port } = &ch.consumer {
            let id = contexts.len();
            consumer_ctx[ch.id.0] = id;
            let cell = Arc::new(CtxCell::default());
            let io = TaskIo::new(
                format!("harness:{port}"),
                BTreeMap::from([(port.clone(), rt.clone())]),
                BTreeMap::new(),
                BTreeMap::new(),
                cell.clone(),
            );
            let drainer = Drainer {
                input: io.istream(port).expect("just bound"),
                label: port.clone(),
                io,
            };
            contexts.push(Ctx {
                id,
                path: format!("harness:{port}"),
                kind: CtxKind::Drainer,
                behavior: Box::new(drainer),
                cell,
                status: Status::Pending,
                reason: None,
                resumes: 0,
                epoch: 0,
            });
        }
    }

    Ok(SimulationState {
        elab,
        channels,
        contexts,
        producer_ctx,
        consumer_ctx,
        ran: false,
    })
}

/// Drives harness tokens into a boundary input.
struct Feeder {
    out: OStream,
    tokens: VecDeque<Token>,
}

impl LeafBehavior for Feeder {
    fn resume(&mut self) -> Result<StepOutcome, BehaviorError> {
        while let Some(&t) = self.tokens.front() {
            if !self.out.try_put(t)? {
                return Ok(StepOutcome::Yielded(self.out.wait_reason()));
            }
            self.tokens.pop_front();
        }
        Ok(StepOutcome::Finished)
    }
}

/// Drains a boundary output into the run's output table. Never finishes on
/// its own; the run completes once every task context has.
struct Drainer {
    input: IStream,
    label: String,
    io: TaskIo,
}

impl LeafBehavior for Drainer {
    fn resume(&mut self) -> Result<StepOutcome, BehaviorError> {
        loop {
            match self.input.try_read() {
                Ok(Token::Data(v)) => self.io.emit(self.label.clone(), v),
                Ok(Token::Eot) => {}
                Err(_) => return Ok(StepOutcome::Yielded(self.input.wait_reason())),
            }
        }
    }
}

pub fn run(state: &mut SimulationState, config: &SchedulerConfig) -> Result<RunReport, SimError> {
    run_inner(state, config, config.trace).map(|(report, _)| report)
}

/// As [`run`], additionally returning every trace event.
pub fn run_traced(
    state: &mut SimulationState,
    config: &SchedulerConfig,
) -> Result<(RunReport, Vec<TraceEvent>), SimError> {
    run_inner(state, config, true)
}

fn run_inner(
    state: &mut SimulationState,
    config: &SchedulerConfig,
    trace: bool,
) -> Result<(RunReport, Vec<TraceEvent>), SimError> {
    if config.workers == 0 {
        return Err(SimError::InvalidConfig("workers must be at least 1".into()));
    }
    if state.ran {
        return Err(SimError::AlreadyRun);
    }
    state.ran = true;
    let max_steps = config.max_steps.unwrap_or(u64::MAX);

    let (outcome, steps, events) = match config.mode {
        SchedulerMode::Sequential => run_sequential(state, max_steps, trace)?,
        SchedulerMode::Coroutine => run_coroutine(state, config, max_steps, trace)?,
    };

    let mut outputs: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for ctx in &state.contexts {
        for (label, v) in lock(&ctx.cell.outputs).drain(..) {
            outputs.entry(label).or_default().push(v);
        }
    }
    if outcome.is_completed() {
        // Boundary outputs the drainers had not caught up with.
        for ch in state.elab.channels.iter() {
            if let Endpoint::Boundary { port } = &ch.consumer {
                let mut inner = lock(&state.channels[ch.id.0].inner);
                while let Ok(t) = inner.state.try_read() {
                    if let Token::Data(v) = t {
                        outputs.entry(port.clone()).or_default().push(v);
                    }
                }
            }
        }
    }

    let channels = state
        .channels
        .iter()
        .map(|c| {
            let inner = lock(&c.inner);
            ChannelReport {
                channel: c.path.clone(),
                capacity: inner.state.capacity(),
                stats: inner.state.stats(),
                final_occupancy: inner.state.len(),
            }
        })
        .collect();
    let resumes = state
        .contexts
        .iter()
        .filter(|c| matches!(c.kind, CtxKind::Task(_)))
        .map(|c| InstanceResumes {
            instance: c.path.clone(),
            resumes: c.resumes,
        })
        .collect();

    Ok((
        RunReport {
            mode: config.mode,
            outcome,
            steps,
            channels,
            resumes,
            outputs,
        },
        events,
    ))
}

fn behavior_failure(ctx: &Ctx, result: std::thread::Result<Result<StepOutcome, BehaviorError>>) -> Result<StepOutcome, SimError> {
    match result {
        Ok(Ok(outcome)) => Ok(outcome),
        Ok(Err(e)) => Err(SimError::BehaviorPanic {
            instance: ctx.path.clone(),
            message: e.to_string(),
        }),
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_owned());
            Err(SimError::BehaviorPanic {
                instance: ctx.path.clone(),
                message,
            })
        }
    }
}

fn op_event(step: u64, worker: usize, ctx: &Ctx, op: &OpRecord, channels: &[Arc<RtChannel>]) -> TraceEvent {
    TraceEvent {
        step,
        worker,
        instance: ctx.path.clone(),
        kind: TraceKind::Op(OpDetail {
            op: op.kind,
            channel: channels[op.channel.0].path.clone(),
            token: op.token,
            occupancy: op.occupancy,
            seq: op.seq,
        }),
    }
}

/// Validates that `reason` only names channels this context may wait on.
fn check_reason(state_maps: (&[usize], &[usize]), ctx: &Ctx, reason: &SuspendReason) -> Result<(), SimError> {
    let (producers, consumers) = state_maps;
    for (ch, wait) in reason.conditions() {
        let owner = match wait {
            Wait::NonEmpty => consumers.get(ch.0),
            Wait::NonFull => producers.get(ch.0),
        };
        if owner != Some(&ctx.id) {
            return Err(SimError::BehaviorPanic {
                instance: ctx.path.clone(),
                message: BehaviorError::BadSuspendReason(format!(
                    "{ch} is not bound to this instance in the waited direction"
                ))
                .to_string(),
            });
        }
    }
    if reason.conditions().is_empty() {
        return Err(SimError::BehaviorPanic {
            instance: ctx.path.clone(),
            message: BehaviorError::BadSuspendReason("empty wait set".into()).to_string(),
        });
    }
    Ok(())
}

fn run_sequential(
    state: &mut SimulationState,
    max_steps: u64,
    trace: bool,
) -> Result<(RunOutcome, u64, Vec<TraceEvent>), SimError> {
    for ch in &state.channels {
        lock(&ch.inner).state.set_bounded(false);
    }
    let mut order: Vec<usize> = state
        .contexts
        .iter()
        .filter(|c| c.kind == CtxKind::Feeder)
        .map(|c| c.id)
        .collect();
    order.extend(state.contexts.iter().filter(|c| matches!(c.kind, CtxKind::Task(_))).map(|c| c.id));
    order.extend(state.contexts.iter().filter(|c| c.kind == CtxKind::Drainer).map(|c| c.id));

    let mut events = Vec::new();
    let mut step = 0u64;
    let mut steps = 0u64;
    let maps = (state.producer_ctx.clone(), state.consumer_ctx.clone());
    for id in order {
        loop {
            if steps >= max_steps {
                return Ok((RunOutcome::WatchdogExpired { max_steps }, steps, events));
            }
            steps += 1;
            let ctx = &mut state.contexts[id];
            ctx.resumes += 1;
            ctx.status = Status::Runnable;
            if trace {
                events.push(TraceEvent {
                    step,
                    worker: 0,
                    instance: ctx.path.clone(),
                    kind: TraceKind::Resume,
                });
                step += 1;
            }
            let result = catch_unwind(AssertUnwindSafe(|| ctx.behavior.resume()));
            let ops: Vec<OpRecord> = std::mem::take(&mut *lock(&ctx.cell.ops));
            if trace {
                for op in &ops {
                    events.push(op_event(step, 0, ctx, op, &state.channels));
                    step += 1;
                }
            }
            match behavior_failure(ctx, result)? {
                StepOutcome::Finished => {
                    ctx.status = Status::Finished;
                    if trace {
                        events.push(TraceEvent {
                            step,
                            worker: 0,
                            instance: ctx.path.clone(),
                            kind: TraceKind::Finish,
                        });
                        step += 1;
                    }
                    break;
                }
                StepOutcome::Yielded(reason) => {
                    check_reason((&maps.0, &maps.1), ctx, &reason)?;
                    let ctx = &state.contexts[id];
                    let rendered = state.render_reason(&reason);
                    if trace {
                        events.push(TraceEvent {
                            step,
                            worker: 0,
                            instance: ctx.path.clone(),
                            kind: TraceKind::Suspend(rendered),
                        });
                        step += 1;
                    }
                    let satisfied = reason.conditions().iter().any(|(ch, w)| {
                        let inner = lock(&state.channels[ch.0].inner);
                        match w {
                            Wait::NonEmpty => !inner.state.is_empty(),
                            Wait::NonFull => !inner.state.is_full(),
                        }
                    });
                    if satisfied {
                        continue;
                    }
                    let ctx = &mut state.contexts[id];
                    ctx.status = Status::Parked;
                    ctx.reason = Some(reason.clone());
                    if ctx.kind == CtxKind::Drainer {
                        break;
                    }
                    let channel = reason.conditions()[0].0;
                    return Ok((
                        RunOutcome::SequentialFailure {
                            instance: ctx.path.clone(),
                            channel: state.channel_path(channel).to_owned(),
                        },
                        steps,
                        events,
                    ));
                }
            }
        }
    }
    Ok((RunOutcome::Completed, steps, events))
}

struct Shared<'a> {
    channels: &'a [Arc<RtChannel>],
    producer_ctx: &'a [usize],
    consumer_ctx: &'a [usize],
    /// Current parking epoch per context; 0 while not parked.
    parked: Vec<AtomicU64>,
    owner: Vec<usize>,
    mailboxes: Vec<Sender<usize>>,
    /// Contexts that are runnable or running anywhere.
    active: AtomicUsize,
    steps: AtomicU64,
    stop: AtomicBool,
    watchdog: AtomicBool,
    max_steps: u64,
    trace: bool,
}

impl Shared<'_> {
    fn wake_for(&self, op: &OpRecord) {
        let ch = &self.channels[op.channel.0];
        let waiter = {
            let mut inner = lock(&ch.inner);
            match op.kind {
                OpKind::Write | OpKind::Close => inner.not_empty_waiter.take(),
                OpKind::Read => inner.not_full_waiter.take(),
            }
        };
        if let Some(p) = waiter {
            self.try_wake(p);
        }
    }

    fn try_wake(&self, p: Parked) {
        if self.parked[p.ctx].compare_exchange(p.epoch, 0, SeqCst, SeqCst).is_ok() {
            self.active.fetch_add(1, SeqCst);
            // The owner outlives every sender; a closed mailbox only happens after stop.
            let _ = self.mailboxes[self.owner[p.ctx]].send(p.ctx);
        }
    }

    /// Parks `ctx` on every condition of `reason`, or requeues it when one
    /// already holds.
    fn park(&self, ctx: &mut Ctx, reason: SuspendReason, queue: &mut VecDeque<usize>) {
        ctx.epoch += 1;
        let epoch = ctx.epoch;
        self.parked[ctx.id].store(epoch, SeqCst);
        ctx.reason = Some(reason.clone());
        for (ch, wait) in reason.conditions() {
            let mut inner = lock(&self.channels[ch.0].inner);
            let ready = match wait {
                Wait::NonEmpty => !inner.state.is_empty(),
                Wait::NonFull => !inner.state.is_full(),
            };
            if ready {
                drop(inner);
                ctx.status = Status::Runnable;
                if self.parked[ctx.id].compare_exchange(epoch, 0, SeqCst, SeqCst).is_ok() {
                    queue.push_back(ctx.id);
                } else {
                    // Woken concurrently; the waker re-queued it and counted it.
                    self.active.fetch_sub(1, SeqCst);
                }
                return;
            }
            let slot = Some(Parked { ctx: ctx.id, epoch });
            match wait {
                Wait::NonEmpty => inner.not_empty_waiter = slot,
                Wait::NonFull => inner.not_full_waiter = slot,
            }
        }
        ctx.status = Status::Parked;
        self.active.fetch_sub(1, SeqCst);
    }
}

struct Recorder {
    worker: usize,
    enabled: bool,
    step: u64,
    events: Vec<TraceEvent>,
}

impl Recorder {
    fn push(&mut self, instance: &str, kind: TraceKind) {
        if self.enabled {
            self.events.push(TraceEvent {
                step: self.step,
                worker: self.worker,
                instance: instance.to_owned(),
                kind,
            });
            self.step += 1;
        }
    }
}

struct WorkerResult {
    contexts: Vec<Ctx>,
    events: Vec<TraceEvent>,
    error: Option<SimError>,
}

fn run_worker(
    shared: &Shared<'_>,
    worker: usize,
    inbox: Receiver<usize>,
    mut slots: Vec<Option<Ctx>>,
    initial: Vec<usize>,
) -> WorkerResult {
    let mut queue: VecDeque<usize> = initial.into();
    let mut rec = Recorder {
        worker,
        enabled: shared.trace,
        step: 0,
        events: Vec::new(),
    };
    let mut error = None;

    loop {
        if shared.stop.load(SeqCst) {
            break;
        }
        while let Ok(id) = inbox.try_recv() {
            queue.push_back(id);
        }
        let Some(id) = queue.pop_front() else {
            if shared.active.load(SeqCst) == 0 {
                break;
            }
            if let Ok(id) = inbox.recv_timeout(Duration::from_micros(200)) {
                queue.push_back(id);
            }
            continue;
        };
        if shared.steps.fetch_add(1, SeqCst) >= shared.max_steps {
            shared.watchdog.store(true, SeqCst);
            shared.stop.store(true, SeqCst);
            queue.push_front(id);
            break;
        }

        let ctx = slots[id].as_mut().expect("context pinned to this worker");
        ctx.resumes += 1;
        ctx.status = Status::Runnable;
        rec.push(&ctx.path, TraceKind::Resume);
        let result = catch_unwind(AssertUnwindSafe(|| ctx.behavior.resume()));
        let ops: Vec<OpRecord> = std::mem::take(&mut *lock(&ctx.cell.ops));
        for op in &ops {
            if rec.enabled {
                let e = op_event(rec.step, worker, ctx, op, shared.channels);
                rec.events.push(e);
                rec.step += 1;
            }
            shared.wake_for(op);
        }
        let outcome = behavior_failure(ctx, result).and_then(|o| {
            if let StepOutcome::Yielded(r) = &o {
                check_reason((shared.producer_ctx, shared.consumer_ctx), ctx, r)?;
            }
            Ok(o)
        });
        match outcome {
            Err(e) => {
                error = Some(e);
                shared.stop.store(true, SeqCst);
                break;
            }
            Ok(StepOutcome::Finished) => {
                ctx.status = Status::Finished;
                rec.push(&ctx.path, TraceKind::Finish);
                shared.active.fetch_sub(1, SeqCst);
            }
            Ok(StepOutcome::Yielded(reason)) => {
                if rec.enabled {
                    let rendered = render_reason(shared.channels, &reason);
                    rec.push(&ctx.path, TraceKind::Suspend(rendered));
                }
                shared.park(ctx, reason, &mut queue);
            }
        }
    }

    WorkerResult {
        contexts: slots.into_iter().flatten().collect(),
        events: rec.events,
        error,
    }
}

fn render_reason(channels: &[Arc<RtChannel>], reason: &SuspendReason) -> String {
    match reason {
        SuspendReason::WaitNonEmpty(c) => format!("wait-non-empty({})", channels[c.0].path),
        SuspendReason::WaitNonFull(c) => format!("wait-non-full({})", channels[c.0].path),
        SuspendReason::WaitAny(all) => {
            let parts: Vec<_> = all.iter().map(|r| render_reason(channels, r)).collect();
            format!("wait-any({})", parts.join(","))
        }
    }
}

fn run_coroutine(
    state: &mut SimulationState,
    config: &SchedulerConfig,
    max_steps: u64,
    trace: bool,
) -> Result<(RunOutcome, u64, Vec<TraceEvent>), SimError> {
    let n = state.contexts.len();
    let workers = config.workers;

    // Seeded initial ordering, then static round-robin pinning.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut owner = vec![0; n];
    let mut initial = vec![Vec::new(); workers];
    for (pos, &id) in order.iter().enumerate() {
        owner[id] = pos % workers;
        initial[pos % workers].push(id);
    }

    let mut slots: Vec<Vec<Option<Ctx>>> = (0..workers).map(|_| (0..n).map(|_| None).collect()).collect();
    for ctx in state.contexts.drain(..) {
        let w = owner[ctx.id];
        let id = ctx.id;
        slots[w][id] = Some(ctx);
    }

    let (senders, receivers): (Vec<_>, Vec<_>) =
        (0..workers).map(|_| crossbeam_channel::unbounded()).unzip();
    let shared = Shared {
        channels: &state.channels,
        producer_ctx: &state.producer_ctx,
        consumer_ctx: &state.consumer_ctx,
        parked: (0..n).map(|_| AtomicU64::new(0)).collect(),
        owner,
        mailboxes: senders,
        active: AtomicUsize::new(n),
        steps: AtomicU64::new(0),
        stop: AtomicBool::new(false),
        watchdog: AtomicBool::new(false),
        max_steps,
        trace,
    };

    let results: Vec<WorkerResult> = if workers == 1 {
        let inbox = receivers.into_iter().next().expect("one worker");
        let slots = slots.pop().expect("one worker");
        let initial = initial.pop().expect("one worker");
        vec![run_worker(&shared, 0, inbox, slots, initial)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = receivers
                .into_iter()
                .zip(slots)
                .zip(initial)
                .enumerate()
                .map(|(w, ((inbox, slots), initial))| {
                    let shared = &shared;
                    scope.spawn(move || run_worker(shared, w, inbox, slots, initial))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker thread panicked outside a behavior"))
                .collect()
        })
    };

    let steps = shared.steps.load(SeqCst).min(max_steps);
    let watchdog = shared.watchdog.load(SeqCst);
    drop(shared);

    let mut error = None;
    let mut events = Vec::new();
    let mut contexts = Vec::with_capacity(n);
    for r in results {
        contexts.extend(r.contexts);
        events.extend(r.events);
        if error.is_none() {
            error = r.error;
        }
    }
    contexts.sort_by_key(|c| c.id);
    state.contexts = contexts;
    events.sort_by_key(|e| (e.worker, e.step));
    if let Some(e) = error {
        return Err(e);
    }

    let outcome = if watchdog {
        RunOutcome::WatchdogExpired { max_steps }
    } else if state
        .contexts
        .iter()
        .all(|c| !c.required() || c.status == Status::Finished)
    {
        RunOutcome::Completed
    } else {
        RunOutcome::Deadlock(
            deadlock::detect_deadlock(state).expect("unfinished contexts with none runnable"),
        )
    };
    Ok((outcome, steps, events))
}

#[cfg(test)]
mod tests;
