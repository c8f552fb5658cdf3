//! Wait-for chains for runs that stop with unfinished tasks and nothing runnable.

use std::fmt;

use serde::Serialize;

use super::{CtxKind, SimulationState, Status, Wait};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WaitLink {
    pub instance: String,
    /// `wait-non-empty` or `wait-non-full`.
    pub condition: String,
    pub channel: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeadlockCause {
    /// The chain loops back to its first link.
    Cycle,
    /// The last link waits on an endpoint that has already finished.
    Starved { finished: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WaitChain {
    pub links: Vec<WaitLink>,
    pub cause: DeadlockCause,
}

impl WaitChain {
    pub fn instances(&self) -> impl Iterator<Item = &str> {
        self.links.iter().map(|l| l.instance.as_str())
    }

    pub fn channels(&self) -> impl Iterator<Item = &str> {
        self.links.iter().map(|l| l.channel.as_str())
    }
}

impl fmt::Display for WaitChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for link in &self.links {
            write!(f, "{} -[{} {}]-> ", link.instance, link.condition, link.channel)?;
        }
        match &self.cause {
            DeadlockCause::Cycle => {
                let first = self.links.first().map(|l| l.instance.as_str()).unwrap_or("?");
                write!(f, "{first} (cycle)")
            }
            DeadlockCause::Starved { finished } => write!(f, "{finished} (finished)"),
        }
    }
}

/// Builds the wait-for chain starting at the first unfinished task. Each
/// step blames the other endpoint of the channel being waited on: the
/// producer for an empty read, the consumer for a full write.
pub(crate) fn detect_deadlock(state: &SimulationState) -> Option<WaitChain> {
    let ctxs = state.contexts();
    let start = ctxs
        .iter()
        .find(|c| matches!(c.kind, CtxKind::Task(_)) && c.status != Status::Finished)
        .or_else(|| ctxs.iter().find(|c| c.kind == CtxKind::Feeder && c.status != Status::Finished))?;

    let blame = |ch, wait| match wait {
        Wait::NonEmpty => state.producer_of(ch),
        Wait::NonFull => state.consumer_of(ch),
    };

    let mut links = Vec::new();
    let mut visited: Vec<usize> = Vec::new();
    let mut current = start.id;
    loop {
        if let Some(pos) = visited.iter().position(|&v| v == current) {
            links.drain(..pos);
            return Some(WaitChain {
                links,
                cause: DeadlockCause::Cycle,
            });
        }
        visited.push(current);
        let ctx = &ctxs[current];
        let reason = ctx.reason.as_ref()?;
        let conditions = reason.conditions();
        // Prefer a condition whose blamed endpoint can still act, which
        // leads toward a cycle rather than a finished task.
        let &(ch, wait) = conditions
            .iter()
            .find(|(ch, w)| ctxs[blame(*ch, *w)].status != Status::Finished)
            .or_else(|| conditions.first())?;
        links.push(WaitLink {
            instance: ctx.path.clone(),
            condition: match wait {
                Wait::NonEmpty => "wait-non-empty",
                Wait::NonFull => "wait-non-full",
            }
            .to_owned(),
            channel: state.channel_path(ch).to_owned(),
        });
        let next = blame(ch, wait);
        if ctxs[next].status == Status::Finished {
            return Some(WaitChain {
                links,
                cause: DeadlockCause::Starved {
                    finished: ctxs[next].path.clone(),
                },
            });
        }
        current = next;
    }
}
