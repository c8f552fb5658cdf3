//! Shared runtime state: channels with their wait slots and the per-context
//! cells behaviors report into.

use std::sync::{Mutex, MutexGuard, PoisonError};

use crate::channel::{ChannelState, Token};
use crate::graph::ChannelId;

use super::SuspendReason;

pub(crate) fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

/// A context parked on a channel condition. `epoch` identifies one particular
/// suspension so stale registrations can be ignored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Parked {
    pub ctx: usize,
    pub epoch: u64,
}

pub(crate) struct ChanInner {
    pub state: ChannelState,
    pub not_empty_waiter: Option<Parked>,
    pub not_full_waiter: Option<Parked>,
    /// Mutations applied so far; stamps each op for replay ordering.
    pub seq: u64,
}

impl ChanInner {
    pub fn record(&mut self, channel: ChannelId, kind: OpKind, token: Token) -> OpRecord {
        let record = OpRecord {
            channel,
            kind,
            token,
            occupancy: self.state.len(),
            seq: self.seq,
        };
        self.seq += 1;
        record
    }
}

pub(crate) struct RtChannel {
    pub id: ChannelId,
    pub path: String,
    pub inner: Mutex<ChanInner>,
}

impl RtChannel {
    pub fn new(id: ChannelId, path: String, state: ChannelState) -> Self {
        Self {
            id,
            path,
            inner: Mutex::new(ChanInner {
                state,
                not_empty_waiter: None,
                not_full_waiter: None,
                seq: 0,
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Write,
    Close,
    Read,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Write => "write",
            OpKind::Close => "close",
            OpKind::Read => "read",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct OpRecord {
    pub channel: ChannelId,
    pub kind: OpKind,
    pub token: Token,
    pub occupancy: usize,
    pub seq: u64,
}

/// Written by a behavior during one resume, drained by its worker after.
#[derive(Default)]
pub(crate) struct CtxCell {
    pub reason: Mutex<Option<SuspendReason>>,
    pub ops: Mutex<Vec<OpRecord>>,
    pub outputs: Mutex<Vec<(String, u64)>>,
}
