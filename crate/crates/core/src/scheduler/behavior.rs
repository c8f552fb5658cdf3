//! Leaf task behaviors and the I/O surface they see.
//!
//! A behavior is a resumable procedure. Each [`LeafBehavior::resume`] call
//! runs until the task either finishes or reaches an operation that cannot
//! proceed, at which point it returns [`StepOutcome::Yielded`] with the
//! channel condition it is waiting for. The next resume continues from the
//! same logical point.
//!
//! Most behaviors are written as `async` blocks through
//! [`BehaviorRef::from_async`]: the blocking stream operations below return
//! `Pending` after recording a [`SuspendReason`], so the compiler-generated
//! state machine is the resumable procedure. Hand-written state machines can
//! implement [`LeafBehavior`] directly using the non-blocking `try_*` calls.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::future::{poll_fn, Future};
use std::pin::Pin;
use std::sync::Arc;
use std::task::{Context, Poll, Waker};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::runtime::{lock, CtxCell, OpKind, RtChannel};
use super::{StepOutcome, SuspendReason};
use crate::channel::{Empty, Token, TryWriteError};
use crate::graph::{ChannelId, ScalarValue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviorError {
    #[error("no stream port `{0}`")]
    MissingPort(String),
    #[error("no scalar argument `{0}`")]
    MissingScalar(String),
    #[error("scalar argument `{0}` has the wrong type")]
    ScalarType(String),
    #[error("value {value:#x} does not fit the {bit_width}-bit token type of `{channel}`")]
    TypeMismatch {
        channel: String,
        value: u64,
        bit_width: u32,
    },
    #[error("unexpected EoT on `{0}`")]
    UnexpectedEot(String),
    #[error("expected EoT on `{0}`, found data")]
    UnexpectedData(String),
    #[error("behavior returned pending without a suspend reason")]
    NoSuspendReason,
    #[error("invalid suspend reason: {0}")]
    BadSuspendReason(String),
    #[error("{0}")]
    Failed(String),
}

/// The resumable procedure of a leaf task.
pub trait LeafBehavior: Send {
    fn resume(&mut self) -> Result<StepOutcome, BehaviorError>;
}

type Factory = Arc<dyn Fn(TaskIo) -> Box<dyn LeafBehavior> + Send + Sync>;

/// A named behavior. The key doubles as the fingerprint codegen hashes, and
/// is the only part that survives graph export; factories are re-attached
/// from a [`BehaviorLibrary`] on import.
#[derive(Clone)]
pub struct BehaviorRef {
    key: String,
    factory: Option<Factory>,
}

impl BehaviorRef {
    pub fn new<F>(key: impl Into<String>, factory: F) -> Self
    where
        F: Fn(TaskIo) -> Box<dyn LeafBehavior> + Send + Sync + 'static,
    {
        Self {
            key: key.into(),
            factory: Some(Arc::new(factory)),
        }
    }

    /// Wraps an async procedure. Each instance gets its own future.
    pub fn from_async<F, Fut>(key: impl Into<String>, body: F) -> Self
    where
        F: Fn(TaskIo) -> Fut + Send + Sync + 'static,
        Fut: Future<Output = Result<(), BehaviorError>> + Send + 'static,
    {
        Self::new(key, move |io: TaskIo| {
            let cell = io.cell.clone();
            Box::new(AsyncBehavior {
                future: Box::pin(body(io)),
                cell,
            }) as Box<dyn LeafBehavior>
        })
    }

    pub fn unresolved(key: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            factory: None,
        }
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn is_resolved(&self) -> bool {
        self.factory.is_some()
    }

    pub(crate) fn instantiate(&self, io: TaskIo) -> Option<Box<dyn LeafBehavior>> {
        self.factory.as_ref().map(|f| f(io))
    }
}

impl fmt::Debug for BehaviorRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BehaviorRef")
            .field("key", &self.key)
            .field("resolved", &self.is_resolved())
            .finish()
    }
}

impl PartialEq for BehaviorRef {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Serialize for BehaviorRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.key)
    }
}

impl<'de> Deserialize<'de> for BehaviorRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d).map(BehaviorRef::unresolved)
    }
}

/// Behaviors by key, used to bring imported graphs back to life.
#[derive(Clone, Debug, Default)]
pub struct BehaviorLibrary {
    entries: HashMap<String, BehaviorRef>,
}

impl BehaviorLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, behavior: BehaviorRef) {
        self.entries.insert(behavior.key.clone(), behavior);
    }

    pub fn get(&self, key: &str) -> Option<&BehaviorRef> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

struct AsyncBehavior {
    future: Pin<Box<dyn Future<Output = Result<(), BehaviorError>> + Send>>,
    cell: Arc<CtxCell>,
}

impl LeafBehavior for AsyncBehavior {
    fn resume(&mut self) -> Result<StepOutcome, BehaviorError> {
        // Wakeups are driven by channel wait sets, not by wakers.
        let mut cx = Context::from_waker(Waker::noop());
        lock(&self.cell.reason).take();
        match self.future.as_mut().poll(&mut cx) {
            Poll::Ready(Ok(())) => Ok(StepOutcome::Finished),
            Poll::Ready(Err(e)) => Err(e),
            Poll::Pending => lock(&self.cell.reason)
                .take()
                .map(StepOutcome::Yielded)
                .ok_or(BehaviorError::NoSuspendReason),
        }
    }
}

/// Everything a leaf instance can touch: its bound streams, scalar
/// arguments, and an output sink standing in for host memory.
pub struct TaskIo {
    path: String,
    inputs: BTreeMap<String, Arc<RtChannel>>,
    outputs: BTreeMap<String, Arc<RtChannel>>,
    scalars: BTreeMap<String, ScalarValue>,
    pub(crate) cell: Arc<CtxCell>,
}

impl TaskIo {
    pub(crate) fn new(
        path: String,
        inputs: BTreeMap<String, Arc<RtChannel>>,
        outputs: BTreeMap<String, Arc<RtChannel>>,
        scalars: BTreeMap<String, ScalarValue>,
        cell: Arc<CtxCell>,
    ) -> Self {
        Self {
            path,
            inputs,
            outputs,
            scalars,
            cell,
        }
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn istream(&self, port: &str) -> Result<IStream, BehaviorError> {
        let ch = self
            .inputs
            .get(port)
            .ok_or_else(|| BehaviorError::MissingPort(port.to_owned()))?;
        Ok(IStream {
            ch: ch.clone(),
            cell: self.cell.clone(),
        })
    }

    pub fn ostream(&self, port: &str) -> Result<OStream, BehaviorError> {
        let ch = self
            .outputs
            .get(port)
            .ok_or_else(|| BehaviorError::MissingPort(port.to_owned()))?;
        Ok(OStream {
            ch: ch.clone(),
            cell: self.cell.clone(),
        })
    }

    /// Input streams `prefix0`, `prefix1`, ... up to `count`.
    pub fn istreams(&self, prefix: &str, count: usize) -> Result<Vec<IStream>, BehaviorError> {
        (0..count).map(|i| self.istream(&format!("{prefix}{i}"))).collect()
    }

    pub fn ostreams(&self, prefix: &str, count: usize) -> Result<Vec<OStream>, BehaviorError> {
        (0..count).map(|i| self.ostream(&format!("{prefix}{i}"))).collect()
    }

    pub fn scalar(&self, name: &str) -> Result<&ScalarValue, BehaviorError> {
        self.scalars
            .get(name)
            .ok_or_else(|| BehaviorError::MissingScalar(name.to_owned()))
    }

    pub fn scalar_int(&self, name: &str) -> Result<i64, BehaviorError> {
        self.scalar(name)?
            .as_int()
            .ok_or_else(|| BehaviorError::ScalarType(name.to_owned()))
    }

    pub fn scalar_usize(&self, name: &str) -> Result<usize, BehaviorError> {
        usize::try_from(self.scalar_int(name)?)
            .map_err(|_| BehaviorError::ScalarType(name.to_owned()))
    }

    pub fn scalar_float(&self, name: &str) -> Result<f64, BehaviorError> {
        self.scalar(name)?
            .as_float()
            .ok_or_else(|| BehaviorError::ScalarType(name.to_owned()))
    }

    pub fn scalar_ints(&self, name: &str) -> Result<Vec<i64>, BehaviorError> {
        self.scalar(name)?
            .as_int_list()
            .map(<[i64]>::to_vec)
            .ok_or_else(|| BehaviorError::ScalarType(name.to_owned()))
    }

    pub fn scalar_floats(&self, name: &str) -> Result<Vec<f64>, BehaviorError> {
        self.scalar(name)?
            .as_float_list()
            .ok_or_else(|| BehaviorError::ScalarType(name.to_owned()))
    }

    /// Appends a value to the run's output table under `label`.
    pub fn emit(&self, label: impl Into<String>, value: u64) {
        lock(&self.cell.outputs).push((label.into(), value));
    }

    /// Suspends until at least one of `waits` can make progress.
    pub fn wait_any<'a>(&'a self, waits: &'a [WaitOn<'a>]) -> impl Future<Output = ()> + 'a {
        poll_fn(move |_| {
            if waits.iter().any(WaitOn::ready) {
                return Poll::Ready(());
            }
            let reasons = waits.iter().map(WaitOn::reason).collect();
            *lock(&self.cell.reason) = Some(SuspendReason::WaitAny(reasons));
            Poll::Pending
        })
    }
}

/// One condition in a [`TaskIo::wait_any`] set.
pub enum WaitOn<'a> {
    Readable(&'a IStream),
    Writable(&'a OStream),
}

impl WaitOn<'_> {
    fn ready(&self) -> bool {
        match self {
            WaitOn::Readable(s) => !s.is_empty(),
            WaitOn::Writable(s) => !s.is_full(),
        }
    }

    fn reason(&self) -> SuspendReason {
        match self {
            WaitOn::Readable(s) => SuspendReason::WaitNonEmpty(s.id()),
            WaitOn::Writable(s) => SuspendReason::WaitNonFull(s.id()),
        }
    }
}

/// Consumer endpoint of a channel.
pub struct IStream {
    ch: Arc<RtChannel>,
    cell: Arc<CtxCell>,
}

impl IStream {
    pub fn id(&self) -> ChannelId {
        self.ch.id
    }

    pub fn name(&self) -> &str {
        &self.ch.path
    }

    pub fn readable(&self) -> WaitOn<'_> {
        WaitOn::Readable(self)
    }

    pub fn is_empty(&self) -> bool {
        lock(&self.ch.inner).state.is_empty()
    }

    pub fn try_read(&self) -> Result<Token, Empty> {
        let mut inner = lock(&self.ch.inner);
        let token = inner.state.try_read()?;
        let record = inner.record(self.ch.id, OpKind::Read, token);
        drop(inner);
        lock(&self.cell.ops).push(record);
        Ok(token)
    }

    pub fn try_peek(&self) -> Result<Token, Empty> {
        lock(&self.ch.inner).state.try_peek()
    }

    pub fn try_eot(&self) -> Result<bool, Empty> {
        lock(&self.ch.inner).state.try_eot()
    }

    fn suspend(&self) {
        *lock(&self.cell.reason) = Some(SuspendReason::WaitNonEmpty(self.ch.id));
    }

    /// Blocking destructive read.
    pub fn read(&self) -> impl Future<Output = Token> + '_ {
        poll_fn(move |_| match self.try_read() {
            Ok(t) => Poll::Ready(t),
            Err(Empty) => {
                self.suspend();
                Poll::Pending
            }
        })
    }

    /// Blocking read that rejects EoT.
    pub async fn read_data(&self) -> Result<u64, BehaviorError> {
        match self.read().await {
            Token::Data(v) => Ok(v),
            Token::Eot => Err(BehaviorError::UnexpectedEot(self.name().to_owned())),
        }
    }

    /// Blocking read that expects the EoT token closing a transaction.
    pub async fn read_eot(&self) -> Result<(), BehaviorError> {
        match self.read().await {
            Token::Eot => Ok(()),
            Token::Data(_) => Err(BehaviorError::UnexpectedData(self.name().to_owned())),
        }
    }

    /// Blocking non-destructive read.
    pub fn peek(&self) -> impl Future<Output = Token> + '_ {
        poll_fn(move |_| match self.try_peek() {
            Ok(t) => Poll::Ready(t),
            Err(Empty) => {
                self.suspend();
                Poll::Pending
            }
        })
    }

    /// Blocking test for a closed channel; waits while the channel is empty.
    pub fn eot(&self) -> impl Future<Output = bool> + '_ {
        poll_fn(move |_| match self.try_eot() {
            Ok(b) => Poll::Ready(b),
            Err(Empty) => {
                self.suspend();
                Poll::Pending
            }
        })
    }

    /// Reason to report from a hand-written state machine blocked on this stream.
    pub fn wait_reason(&self) -> SuspendReason {
        SuspendReason::WaitNonEmpty(self.ch.id)
    }
}

/// Producer endpoint of a channel.
pub struct OStream {
    ch: Arc<RtChannel>,
    cell: Arc<CtxCell>,
}

impl OStream {
    pub fn id(&self) -> ChannelId {
        self.ch.id
    }

    pub fn name(&self) -> &str {
        &self.ch.path
    }

    pub fn writable(&self) -> WaitOn<'_> {
        WaitOn::Writable(self)
    }

    pub fn is_full(&self) -> bool {
        lock(&self.ch.inner).state.is_full()
    }

    /// Non-blocking write of a token. `Ok(false)` when the channel is full.
    pub fn try_put(&self, token: Token) -> Result<bool, BehaviorError> {
        let mut inner = lock(&self.ch.inner);
        match inner.state.try_write(token) {
            Ok(()) => {
                let kind = if token.is_eot() {
                    OpKind::Close
                } else {
                    OpKind::Write
                };
                let record = inner.record(self.ch.id, kind, token);
                drop(inner);
                lock(&self.cell.ops).push(record);
                Ok(true)
            }
            Err(TryWriteError::Full(_)) => Ok(false),
            Err(TryWriteError::TypeMismatch { value, bit_width }) => {
                Err(BehaviorError::TypeMismatch {
                    channel: self.ch.path.clone(),
                    value,
                    bit_width,
                })
            }
        }
    }

    pub fn try_write(&self, value: u64) -> Result<bool, BehaviorError> {
        self.try_put(Token::Data(value))
    }

    pub fn try_close(&self) -> bool {
        self.try_put(Token::Eot).expect("EoT always type-checks")
    }

    fn put(&self, token: Token) -> impl Future<Output = Result<(), BehaviorError>> + '_ {
        poll_fn(move |_| match self.try_put(token) {
            Ok(true) => Poll::Ready(Ok(())),
            Ok(false) => {
                *lock(&self.cell.reason) = Some(SuspendReason::WaitNonFull(self.ch.id));
                Poll::Pending
            }
            Err(e) => Poll::Ready(Err(e)),
        })
    }

    /// Blocking write.
    pub async fn write(&self, value: u64) -> Result<(), BehaviorError> {
        self.put(Token::Data(value)).await
    }

    /// Blocking close: appends an EoT token.
    pub async fn close(&self) -> Result<(), BehaviorError> {
        self.put(Token::Eot).await
    }

    pub fn wait_reason(&self) -> SuspendReason {
        SuspendReason::WaitNonFull(self.ch.id)
    }
}
