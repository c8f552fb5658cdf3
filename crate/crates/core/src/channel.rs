//! Bounded FIFO channel state.
//!
//! These are the non-suspending primitives. An operation that cannot proceed
//! returns `Full`/`Empty` and leaves the channel untouched; turning that into
//! a suspension is the scheduler's job.

use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// A slot in a channel: a data payload or the end-of-transaction marker.
///
/// EoT is carried out of band (one sideband bit in hardware), so every
/// payload value stays available to data tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Data(u64),
    Eot,
}

impl Token {
    pub fn is_eot(self) -> bool {
        matches!(self, Token::Eot)
    }

    pub fn payload(self) -> Option<u64> {
        match self {
            Token::Data(v) => Some(v),
            Token::Eot => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Data(v) => write!(f, "{v}"),
            Token::Eot => f.write_str("EoT"),
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("channel is empty")]
pub struct Empty;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("channel is full")]
pub struct Full;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum TryWriteError {
    #[error("channel is full")]
    Full(Token),
    #[error("value {value:#x} does not fit in {bit_width} bits")]
    TypeMismatch { value: u64, bit_width: u32 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ChannelStats {
    /// Tokens accepted by the channel, EoT included.
    pub total_written: u64,
    /// Tokens removed by destructive reads, EoT included.
    pub total_read: u64,
    pub eot_written: u64,
    pub eot_read: u64,
    pub max_occupancy: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelState {
    capacity: usize,
    bit_width: u32,
    bounded: bool,
    buf: VecDeque<Token>,
    stats: ChannelStats,
}

impl ChannelState {
    pub fn new(capacity: usize, bit_width: u32) -> Self {
        assert!(capacity >= 1, "channel capacity must be at least 1");
        assert!((1..=64).contains(&bit_width), "bit width must be in 1..=64");
        Self {
            capacity,
            bit_width,
            bounded: true,
            buf: VecDeque::with_capacity(capacity.min(1024)),
            stats: ChannelStats::default(),
        }
    }

    /// Disables the capacity check. Only the sequential baseline uses this,
    /// since running tasks to completion one at a time cannot honor it.
    pub fn set_bounded(&mut self, bounded: bool) {
        self.bounded = bounded;
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.bounded && self.buf.len() >= self.capacity
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn contents(&self) -> impl Iterator<Item = Token> + '_ {
        self.buf.iter().copied()
    }

    fn fits(&self, value: u64) -> bool {
        self.bit_width == 64 || value >> self.bit_width == 0
    }

    pub fn try_write(&mut self, token: Token) -> Result<(), TryWriteError> {
        if let Token::Data(value) = token {
            if !self.fits(value) {
                return Err(TryWriteError::TypeMismatch {
                    value,
                    bit_width: self.bit_width,
                });
            }
        }
        if self.is_full() {
            return Err(TryWriteError::Full(token));
        }
        self.buf.push_back(token);
        debug_assert!(!self.bounded || self.buf.len() <= self.capacity);
        self.stats.total_written += 1;
        if token.is_eot() {
            self.stats.eot_written += 1;
        }
        self.stats.max_occupancy = self.stats.max_occupancy.max(self.buf.len());
        Ok(())
    }

    /// Destructive read. Reading an EoT token "opens" the channel again.
    pub fn try_read(&mut self) -> Result<Token, Empty> {
        let token = self.buf.pop_front().ok_or(Empty)?;
        self.stats.total_read += 1;
        if token.is_eot() {
            self.stats.eot_read += 1;
        }
        Ok(token)
    }

    pub fn try_peek(&self) -> Result<Token, Empty> {
        self.buf.front().copied().ok_or(Empty)
    }

    /// `Ok(true)` when the head is an EoT token. Never consumes.
    pub fn try_eot(&self) -> Result<bool, Empty> {
        self.try_peek().map(Token::is_eot)
    }

    /// Writes an EoT token.
    pub fn close(&mut self) -> Result<(), Full> {
        self.try_write(Token::Eot).map_err(|_| Full)
    }
}
