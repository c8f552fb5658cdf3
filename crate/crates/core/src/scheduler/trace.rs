//! Trace events and their line-oriented export format:
//!
//! ```text
//! step=<n> worker=<w> inst=<path> kind=<resume|suspend|finish|op> detail=<...>
//! ```
//!
//! Channel-op details read `<write|close|read> ch=<path> tok=<token> occ=<n> seq=<k>`,
//! where `occ` is the occupancy after the op and `seq` orders all mutations
//! of one channel.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use crate::channel::Token;

pub use super::runtime::OpKind;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpDetail {
    pub op: OpKind,
    pub channel: String,
    pub token: Token,
    pub occupancy: usize,
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceKind {
    Resume,
    Suspend(String),
    Finish,
    Op(OpDetail),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    /// Strictly increasing per worker.
    pub step: u64,
    pub worker: usize,
    pub instance: String,
    pub kind: TraceKind,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} worker={} inst={} kind=",
            self.step, self.worker, self.instance
        )?;
        match &self.kind {
            TraceKind::Resume => write!(f, "resume detail=-"),
            TraceKind::Suspend(reason) => write!(f, "suspend detail={reason}"),
            TraceKind::Finish => write!(f, "finish detail=-"),
            TraceKind::Op(d) => write!(
                f,
                "op detail={} ch={} tok={} occ={} seq={}",
                d.op.as_str(),
                d.channel,
                d.token,
                d.occupancy,
                d.seq
            ),
        }
    }
}

impl TraceEvent {
    /// Parses one exported line.
    pub fn parse(line: &str) -> Result<Self, String> {
        fn field<'a>(s: &'a str, key: &str) -> Result<(&'a str, &'a str), String> {
            let rest = s
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| format!("expected `{key}=` in `{s}`"))?;
            Ok(rest.split_once(' ').unwrap_or((rest, "")))
        }
        let (step, rest) = field(line, "step")?;
        let (worker, rest) = field(rest, "worker")?;
        let (instance, rest) = field(rest, "inst")?;
        let (kind, rest) = field(rest, "kind")?;
        let detail = rest
            .strip_prefix("detail=")
            .ok_or_else(|| format!("missing detail in `{line}`"))?;
        let step = step.parse().map_err(|e| format!("bad step: {e}"))?;
        let worker = worker.parse().map_err(|e| format!("bad worker: {e}"))?;
        let kind = match kind {
            "resume" => TraceKind::Resume,
            "finish" => TraceKind::Finish,
            "suspend" => TraceKind::Suspend(detail.to_owned()),
            "op" => {
                let (op, rest) = detail.split_once(' ').ok_or("short op detail")?;
                let op = match op {
                    "write" => OpKind::Write,
                    "close" => OpKind::Close,
                    "read" => OpKind::Read,
                    other => return Err(format!("unknown op `{other}`")),
                };
                let (channel, rest) = field(rest, "ch")?;
                let (tok, rest) = field(rest, "tok")?;
                let (occ, rest) = field(rest, "occ")?;
                let (seq, _) = field(rest, "seq")?;
                let token = if tok == "EoT" {
                    Token::Eot
                } else {
                    Token::Data(tok.parse().map_err(|e| format!("bad token: {e}"))?)
                };
                TraceKind::Op(OpDetail {
                    op,
                    channel: channel.to_owned(),
                    token,
                    occupancy: occ.parse().map_err(|e| format!("bad occ: {e}"))?,
                    seq: seq.parse().map_err(|e| format!("bad seq: {e}"))?,
                })
            }
            other => return Err(format!("unknown kind `{other}`")),
        };
        Ok(TraceEvent {
            step,
            worker,
            instance: instance.to_owned(),
            kind,
        })
    }
}

pub fn render(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

/// Tokens written to each channel, in order. EoT included.
pub fn written_sequences(events: &[TraceEvent]) -> BTreeMap<String, Vec<Token>> {
    let mut ops: BTreeMap<&str, Vec<&OpDetail>> = BTreeMap::new();
    for e in events {
        if let TraceKind::Op(d) = &e.kind {
            if d.op != OpKind::Read {
                ops.entry(&d.channel).or_default().push(d);
            }
        }
    }
    ops.into_iter()
        .map(|(ch, mut v)| {
            v.sort_by_key(|d| d.seq);
            (ch.to_owned(), v.into_iter().map(|d| d.token).collect())
        })
        .collect()
}

/// Checks that a trace is a valid interleaving: replaying every channel's
/// mutations in `seq` order through a plain queue reproduces each recorded
/// token and occupancy, and never exceeds the channel's capacity (`None`
/// when the run ignored capacities).
pub fn validate_replay(
    events: &[TraceEvent],
    capacities: &BTreeMap<String, Option<usize>>,
) -> Result<(), String> {
    let mut per_channel: BTreeMap<&str, Vec<&OpDetail>> = BTreeMap::new();
    for e in events {
        if let TraceKind::Op(d) = &e.kind {
            per_channel.entry(&d.channel).or_default().push(d);
        }
    }
    for (channel, mut ops) in per_channel {
        let capacity = *capacities
            .get(channel)
            .ok_or_else(|| format!("trace mentions unknown channel `{channel}`"))?;
        ops.sort_by_key(|d| d.seq);
        let mut queue = VecDeque::new();
        for (expected_seq, op) in ops.iter().enumerate() {
            if op.seq != expected_seq as u64 {
                return Err(format!("{channel}: op seq {} missing or repeated", expected_seq));
            }
            match op.op {
                OpKind::Write | OpKind::Close => {
                    if (op.op == OpKind::Close) != op.token.is_eot() {
                        return Err(format!("{channel}: op kind does not match token at seq {}", op.seq));
                    }
                    queue.push_back(op.token);
                    if capacity.is_some_and(|c| queue.len() > c) {
                        return Err(format!("{channel}: occupancy exceeds capacity at seq {}", op.seq));
                    }
                }
                OpKind::Read => match queue.pop_front() {
                    Some(t) if t == op.token => {}
                    Some(t) => {
                        return Err(format!(
                            "{channel}: read {} at seq {} but head was {t}",
                            op.token, op.seq
                        ))
                    }
                    None => return Err(format!("{channel}: read from empty queue at seq {}", op.seq)),
                },
            }
            if queue.len() != op.occupancy {
                return Err(format!(
                    "{channel}: occupancy {} recorded, {} replayed at seq {}",
                    op.occupancy,
                    queue.len(),
                    op.seq
                ));
            }
        }
    }
    Ok(())
}
