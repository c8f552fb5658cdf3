//! Bucket sort through an omega network of 2x2 switches.
//!
//! `Produce` deals 16-bit keys round-robin onto `n` lines. Each of the
//! `log2 n` stages applies a perfect shuffle and then `n / 2` switches, each
//! steering a record by one bit of its bucket (the top `log2 n` key bits).
//! After the last stage line `x` carries exactly bucket `x`. `Consume`
//! restores arrival order within each bucket from a sequence number and
//! emits the sorted keys under `sorted`.
//!
//! Token layout: key in bits 31..16, input sequence number in 15..0.

use std::collections::BTreeMap;

use rand::Rng;

use super::{BenchError, BenchInstance, BenchParams, Oracle};
use crate::channel::Token;
use crate::graph::{ChildInvocation, ProgramGraph, ScalarValue, TaskDefinition, TokenType};
use crate::scheduler::behavior::{BehaviorRef, TaskIo, WaitOn};
use crate::scheduler::Harness;

/// Records per run are numbered with 16 bits.
pub const MAX_RECORDS: usize = 1 << 16;

pub fn record(key: u16, seq: usize) -> u64 {
    (key as u64) << 16 | seq as u64
}

fn log2(n: usize) -> u32 {
    n.trailing_zeros()
}

pub fn bucket_of(key: u16, n: usize) -> usize {
    key as usize >> (16 - log2(n))
}

fn rotr(x: usize, bits: u32) -> usize {
    (x >> 1) | ((x & 1) << (bits - 1))
}

pub fn produce_behavior() -> BehaviorRef {
    BehaviorRef::from_async("network.produce", |io: TaskIo| async move {
        let n = io.scalar_usize("n")?;
        let keys = io.scalar_ints("keys")?;
        let outs = io.ostreams("out", n)?;
        for (seq, key) in keys.iter().enumerate() {
            outs[seq % n].write(record(*key as u16, seq)).await?;
        }
        for out in &outs {
            out.close().await?;
        }
        Ok(())
    })
}

/// Moves whichever input head can move. A switch never waits on one input
/// while the other could make progress, so a blocked output cannot stall
/// the opposite path.
pub fn switch_behavior() -> BehaviorRef {
    BehaviorRef::from_async("network.switch", |io: TaskIo| async move {
        let bit = io.scalar_usize("bit")?;
        let ins = io.istreams("in", 2)?;
        let outs = io.ostreams("out", 2)?;
        let mut open = [true, true];
        while open.iter().any(|o| *o) {
            let mut progressed = false;
            let mut waits = Vec::new();
            for (i, input) in ins.iter().enumerate() {
                if !open[i] {
                    continue;
                }
                match input.try_peek() {
                    Ok(Token::Eot) => {
                        input.try_read().expect("head present");
                        open[i] = false;
                        progressed = true;
                    }
                    Ok(Token::Data(v)) => {
                        let out = &outs[(v >> bit) as usize & 1];
                        if out.try_write(v)? {
                            input.try_read().expect("head present");
                            progressed = true;
                        } else {
                            waits.push(WaitOn::Writable(out));
                        }
                    }
                    Err(_) => waits.push(WaitOn::Readable(input)),
                }
            }
            if !progressed && !waits.is_empty() {
                io.wait_any(&waits).await;
            }
        }
        for out in &outs {
            out.close().await?;
        }
        Ok(())
    })
}

pub fn consume_behavior() -> BehaviorRef {
    BehaviorRef::from_async("network.consume", |io: TaskIo| async move {
        let n = io.scalar_usize("n")?;
        let ins = io.istreams("in", n)?;
        let mut buckets: Vec<Vec<u64>> = vec![Vec::new(); n];
        let mut open = vec![true; n];
        while open.iter().any(|o| *o) {
            let mut progressed = false;
            for (i, input) in ins.iter().enumerate() {
                while open[i] {
                    match input.try_read() {
                        Ok(Token::Data(v)) => buckets[i].push(v),
                        Ok(Token::Eot) => open[i] = false,
                        Err(_) => break,
                    }
                    progressed = true;
                }
            }
            if !progressed {
                let waits: Vec<_> = ins
                    .iter()
                    .zip(&open)
                    .filter(|(_, o)| **o)
                    .map(|(s, _)| s.readable())
                    .collect();
                io.wait_any(&waits).await;
            }
        }
        for mut bucket in buckets {
            bucket.sort_unstable_by_key(|v| v & 0xffff);
            for v in bucket {
                io.emit("sorted", v >> 16);
            }
        }
        Ok(())
    })
}

/// Stable sort of `keys` by bucket.
pub fn reference_sort(n: usize, keys: &[u16]) -> Vec<u64> {
    let mut sorted = keys.to_vec();
    sorted.sort_by_key(|k| bucket_of(*k, n));
    sorted.into_iter().map(u64::from).collect()
}

pub fn build_network(n: usize, keys: &[u16]) -> Result<BenchInstance, BenchError> {
    if n != 8 && n != 16 {
        return Err(BenchError::BadSize(format!("network needs n in {{8, 16}}, got {n}")));
    }
    if keys.len() > MAX_RECORDS {
        return Err(BenchError::BadSize(format!("at most {MAX_RECORDS} records")));
    }
    let m = log2(n);

    let mut g = ProgramGraph::new("Kernel");
    g.add_token_type(TokenType::new("Record", 32)).expect("fresh graph");
    let mut produce = TaskDefinition::leaf("Produce").scalar("n").scalar("keys");
    let mut consume = TaskDefinition::leaf("Consume").scalar("n");
    for x in 0..n {
        produce = produce.output(format!("out{x}"), "Record");
        consume = consume.input(format!("in{x}"), "Record");
    }
    g.add_definition(produce.behavior(produce_behavior())).expect("fresh graph");
    g.add_definition(
        TaskDefinition::leaf("Switch")
            .input("in0", "Record")
            .input("in1", "Record")
            .output("out0", "Record")
            .output("out1", "Record")
            .scalar("bit")
            .behavior(switch_behavior()),
    )
    .expect("fresh graph");
    g.add_definition(consume.behavior(consume_behavior())).expect("fresh graph");

    let mut kernel = TaskDefinition::parent("Kernel");
    for s in 0..=m {
        for x in 0..n {
            kernel = kernel.channel(format!("l{s}_{x}"), "Record", 2);
        }
    }
    let mut produce_call = ChildInvocation::of("Produce")
        .scalar("n", ScalarValue::Int(n as i64))
        .scalar("keys", ScalarValue::IntList(keys.iter().map(|k| *k as i64).collect()));
    let mut consume_call = ChildInvocation::of("Consume").scalar("n", ScalarValue::Int(n as i64));
    for x in 0..n {
        produce_call = produce_call.channel(format!("out{x}"), format!("l0_{x}"));
        consume_call = consume_call.channel(format!("in{x}"), format!("l{m}_{x}"));
    }
    kernel = kernel.invoke(produce_call);
    for s in 0..m {
        // Stage s settles bucket bit m-1-s, i.e. token bit 31-s.
        let bit = 31 - s as i64;
        for k in 0..n / 2 {
            kernel = kernel.invoke(
                ChildInvocation::of("Switch")
                    .channel("in0", format!("l{s}_{}", rotr(2 * k, m)))
                    .channel("in1", format!("l{s}_{}", rotr(2 * k + 1, m)))
                    .channel("out0", format!("l{}_{}", s + 1, 2 * k))
                    .channel("out1", format!("l{}_{}", s + 1, 2 * k + 1))
                    .scalar("bit", ScalarValue::Int(bit)),
            );
        }
    }
    g.add_definition(kernel.invoke(consume_call)).expect("fresh graph");

    Ok(BenchInstance {
        name: "network".into(),
        graph: g,
        harness: Harness::new(),
        oracle: Oracle::Exact(BTreeMap::from([("sorted".into(), reference_sort(n, keys))])),
    })
}

pub fn random_keys(count: usize, seed: u64) -> Vec<u16> {
    let mut rng = super::rng(seed);
    (0..count).map(|_| rng.random()).collect()
}

pub fn from_params(p: &BenchParams) -> Result<BenchInstance, BenchError> {
    let n = p.size.unwrap_or(8);
    let count = p.instances.unwrap_or(64);
    build_network(n, &random_keys(count, p.seed))
}
