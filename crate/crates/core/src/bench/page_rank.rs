//! PageRank with a controller and `K` workers.
//!
//! Every iteration the controller broadcasts all current ranks to each
//! worker, and each worker returns the new ranks of its contiguous vertex
//! range. Ranks travel as `f64` bit patterns in 64-bit tokens. Dangling
//! vertices spread their rank uniformly.

use std::collections::BTreeMap;

use rand::Rng;

use super::{BenchError, BenchInstance, BenchParams, Oracle};
use crate::graph::{ChildInvocation, ProgramGraph, ScalarValue, TaskDefinition, TokenType};
use crate::scheduler::behavior::{BehaviorError, BehaviorRef, TaskIo};
use crate::scheduler::Harness;

pub const MAX_VERTICES: usize = 64;
pub const REL_TOL: f64 = 1e-9;

pub fn controller_behavior() -> BehaviorRef {
    BehaviorRef::from_async("page_rank.controller", |io: TaskIo| async move {
        let v = io.scalar_usize("v")?;
        let iters = io.scalar_usize("iters")?;
        let bounds = io.scalar_ints("bounds")?;
        let k = bounds.len() - 1;
        let ranks_out = io.ostreams("ranks", k)?;
        let contrib_in = io.istreams("contrib", k)?;

        let mut ranks = vec![1.0 / v as f64; v];
        for _ in 0..iters {
            for out in &ranks_out {
                for r in &ranks {
                    out.write(r.to_bits()).await?;
                }
            }
            for (w, input) in contrib_in.iter().enumerate() {
                for slot in &mut ranks[bounds[w] as usize..bounds[w + 1] as usize] {
                    *slot = f64::from_bits(input.read_data().await?);
                }
            }
        }
        for out in &ranks_out {
            out.close().await?;
        }
        for input in &contrib_in {
            input.read_eot().await?;
        }
        for r in ranks {
            io.emit("rank", r.to_bits());
        }
        Ok(())
    })
}

pub fn worker_behavior() -> BehaviorRef {
    BehaviorRef::from_async("page_rank.worker", |io: TaskIo| async move {
        let v = io.scalar_usize("v")?;
        let iters = io.scalar_usize("iters")?;
        let d = io.scalar_float("d")?;
        let outdeg = io.scalar_ints("outdeg")?;
        let offsets = io.scalar_ints("in_offsets")?;
        let sources = io.scalar_ints("in_sources")?;
        if outdeg.len() != v || offsets.is_empty() {
            return Err(BehaviorError::Failed("malformed graph scalars".into()));
        }
        let ranks_in = io.istream("ranks")?;
        let contrib_out = io.ostream("contrib")?;

        let mut ranks = vec![0.0; v];
        for _ in 0..iters {
            for r in &mut ranks {
                *r = f64::from_bits(ranks_in.read_data().await?);
            }
            let dangling: f64 = (0..v).filter(|&u| outdeg[u] == 0).map(|u| ranks[u]).sum();
            for local in 0..offsets.len() - 1 {
                let incoming: f64 = sources[offsets[local] as usize..offsets[local + 1] as usize]
                    .iter()
                    .map(|&u| ranks[u as usize] / outdeg[u as usize] as f64)
                    .sum();
                let next = (1.0 - d) / v as f64 + d * (incoming + dangling / v as f64);
                contrib_out.write(next.to_bits()).await?;
            }
        }
        ranks_in.read_eot().await?;
        contrib_out.close().await
    })
}

/// Dense power iteration over the column-stochastic transition matrix.
pub fn reference_ranks(v: usize, edges: &[(usize, usize)], d: f64, iters: usize) -> Vec<f64> {
    let mut m = vec![vec![0.0; v]; v];
    let mut outdeg = vec![0usize; v];
    for &(u, _) in edges {
        outdeg[u] += 1;
    }
    for &(u, w) in edges {
        m[w][u] += 1.0 / outdeg[u] as f64;
    }
    for (u, deg) in outdeg.iter().enumerate() {
        if *deg == 0 {
            for row in m.iter_mut() {
                row[u] = 1.0 / v as f64;
            }
        }
    }
    let mut r = vec![1.0 / v as f64; v];
    for _ in 0..iters {
        r = m
            .iter()
            .map(|row| (1.0 - d) / v as f64 + d * row.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>())
            .collect();
    }
    r
}

/// `edges` are directed `(from, to)` pairs; duplicates count with
/// multiplicity.
pub fn build_page_rank(
    v: usize,
    edges: &[(usize, usize)],
    d: f64,
    iters: usize,
    workers: usize,
) -> Result<BenchInstance, BenchError> {
    if !(2..=MAX_VERTICES).contains(&v) {
        return Err(BenchError::BadSize(format!("page_rank needs 2..={MAX_VERTICES} vertices, got {v}")));
    }
    if !(1..=v).contains(&workers) {
        return Err(BenchError::BadSize(format!("worker count {workers} outside 1..={v}")));
    }
    if let Some(e) = edges.iter().find(|(a, b)| *a >= v || *b >= v) {
        return Err(BenchError::BadSize(format!("edge {e:?} outside the graph")));
    }
    if !(0.0..=1.0).contains(&d) {
        return Err(BenchError::BadSize(format!("damping {d} outside [0, 1]")));
    }

    let mut outdeg = vec![0i64; v];
    let mut incoming: Vec<Vec<i64>> = vec![Vec::new(); v];
    for &(a, b) in edges {
        outdeg[a] += 1;
        incoming[b].push(a as i64);
    }
    let bounds: Vec<usize> = (0..=workers).map(|k| k * v / workers).collect();

    let mut g = ProgramGraph::new("PageRank");
    g.add_token_type(TokenType::new("Rank", 64)).expect("fresh graph");
    let mut controller = TaskDefinition::leaf("Controller").scalar("v").scalar("iters").scalar("bounds");
    for k in 0..workers {
        controller = controller.output(format!("ranks{k}"), "Rank").input(format!("contrib{k}"), "Rank");
    }
    g.add_definition(controller.behavior(controller_behavior())).expect("fresh graph");
    g.add_definition(
        TaskDefinition::leaf("Worker")
            .input("ranks", "Rank")
            .output("contrib", "Rank")
            .scalar("v")
            .scalar("iters")
            .scalar("d")
            .scalar("outdeg")
            .scalar("in_offsets")
            .scalar("in_sources")
            .behavior(worker_behavior()),
    )
    .expect("fresh graph");

    let int = |x: usize| ScalarValue::Int(x as i64);
    let mut top = TaskDefinition::parent("PageRank");
    let mut controller_call = ChildInvocation::of("Controller")
        .scalar("v", int(v))
        .scalar("iters", int(iters))
        .scalar("bounds", ScalarValue::IntList(bounds.iter().map(|b| *b as i64).collect()));
    let mut worker_calls = Vec::new();
    for k in 0..workers {
        top = top
            .channel(format!("ranks_{k}"), "Rank", 2)
            .channel(format!("contrib_{k}"), "Rank", 2);
        controller_call = controller_call
            .channel(format!("ranks{k}"), format!("ranks_{k}"))
            .channel(format!("contrib{k}"), format!("contrib_{k}"));
        let (lo, hi) = (bounds[k], bounds[k + 1]);
        let mut offsets = vec![0i64];
        let mut sources = Vec::new();
        for list in &incoming[lo..hi] {
            sources.extend_from_slice(list);
            offsets.push(sources.len() as i64);
        }
        worker_calls.push(
            ChildInvocation::of("Worker")
                .channel("ranks", format!("ranks_{k}"))
                .channel("contrib", format!("contrib_{k}"))
                .scalar("v", int(v))
                .scalar("iters", int(iters))
                .scalar("d", ScalarValue::Float(d))
                .scalar("outdeg", ScalarValue::IntList(outdeg.clone()))
                .scalar("in_offsets", ScalarValue::IntList(offsets))
                .scalar("in_sources", ScalarValue::IntList(sources)),
        );
    }
    top = top.invoke(controller_call);
    for w in worker_calls {
        top = top.invoke(w);
    }
    g.add_definition(top).expect("fresh graph");

    Ok(BenchInstance {
        name: "page_rank".into(),
        graph: g,
        harness: Harness::new(),
        oracle: Oracle::Approx {
            expected: BTreeMap::from([("rank".into(), reference_ranks(v, edges, d, iters))]),
            rel_tol: REL_TOL,
        },
    })
}

/// Each vertex gets up to three random out-edges; some end up dangling.
pub fn random_edges(v: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = super::rng(seed);
    let mut edges = Vec::new();
    for u in 0..v {
        for _ in 0..rng.random_range(0..=3) {
            edges.push((u, rng.random_range(0..v)));
        }
    }
    edges
}

pub fn from_params(p: &BenchParams) -> Result<BenchInstance, BenchError> {
    let v = p.size.unwrap_or(5);
    let workers = p.instances.unwrap_or(2).min(v.max(1));
    build_page_rank(v, &random_edges(v, p.seed), 0.85, 20, workers)
}
