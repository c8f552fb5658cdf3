//! Cannon's matrix multiply on a `p x p` torus of processing elements.
//!
//! `Scatter` hands every PE its pre-skewed A and B blocks. Each PE multiplies
//! its current blocks, then passes A one step left and B one step up around
//! the torus, `p` times in all, and finally sends its C block to `Gather`.
//! The torus links form feedback loops, so a run-to-completion schedule
//! cannot execute this program.

use std::collections::BTreeMap;

use rand::Rng;

use super::{BenchError, BenchInstance, BenchParams, Oracle};
use crate::graph::{ChildInvocation, ProgramGraph, ScalarValue, TaskDefinition, TokenType};
use crate::scheduler::behavior::{BehaviorError, BehaviorRef, IStream, TaskIo};
use crate::scheduler::Harness;

/// Matrix elements must stay below this so every product sum fits 64 bits.
pub const MAX_ELEMENT: i64 = 1 << 16;

async fn read_block(input: &IStream, len: usize) -> Result<Vec<u64>, BehaviorError> {
    let mut block = Vec::with_capacity(len);
    for _ in 0..len {
        block.push(input.read_data().await?);
    }
    input.read_eot().await?;
    Ok(block)
}

pub fn scatter_behavior() -> BehaviorRef {
    BehaviorRef::from_async("cannon.scatter", |io: TaskIo| async move {
        let p = io.scalar_usize("p")?;
        let bs = io.scalar_usize("block")?;
        let a = io.scalar_ints("a")?;
        let b = io.scalar_ints("b")?;
        let n = p * bs;
        for i in 0..p {
            for j in 0..p {
                let k = (i + j) % p;
                let a_out = io.ostream(&format!("a_{i}_{j}"))?;
                for r in 0..bs {
                    for c in 0..bs {
                        a_out.write(a[(i * bs + r) * n + k * bs + c] as u64).await?;
                    }
                }
                a_out.close().await?;
                let b_out = io.ostream(&format!("b_{i}_{j}"))?;
                for r in 0..bs {
                    for c in 0..bs {
                        b_out.write(b[(k * bs + r) * n + j * bs + c] as u64).await?;
                    }
                }
                b_out.close().await?;
            }
        }
        Ok(())
    })
}

pub fn pe_behavior() -> BehaviorRef {
    BehaviorRef::from_async("cannon.pe", |io: TaskIo| async move {
        let p = io.scalar_usize("p")?;
        let bs = io.scalar_usize("block")?;
        let len = bs * bs;
        let mut a = read_block(&io.istream("a_init")?, len).await?;
        let mut b = read_block(&io.istream("b_init")?, len).await?;
        let a_left = io.ostream("a_left")?;
        let b_up = io.ostream("b_up")?;
        let a_right = io.istream("a_right")?;
        let b_below = io.istream("b_below")?;

        let mut c = vec![0u64; len];
        for step in 0..p {
            for r in 0..bs {
                for col in 0..bs {
                    for k in 0..bs {
                        c[r * bs + col] += a[r * bs + k] * b[k * bs + col];
                    }
                }
            }
            if step + 1 == p {
                break;
            }
            // Exchange element by element so the links never need more
            // than one token of slack per direction.
            for x in 0..len {
                a_left.write(a[x]).await?;
                b_up.write(b[x]).await?;
                a[x] = a_right.read_data().await?;
                b[x] = b_below.read_data().await?;
            }
        }
        a_left.close().await?;
        b_up.close().await?;
        a_right.read_eot().await?;
        b_below.read_eot().await?;

        let c_out = io.ostream("c_out")?;
        for v in c {
            c_out.write(v).await?;
        }
        c_out.close().await
    })
}

pub fn gather_behavior() -> BehaviorRef {
    BehaviorRef::from_async("cannon.gather", |io: TaskIo| async move {
        let p = io.scalar_usize("p")?;
        let bs = io.scalar_usize("block")?;
        let n = p * bs;
        let mut c = vec![0u64; n * n];
        for i in 0..p {
            for j in 0..p {
                let block = read_block(&io.istream(&format!("c_{i}_{j}"))?, bs * bs).await?;
                for r in 0..bs {
                    for col in 0..bs {
                        c[(i * bs + r) * n + j * bs + col] = block[r * bs + col];
                    }
                }
            }
        }
        for v in c {
            io.emit("C", v);
        }
        Ok(())
    })
}

/// Row-major dense product.
pub fn reference_product(n: usize, a: &[i64], b: &[i64]) -> Vec<u64> {
    let mut c = vec![0u64; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = (0..n).map(|k| (a[i * n + k] * b[k * n + j]) as u64).sum();
        }
    }
    c
}

/// `a` and `b` are row-major `(p * block)`-square matrices.
pub fn build_cannon(p: usize, block: usize, a: &[i64], b: &[i64]) -> Result<BenchInstance, BenchError> {
    if !(2..=3).contains(&p) {
        return Err(BenchError::BadSize(format!("cannon needs p in {{2, 3}}, got {p}")));
    }
    if block == 0 || block > 8 {
        return Err(BenchError::BadSize(format!("block size {block} outside 1..=8")));
    }
    let n = p * block;
    if a.len() != n * n || b.len() != n * n {
        return Err(BenchError::BadSize(format!("matrices must be {n}x{n}")));
    }
    if a.iter().chain(b).any(|v| !(0..MAX_ELEMENT).contains(v)) {
        return Err(BenchError::BadSize(format!("elements must lie in 0..{MAX_ELEMENT}")));
    }

    let mut g = ProgramGraph::new("Cannon");
    g.add_token_type(TokenType::new("Elem", 32)).expect("fresh graph");
    g.add_token_type(TokenType::new("Acc", 64)).expect("fresh graph");

    let mut scatter = TaskDefinition::leaf("Scatter")
        .scalar("p")
        .scalar("block")
        .scalar("a")
        .scalar("b");
    let mut gather = TaskDefinition::leaf("Gather").scalar("p").scalar("block");
    for i in 0..p {
        for j in 0..p {
            scatter = scatter
                .output(format!("a_{i}_{j}"), "Elem")
                .output(format!("b_{i}_{j}"), "Elem");
            gather = gather.input(format!("c_{i}_{j}"), "Acc");
        }
    }
    g.add_definition(scatter.behavior(scatter_behavior())).expect("fresh graph");
    g.add_definition(
        TaskDefinition::leaf("ProcElem")
            .input("a_init", "Elem")
            .input("b_init", "Elem")
            .input("a_right", "Elem")
            .input("b_below", "Elem")
            .output("a_left", "Elem")
            .output("b_up", "Elem")
            .output("c_out", "Acc")
            .scalar("p")
            .scalar("block")
            .behavior(pe_behavior()),
    )
    .expect("fresh graph");
    g.add_definition(gather.behavior(gather_behavior())).expect("fresh graph");

    let size = |v: usize| ScalarValue::Int(v as i64);
    let mut top = TaskDefinition::parent("Cannon");
    let mut scatter_call = ChildInvocation::of("Scatter")
        .scalar("p", size(p))
        .scalar("block", size(block))
        .scalar("a", ScalarValue::IntList(a.to_vec()))
        .scalar("b", ScalarValue::IntList(b.to_vec()));
    let mut gather_call = ChildInvocation::of("Gather").scalar("p", size(p)).scalar("block", size(block));
    let mut pes = Vec::new();
    for i in 0..p {
        for j in 0..p {
            for prefix in ["sa", "sb", "ah", "bv"] {
                top = top.channel(format!("{prefix}_{i}_{j}"), "Elem", 2);
            }
            top = top.channel(format!("c_{i}_{j}"), "Acc", 2);
            scatter_call = scatter_call
                .channel(format!("a_{i}_{j}"), format!("sa_{i}_{j}"))
                .channel(format!("b_{i}_{j}"), format!("sb_{i}_{j}"));
            gather_call = gather_call.channel(format!("c_{i}_{j}"), format!("c_{i}_{j}"));
            pes.push(
                ChildInvocation::of("ProcElem")
                    .channel("a_init", format!("sa_{i}_{j}"))
                    .channel("b_init", format!("sb_{i}_{j}"))
                    .channel("a_left", format!("ah_{i}_{j}"))
                    .channel("a_right", format!("ah_{i}_{}", (j + 1) % p))
                    .channel("b_up", format!("bv_{i}_{j}"))
                    .channel("b_below", format!("bv_{}_{j}", (i + 1) % p))
                    .channel("c_out", format!("c_{i}_{j}"))
                    .scalar("p", size(p))
                    .scalar("block", size(block)),
            );
        }
    }
    top = top.invoke(scatter_call);
    for pe in pes {
        top = top.invoke(pe);
    }
    g.add_definition(top.invoke(gather_call)).expect("fresh graph");

    Ok(BenchInstance {
        name: "cannon".into(),
        graph: g,
        harness: Harness::new(),
        oracle: Oracle::Exact(BTreeMap::from([("C".into(), reference_product(n, a, b))])),
    })
}

pub fn random_matrix(n: usize, rng: &mut impl Rng) -> Vec<i64> {
    (0..n * n).map(|_| rng.random_range(0..100)).collect()
}

pub fn from_params(params: &BenchParams) -> Result<BenchInstance, BenchError> {
    let p = params.size.unwrap_or(2);
    let block = 2;
    let mut rng = super::rng(params.seed);
    let n = p.min(3) * block;
    let a = random_matrix(n, &mut rng);
    let b = random_matrix(n, &mut rng);
    build_cannon(p, block, &a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{run, spawn_all, RunOutcome, SchedulerConfig};

    fn run_with(bench: &BenchInstance, config: SchedulerConfig) -> crate::RunReport {
        let mut state = spawn_all(&bench.graph, &bench.harness).unwrap();
        run(&mut state, &config).unwrap()
    }

    #[test]
    fn small_product_matches_reference() {
        let a: Vec<i64> = (0..16).collect();
        let b: Vec<i64> = (0..16).rev().collect();
        let bench = build_cannon(2, 2, &a, &b).unwrap();
        let stats = bench.graph.stats().unwrap();
        assert_eq!((stats.num_definitions, stats.num_instances, stats.num_channels), (3, 6, 20));
        let report = run_with(&bench, SchedulerConfig::default());
        assert_eq!(report.outcome, RunOutcome::Completed);
        bench.check(&report).unwrap();
        assert!(report.is_drained());
    }

    #[test]
    fn identity_times_m_is_m() {
        let n = 6;
        let id: Vec<i64> = (0..n * n).map(|k| (k / n == k % n) as i64).collect();
        let m: Vec<i64> = (0..n * n).map(|k| (k * 7 % 13) as i64).collect();
        let bench = build_cannon(3, 2, &id, &m).unwrap();
        let report = run_with(&bench, SchedulerConfig::default());
        assert_eq!(report.output("C"), m.iter().map(|&v| v as u64).collect::<Vec<_>>());
    }

    #[test]
    fn sequential_mode_fails_at_first_pe() {
        let bench = from_params(&BenchParams::default()).unwrap();
        let report = run_with(&bench, SchedulerConfig::sequential());
        match report.outcome {
            RunOutcome::SequentialFailure { instance, .. } => assert_eq!(instance, "Cannon/ProcElem.0"),
            other => panic!("expected sequential failure, got {other:?}"),
        }
    }

    #[test]
    fn random_instances_with_workers() {
        for seed in 0..5 {
            for p in [2, 3] {
                let bench = from_params(&BenchParams {
                    size: Some(p),
                    seed,
                    ..Default::default()
                })
                .unwrap();
                let report = run_with(&bench, SchedulerConfig::default().workers(2).seed(seed));
                assert_eq!(report.outcome, RunOutcome::Completed);
                bench.check(&report).unwrap();
            }
        }
    }

    #[test]
    fn bad_sizes() {
        assert!(matches!(build_cannon(4, 2, &[], &[]), Err(BenchError::BadSize(_))));
        assert!(matches!(build_cannon(2, 2, &[0; 15], &[0; 16]), Err(BenchError::BadSize(_))));
    }
}
