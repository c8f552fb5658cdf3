//! PEs exchanging packets over a unidirectional ring of routing nodes.
//!
//! Node `i` forwards its ring output to node `i + 1`. Each node also has a
//! link pair to its PE. A packet is one 32-bit token: destination in bits
//! 31..24, source in 23..16, payload in 15..0.
//!
//! Nodes give packets injected by their PE priority on the ring output. A
//! ring packet at the head of `node_in` is inspected with a peek and either
//! delivered to the local PE or forwarded. Every node knows how many ring
//! packets will pass through it (`transit`), so it can close its outputs
//! once its PE has closed and all of those have been handled.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use super::{BenchError, BenchInstance, BenchParams, Oracle};
use crate::channel::Token;
use crate::graph::{ChildInvocation, ProgramGraph, ScalarValue, TaskDefinition, TokenType};
use crate::scheduler::behavior::{BehaviorRef, TaskIo, WaitOn};
use crate::scheduler::Harness;

pub const MAX_PES: usize = 255;

pub fn packet(dest: usize, src: usize, payload: u16) -> u64 {
    (dest as u64) << 24 | (src as u64) << 16 | payload as u64
}

pub fn dest_of(packet: u64) -> usize {
    (packet >> 24) as usize & 0xff
}

pub fn src_of(packet: u64) -> usize {
    (packet >> 16) as usize & 0xff
}

pub fn node_behavior() -> BehaviorRef {
    BehaviorRef::from_async("ring.node", |io: TaskIo| async move {
        let id = io.scalar_usize("id")?;
        let transit = io.scalar_usize("transit")?;
        let pe_in = io.istream("pe_in")?;
        let node_in = io.istream("node_in")?;
        let pe_out = io.ostream("pe_out")?;
        let node_out = io.ostream("node_out")?;

        let mut pe_open = true;
        let mut arrived = 0;
        while pe_open || arrived < transit {
            let mut progressed = false;
            let mut waits = Vec::new();

            if pe_open {
                match pe_in.try_eot() {
                    Ok(true) => {
                        pe_in.try_read().expect("head present");
                        pe_open = false;
                        progressed = true;
                    }
                    Ok(false) => {
                        let pkt = pe_in.try_peek().expect("head present");
                        if node_out.try_put(pkt)? {
                            pe_in.try_read().expect("head present");
                            progressed = true;
                        } else {
                            waits.push(WaitOn::Writable(&node_out));
                        }
                    }
                    Err(_) => waits.push(WaitOn::Readable(&pe_in)),
                }
            }

            if arrived < transit {
                match node_in.try_peek() {
                    Ok(Token::Data(pkt)) => {
                        let out = if dest_of(pkt) == id { &pe_out } else { &node_out };
                        if out.try_write(pkt)? {
                            node_in.try_read().expect("head present");
                            arrived += 1;
                            progressed = true;
                        } else {
                            waits.push(WaitOn::Writable(out));
                        }
                    }
                    Ok(Token::Eot) => {
                        return Err(crate::BehaviorError::UnexpectedEot(node_in.name().to_owned()))
                    }
                    Err(_) => waits.push(WaitOn::Readable(&node_in)),
                }
            }

            if !progressed {
                io.wait_any(&waits).await;
            }
        }

        node_out.close().await?;
        pe_out.close().await?;
        node_in.read_eot().await
    })
}

pub fn pe_behavior() -> BehaviorRef {
    BehaviorRef::from_async("ring.pe", |io: TaskIo| async move {
        let label = format!("pe{}", io.scalar_int("id")?);
        let sends = io.scalar_ints("sends")?;
        let to_node = io.ostream("to_node")?;
        let from_node = io.istream("from_node")?;

        let mut next = 0;
        let mut closed = false;
        let mut received_eot = false;
        while !(closed && received_eot) {
            let mut progressed = false;
            if next < sends.len() {
                if to_node.try_write(sends[next] as u64)? {
                    next += 1;
                    progressed = true;
                }
            } else if !closed && to_node.try_close() {
                closed = true;
                progressed = true;
            }
            if !received_eot {
                match from_node.try_read() {
                    Ok(Token::Data(v)) => {
                        io.emit(label.clone(), v);
                        progressed = true;
                    }
                    Ok(Token::Eot) => {
                        received_eot = true;
                        progressed = true;
                    }
                    Err(_) => {}
                }
            }
            if !progressed {
                let mut waits = Vec::new();
                if !closed {
                    waits.push(to_node.writable());
                }
                if !received_eot {
                    waits.push(from_node.readable());
                }
                io.wait_any(&waits).await;
            }
        }
        Ok(())
    })
}

/// Ring packets that pass through each node's ring input.
fn transit_counts(n: usize, sends: &[Vec<(usize, u16)>]) -> Vec<usize> {
    let mut transit = vec![0; n];
    for (src, list) in sends.iter().enumerate() {
        for &(dest, _) in list {
            let hops = match (dest + n - src) % n {
                0 => n,
                h => h,
            };
            for h in 1..=hops {
                transit[(src + h) % n] += 1;
            }
        }
    }
    transit
}

/// Moves packets one hop at a time through a single shared queue until each
/// reaches its destination node.
pub fn reference_delivery(n: usize, sends: &[Vec<(usize, u16)>]) -> BTreeMap<String, Vec<u64>> {
    let mut delivered: BTreeMap<String, Vec<u64>> = (0..n).map(|i| (format!("pe{i}"), Vec::new())).collect();
    let mut in_flight: VecDeque<(u64, usize)> = VecDeque::new();
    for (src, list) in sends.iter().enumerate() {
        for &(dest, payload) in list {
            in_flight.push_back((packet(dest, src, payload), src));
        }
    }
    while let Some((pkt, at)) = in_flight.pop_front() {
        let next = (at + 1) % n;
        if next == dest_of(pkt) {
            delivered.get_mut(&format!("pe{next}")).unwrap().push(pkt);
        } else {
            in_flight.push_back((pkt, next));
        }
    }
    delivered
}

/// `sends[i]` lists `(destination, payload)` pairs PE `i` injects, in order.
/// Ring links default to a capacity that can hold every packet at once.
pub fn build_ring(
    n_pe: usize,
    sends: &[Vec<(usize, u16)>],
    ring_capacity: Option<usize>,
) -> Result<BenchInstance, BenchError> {
    if !(2..=MAX_PES).contains(&n_pe) {
        return Err(BenchError::BadSize(format!("ring needs 2..={MAX_PES} PEs, got {n_pe}")));
    }
    if sends.len() != n_pe {
        return Err(BenchError::BadSize(format!("{} send lists for {n_pe} PEs", sends.len())));
    }
    if let Some(&(d, _)) = sends.iter().flatten().find(|(d, _)| *d >= n_pe) {
        return Err(BenchError::BadSize(format!("destination {d} outside the ring")));
    }
    let total: usize = sends.iter().map(Vec::len).sum();
    let ring_capacity = ring_capacity.unwrap_or(total.max(2));
    let transit = transit_counts(n_pe, sends);

    let mut g = ProgramGraph::new("Kernel");
    g.add_token_type(TokenType::new("Pkt", 32)).expect("fresh graph");
    g.add_definition(
        TaskDefinition::leaf("RingNode")
            .input("pe_in", "Pkt")
            .input("node_in", "Pkt")
            .output("pe_out", "Pkt")
            .output("node_out", "Pkt")
            .scalar("id")
            .scalar("transit")
            .behavior(node_behavior()),
    )
    .expect("fresh graph");
    g.add_definition(
        TaskDefinition::leaf("PE")
            .input("from_node", "Pkt")
            .output("to_node", "Pkt")
            .scalar("id")
            .scalar("sends")
            .behavior(pe_behavior()),
    )
    .expect("fresh graph");

    let mut kernel = TaskDefinition::parent("Kernel");
    for i in 0..n_pe {
        kernel = kernel
            .channel(format!("ring{i}"), "Pkt", ring_capacity)
            .channel(format!("pe_to_node{i}"), "Pkt", 2)
            .channel(format!("node_to_pe{i}"), "Pkt", 2);
    }
    for i in 0..n_pe {
        kernel = kernel.invoke(
            ChildInvocation::of("RingNode")
                .channel("pe_in", format!("pe_to_node{i}"))
                .channel("node_in", format!("ring{}", (i + n_pe - 1) % n_pe))
                .channel("pe_out", format!("node_to_pe{i}"))
                .channel("node_out", format!("ring{i}"))
                .scalar("id", ScalarValue::Int(i as i64))
                .scalar("transit", ScalarValue::Int(transit[i] as i64)),
        );
    }
    for (i, list) in sends.iter().enumerate() {
        let packed = list.iter().map(|&(d, p)| packet(d, i, p) as i64).collect();
        kernel = kernel.invoke(
            ChildInvocation::of("PE")
                .channel("from_node", format!("node_to_pe{i}"))
                .channel("to_node", format!("pe_to_node{i}"))
                .scalar("id", ScalarValue::Int(i as i64))
                .scalar("sends", ScalarValue::IntList(packed)),
        );
    }
    g.add_definition(kernel).expect("fresh graph");

    Ok(BenchInstance {
        name: "ring".into(),
        graph: g,
        harness: Harness::new(),
        oracle: Oracle::Multiset(reference_delivery(n_pe, sends)),
    })
}

/// Every PE sends `per_pe` packets to random destinations with random payloads.
pub fn random_sends(n_pe: usize, per_pe: usize, seed: u64) -> Vec<Vec<(usize, u16)>> {
    let mut rng = super::rng(seed);
    (0..n_pe)
        .map(|_| (0..per_pe).map(|_| (rng.random_range(0..n_pe), rng.random())).collect())
        .collect()
}

pub fn from_params(p: &BenchParams) -> Result<BenchInstance, BenchError> {
    let n = p.size.unwrap_or(4);
    let sends = if (2..=MAX_PES).contains(&n) {
        random_sends(n, 2, p.seed)
    } else {
        Vec::new()
    };
    build_ring(n, &sends, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{run, spawn_all, RunOutcome, SchedulerConfig};

    fn run_ring(bench: &BenchInstance, workers: usize) -> crate::RunReport {
        let mut state = spawn_all(&bench.graph, &bench.harness).unwrap();
        run(&mut state, &SchedulerConfig::default().workers(workers)).unwrap()
    }

    #[test]
    fn packet_fields_round_trip() {
        let p = packet(3, 1, 0xbeef);
        assert_eq!((dest_of(p), src_of(p), p & 0xffff), (3, 1, 0xbeef));
    }

    #[test]
    fn transit_counts_follow_hops() {
        // 0 -> 2 passes nodes 1 and 2; self-send at 1 goes all the way around.
        assert_eq!(transit_counts(4, &[vec![(2, 0)], vec![(1, 0)], vec![], vec![]]), [1, 2, 2, 1]);
    }

    #[test]
    fn four_pes_send_two_ahead() {
        let sends: Vec<_> = (0..4).map(|i| vec![((i + 2) % 4, i as u16)]).collect();
        let bench = build_ring(4, &sends, None).unwrap();
        let report = run_ring(&bench, 1);
        assert_eq!(report.outcome, RunOutcome::Completed);
        bench.check(&report).unwrap();
        for i in 0..4 {
            assert_eq!(report.output(&format!("pe{i}")).len(), 1);
        }
        assert!(report.is_drained());
    }

    #[test]
    fn two_pe_ring() {
        let sends = vec![vec![(1, 7), (0, 8)], vec![(0, 9)]];
        let bench = build_ring(2, &sends, None).unwrap();
        let report = run_ring(&bench, 1);
        assert_eq!(report.outcome, RunOutcome::Completed);
        bench.check(&report).unwrap();
    }

    #[test]
    fn silent_ring_moves_only_eot() {
        let bench = build_ring(4, &vec![vec![]; 4], None).unwrap();
        let report = run_ring(&bench, 1);
        assert_eq!(report.outcome, RunOutcome::Completed);
        assert_eq!(report.total_data_tokens(), 0);
        assert_eq!(report.total_eot_tokens(), 12);
        assert!(report.is_drained());
    }

    #[test]
    fn random_rings_match_reference() {
        for seed in 0..10 {
            let sends = random_sends(5, 4, seed);
            let bench = build_ring(5, &sends, None).unwrap();
            for workers in [1, 3] {
                let report = run_ring(&bench, workers);
                assert_eq!(report.outcome, RunOutcome::Completed, "seed {seed}");
                bench.check(&report).unwrap();
                assert!(report.is_drained());
            }
        }
    }

    #[test]
    fn bad_sizes() {
        assert!(matches!(build_ring(1, &[vec![]], None), Err(BenchError::BadSize(_))));
        assert!(matches!(build_ring(2, &[vec![(5, 0)], vec![]], None), Err(BenchError::BadSize(_))));
    }
}
