//! Every benchmark against its independent oracle over randomized instances.

use rand::SeedableRng;
use taskpar::bench::{self, cannon, network, page_rank, pipeline, ring, stress, BenchInstance, BenchParams};
use taskpar::scheduler::{run, spawn_all, RunOutcome, SchedulerConfig};

const INSTANCES: u64 = 20;

fn assert_passes(b: &BenchInstance, workers: usize, seed: u64) {
    let mut state = spawn_all(&b.graph, &b.harness).unwrap();
    let report = run(&mut state, &SchedulerConfig::default().workers(workers).seed(seed)).unwrap();
    assert_eq!(report.outcome, RunOutcome::Completed, "{} seed {seed}", b.name);
    b.check(&report).unwrap_or_else(|e| panic!("{} seed {seed}: {e}", b.name));
    assert!(report.is_drained(), "{} seed {seed} left tokens behind", b.name);
}

#[test]
fn ring_random() {
    for seed in 0..INSTANCES {
        let n = 2 + seed as usize % 7;
        let sends = ring::random_sends(n, 1 + seed as usize % 4, seed);
        assert_passes(&ring::build_ring(n, &sends, None).unwrap(), 1 + seed as usize % 3, seed);
    }
}

#[test]
fn cannon_random() {
    for seed in 0..INSTANCES {
        let p = 2 + seed as usize % 2;
        let block = 1 + seed as usize % 3;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = cannon::random_matrix(p * block, &mut rng);
        let b = cannon::random_matrix(p * block, &mut rng);
        assert_passes(&cannon::build_cannon(p, block, &a, &b).unwrap(), 1 + seed as usize % 4, seed);
    }
}

#[test]
fn network_random() {
    for seed in 0..INSTANCES {
        let n = if seed % 2 == 0 { 8 } else { 16 };
        let keys = network::random_keys(seed as usize * 7, seed);
        assert_passes(&network::build_network(n, &keys).unwrap(), 1 + seed as usize % 3, seed);
    }
}

#[test]
fn page_rank_random() {
    for seed in 0..INSTANCES {
        let v = 2 + seed as usize * 3;
        let edges = page_rank::random_edges(v, seed);
        let workers = 1 + seed as usize % v.min(5);
        assert_passes(&page_rank::build_page_rank(v, &edges, 0.85, 15, workers).unwrap(), 2, seed);
    }
}

#[test]
fn pipeline_and_stress_random() {
    for seed in 0..INSTANCES {
        let s = seed as usize;
        assert_passes(&pipeline::build_pipeline(s * 5, s % 6, 1 + s % 3).unwrap(), 1 + s % 2, seed);
        assert_passes(&stress::build_stress(1 + s * 13, s * 2).unwrap(), 1 + s % 4, seed);
    }
}

#[test]
fn registry_defaults_complete_under_every_worker_count() {
    for e in bench::registry() {
        let b = (e.build)(&BenchParams::default()).unwrap();
        for workers in [1, 2, 8] {
            assert_passes(&b, workers, 0);
        }
    }
}
