//! Desk-scale benchmark programs, each a graph builder plus leaf behaviors
//! and an oracle computed independently of the simulator.

pub mod cannon;
pub mod network;
pub mod page_rank;
pub mod pipeline;
pub mod ring;
pub mod stress;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::channel::Token;
use crate::graph::ProgramGraph;
use crate::scheduler::behavior::{BehaviorLibrary, BehaviorRef, TaskIo};
use crate::scheduler::{Harness, RunReport};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BenchError {
    #[error("bad size: {0}")]
    BadSize(String),
    #[error("unknown benchmark `{0}`")]
    UnknownBench(String),
}

/// Expected run outputs, keyed by output label. A label absent from either
/// side counts as an empty sequence.
#[derive(Clone, Debug, PartialEq)]
pub enum Oracle {
    Exact(BTreeMap<String, Vec<u64>>),
    /// Same values per label, in any order.
    Multiset(BTreeMap<String, Vec<u64>>),
    /// Values are `f64` bit patterns compared with a relative tolerance.
    Approx {
        expected: BTreeMap<String, Vec<f64>>,
        rel_tol: f64,
    },
}

impl Oracle {
    pub fn check(&self, outputs: &BTreeMap<String, Vec<u64>>) -> Result<(), String> {
        let get = |k: &str| outputs.get(k).map(Vec::as_slice).unwrap_or(&[]);
        let expected_keys: BTreeSet<&str> = match self {
            Oracle::Exact(m) | Oracle::Multiset(m) => m.keys().map(String::as_str).collect(),
            Oracle::Approx { expected, .. } => expected.keys().map(String::as_str).collect(),
        };
        for (k, v) in outputs {
            if !expected_keys.contains(k.as_str()) && !v.is_empty() {
                return Err(format!("unexpected output `{k}`: {v:?}"));
            }
        }
        match self {
            Oracle::Exact(m) => {
                for (k, want) in m {
                    if get(k) != want.as_slice() {
                        return Err(format!("`{k}`: expected {want:?}, got {:?}", get(k)));
                    }
                }
            }
            Oracle::Multiset(m) => {
                for (k, want) in m {
                    let mut got = get(k).to_vec();
                    let mut want = want.clone();
                    got.sort_unstable();
                    want.sort_unstable();
                    if got != want {
                        return Err(format!("`{k}`: expected multiset {want:?}, got {got:?}"));
                    }
                }
            }
            Oracle::Approx { expected, rel_tol } => {
                for (k, want) in expected {
                    let got: Vec<f64> = get(k).iter().map(|b| f64::from_bits(*b)).collect();
                    if got.len() != want.len() {
                        return Err(format!("`{k}`: expected {} values, got {}", want.len(), got.len()));
                    }
                    for (i, (g, w)) in got.iter().zip(want).enumerate() {
                        let err = (g - w).abs() / w.abs().max(f64::MIN_POSITIVE);
                        if err > *rel_tol {
                            return Err(format!("`{k}`[{i}]: {g} vs {w}, relative error {err:e}"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// A ready-to-run benchmark: graph, harness inputs and expected outputs.
#[derive(Clone, Debug)]
pub struct BenchInstance {
    pub name: String,
    pub graph: ProgramGraph,
    pub harness: Harness,
    pub oracle: Oracle,
}

impl BenchInstance {
    pub fn check(&self, report: &RunReport) -> Result<(), String> {
        self.oracle.check(&report.outputs)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BenchParams {
    /// Main size knob; meaning depends on the benchmark.
    pub size: Option<usize>,
    /// Instance count for benchmarks that scale by replication.
    pub instances: Option<usize>,
    pub seed: u64,
}

pub struct BenchEntry {
    pub name: &'static str,
    pub summary: &'static str,
    /// What `--size` means and its accepted range.
    pub size_help: &'static str,
    pub build: fn(&BenchParams) -> Result<BenchInstance, BenchError>,
}

pub fn registry() -> &'static [BenchEntry] {
    &[
        BenchEntry {
            name: "cannon",
            summary: "Cannon matrix multiply on a p x p torus of PEs (feedback loops)",
            size_help: "p in {2, 3}; default 2",
            build: cannon::from_params,
        },
        BenchEntry {
            name: "network",
            summary: "bucket sort through an omega network of 2x2 switches",
            size_help: "n in {8, 16}; default 8",
            build: network::from_params,
        },
        BenchEntry {
            name: "page_rank",
            summary: "PageRank with a controller and workers exchanging ranks every iteration",
            size_help: "vertex count in 2..=64; default 5",
            build: page_rank::from_params,
        },
        BenchEntry {
            name: "pipeline",
            summary: "source, pass-through stages, sink",
            size_help: "token count; default 100",
            build: pipeline::from_params,
        },
        BenchEntry {
            name: "ring",
            summary: "PEs exchanging packets over a ring of routing nodes",
            size_help: "PE count in 2..=255; default 4",
            build: ring::from_params,
        },
        BenchEntry {
            name: "stress",
            summary: "chain of identical pass-through tasks between the top-level ports",
            size_help: "chain length (also --instances); default 564",
            build: stress::from_params,
        },
    ]
}

pub fn lookup(name: &str) -> Result<&'static BenchEntry, BenchError> {
    registry()
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| BenchError::UnknownBench(name.to_owned()))
}

pub fn build(name: &str, params: &BenchParams) -> Result<BenchInstance, BenchError> {
    (lookup(name)?.build)(params)
}

/// Every benchmark behavior, for re-attaching to imported graphs.
pub fn behaviors() -> BehaviorLibrary {
    let mut lib = BehaviorLibrary::new();
    for b in [
        pass_behavior(),
        cannon::scatter_behavior(),
        cannon::pe_behavior(),
        cannon::gather_behavior(),
        network::produce_behavior(),
        network::switch_behavior(),
        network::consume_behavior(),
        page_rank::controller_behavior(),
        page_rank::worker_behavior(),
        pipeline::source_behavior(),
        pipeline::sink_behavior(),
        ring::node_behavior(),
        ring::pe_behavior(),
    ] {
        lib.register(b);
    }
    lib
}

/// Forwards every token, EoT included, and finishes after the first EoT.
pub fn pass_behavior() -> BehaviorRef {
    BehaviorRef::from_async("pass", |io: TaskIo| async move {
        let input = io.istream("in")?;
        let out = io.ostream("out")?;
        loop {
            match input.read().await {
                Token::Data(v) => out.write(v).await?,
                Token::Eot => return out.close().await,
            }
        }
    })
}

fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_treats_missing_labels_as_empty() {
        let oracle = Oracle::Exact(BTreeMap::from([("a".into(), vec![]), ("b".into(), vec![1])]));
        let outputs = BTreeMap::from([("b".to_owned(), vec![1])]);
        assert!(oracle.check(&outputs).is_ok());
        let extra = BTreeMap::from([("b".to_owned(), vec![1]), ("c".to_owned(), vec![2])]);
        assert!(oracle.check(&extra).is_err());
    }

    #[test]
    fn multiset_and_approx() {
        let m = Oracle::Multiset(BTreeMap::from([("x".into(), vec![3, 1, 2])]));
        assert!(m.check(&BTreeMap::from([("x".to_owned(), vec![1, 2, 3])])).is_ok());
        assert!(m.check(&BTreeMap::from([("x".to_owned(), vec![1, 2])])).is_err());
        let a = Oracle::Approx {
            expected: BTreeMap::from([("r".into(), vec![0.25])]),
            rel_tol: 1e-9,
        };
        let close = (0.25f64 * (1.0 + 1e-12)).to_bits();
        assert!(a.check(&BTreeMap::from([("r".to_owned(), vec![close])])).is_ok());
        let far = 0.2501f64.to_bits();
        assert!(a.check(&BTreeMap::from([("r".to_owned(), vec![far])])).is_err());
    }

    #[test]
    fn registry_names_are_unique_and_resolvable() {
        let names: BTreeSet<_> = registry().iter().map(|e| e.name).collect();
        assert_eq!(names.len(), registry().len());
        assert!(matches!(lookup("nope"), Err(BenchError::UnknownBench(_))));
        assert_eq!(behaviors().len(), 13);
    }
}
