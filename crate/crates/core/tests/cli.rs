use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn taskpar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskpar")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn schema() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas/cli-output.schema.json");
    let schema: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).expect("schema compiles")
}

fn json_of(args: &[&str]) -> (i32, Value) {
    let out = taskpar(args);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap_or_else(|e| panic!("{args:?}: {e}"));
    let validator = schema();
    let errors: Vec<String> = validator.iter_errors(&v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{args:?} violates schema: {errors:?}");
    (code(&out), v)
}

#[test]
fn sim_exit_codes() {
    let ok = taskpar(&["sim", "ring", "--size", "4", "--scheduler", "coroutine"]);
    assert_eq!(code(&ok), 0);
    assert!(stdout(&ok).contains("outcome: Completed"));
    let seq = taskpar(&["sim", "bench:cannon", "--size", "2", "--scheduler", "sequential"]);
    assert_eq!(code(&seq), 2);
    assert!(stdout(&seq).contains("SequentialFailure"));
    assert_eq!(code(&taskpar(&["sim", "bench:ring", "--size", "4", "--max-steps", "10"])), 3);
    assert_eq!(code(&taskpar(&["bench", "run", "page_rank", "--scheduler", "sequential"])), 2);
}

#[test]
fn usage_and_lookup_errors_exit_one() {
    let unknown = taskpar(&["graph", "bench:nope", "--stats"]);
    assert_eq!(code(&unknown), 1);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("unknown benchmark"));
    assert_eq!(code(&taskpar(&["sim", "ring", "--workers", "0"])), 1);
    assert_eq!(code(&taskpar(&["codegen", "ring", "--jobs", "0"])), 1);
    assert_eq!(code(&taskpar(&["sim", "ring", "--size", "1"])), 1);
    assert_eq!(code(&taskpar(&["bogus"])), 1);
}

#[test]
fn malformed_graph_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{ not json").unwrap();
    let out = taskpar(&["sim", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot parse"));
}

#[test]
fn graph_stats_and_round_trip() {
    let out = taskpar(&["graph", "bench:ring", "--size", "4", "--stats"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "definitions=2 instances=8 channels=12");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let p = path.to_str().unwrap();
    assert_eq!(code(&taskpar(&["graph", "bench:network", "--export", p, "--stats"])), 0);
    let again = taskpar(&["graph", p, "--stats"]);
    assert_eq!(stdout(&again).trim(), "definitions=3 instances=14 channels=32");
    // The imported graph resolves its behaviors and runs.
    assert_eq!(code(&taskpar(&["sim", p])), 0);
}

#[test]
fn codegen_dedup_and_unchanged_rerun() {
    let out = taskpar(&["codegen", "bench:stress", "--instances", "64", "--jobs", "8"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("backend_calls=1 "));

    let dir = tempfile::tempdir().unwrap();
    let pkg = dir.path().join("pkg");
    let p = pkg.to_str().unwrap();
    let first = taskpar(&["codegen", "bench:ring", "--size", "4", "--out", p]);
    assert_eq!(code(&first), 0);
    assert!(stdout(&first).contains("written"));
    for f in ["design.json", "manifest.json", "units/RingNode.v", "units/PE.v", "parents/Kernel.v", "top.v"] {
        assert!(pkg.join(f).is_file(), "missing {f}");
    }
    let second = taskpar(&["codegen", "bench:ring", "--size", "4", "--out", p]);
    assert!(stdout(&second).contains("unchanged"));
}

#[test]
fn trace_is_byte_stable_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.trace");
    let b = dir.path().join("b.trace");
    for path in [&a, &b] {
        let out = taskpar(&["trace", "bench:ring", "--seed", "7", "--workers", "1", "--out", path.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
    }
    let text = fs::read(&a).unwrap();
    assert!(!text.is_empty());
    assert_eq!(text, fs::read(&b).unwrap());

    let c = dir.path().join("c.trace");
    let out = taskpar(&["trace", "bench:network", "--workers", "4", "--out", c.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("replay: \"valid\""));
}

#[test]
fn trace_to_unwritable_path_fails() {
    let out = taskpar(&["trace", "bench:ring", "--out", "/nonexistent-dir/sub/t.trace"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn json_outputs_match_schema() {
    let (c, v) = json_of(&["sim", "bench:cannon", "--format", "json"]);
    assert_eq!(c, 0);
    assert_eq!(v["report"]["outcome"]["kind"], "completed");
    let (c, v) = json_of(&["sim", "bench:cannon", "--scheduler", "sequential", "--format", "json"]);
    assert_eq!(c, 2);
    assert_eq!(v["report"]["outcome"]["instance"], "Cannon/ProcElem.0");
    let (c, _) = json_of(&["sim", "bench:ring", "--max-steps", "5", "--format", "json"]);
    assert_eq!(c, 3);
    let (_, v) = json_of(&["codegen", "bench:network", "--jobs", "4", "--format", "json"]);
    assert_eq!(v["stats"]["backend_calls"], 3);
    let (_, v) = json_of(&["graph", "bench:ring", "--stats", "--format", "json"]);
    assert_eq!(v["instances"], 8);
    json_of(&["bench", "list", "--format", "json"]);
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t");
    json_of(&["trace", "bench:pipeline", "--out", t.to_str().unwrap(), "--format", "json"]);
}

#[test]
fn deadlock_report_validates() {
    // A two-task read cycle exported as a graph file.
    use taskpar::graph::{ChildInvocation, ProgramGraph, TaskDefinition, TokenType};
    let mut g = ProgramGraph::new("Top");
    g.add_token_type(TokenType::new("W", 8)).unwrap();
    g.add_definition(
        TaskDefinition::leaf("Pass")
            .input("in", "W")
            .output("out", "W")
            .behavior(taskpar::bench::pass_behavior()),
    )
    .unwrap();
    g.add_definition(
        TaskDefinition::parent("Top")
            .channel("a", "W", 1)
            .channel("b", "W", 1)
            .invoke(ChildInvocation::of("Pass").channel("in", "a").channel("out", "b"))
            .invoke(ChildInvocation::of("Pass").channel("in", "b").channel("out", "a")),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cycle.json");
    fs::write(&path, g.to_json()).unwrap();
    let (c, v) = json_of(&["sim", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(c, 2);
    assert_eq!(v["report"]["outcome"]["kind"], "deadlock");
    assert_eq!(v["report"]["outcome"]["cause"]["kind"], "cycle");
    assert_eq!(v["oracle"]["checked"], false);
}
