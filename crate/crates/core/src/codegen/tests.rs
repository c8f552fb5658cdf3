use std::collections::BTreeMap;

use super::*;
use crate::graph::{ChildInvocation, PortDirection, TaskDefinition, TokenType};
use crate::scheduler::behavior::BehaviorRef;

fn byte_pipeline() -> ProgramGraph {
    let mut g = ProgramGraph::new("Top");
    g.add_token_type(TokenType::new("Byte", 8)).unwrap();
    g.add_definition(TaskDefinition::leaf("Prod").output("out", "Byte").behavior(BehaviorRef::unresolved("prod")))
        .unwrap();
    g.add_definition(TaskDefinition::leaf("Cons").input("in", "Byte").behavior(BehaviorRef::unresolved("cons")))
        .unwrap();
    g.add_definition(
        TaskDefinition::parent("Top")
            .channel("link", "Byte", 2)
            .invoke(ChildInvocation::of("Prod").channel("out", "link"))
            .invoke(ChildInvocation::of("Cons").channel("in", "link")),
    )
    .unwrap();
    g
}

/// `n` copies of one pass-through leaf in a chain between boundary ports.
fn pass_chain(n: usize) -> ProgramGraph {
    let mut g = ProgramGraph::new("Chain");
    g.add_token_type(TokenType::new("Word", 32)).unwrap();
    g.add_definition(
        TaskDefinition::leaf("Pass")
            .input("in", "Word")
            .output("out", "Word")
            .behavior(BehaviorRef::unresolved("pass")),
    )
    .unwrap();
    let mut top = TaskDefinition::parent("Chain").input("in", "Word").output("out", "Word");
    for i in 1..n {
        top = top.channel(format!("c{i}"), "Word", 2);
    }
    for i in 0..n {
        let mut child = ChildInvocation::of("Pass");
        child = if i == 0 { child.pass("in", "in") } else { child.channel("in", format!("c{i}")) };
        child = if i + 1 == n { child.pass("out", "out") } else { child.channel("out", format!("c{}", i + 1)) };
        top = top.invoke(child);
    }
    g.add_definition(top).unwrap();
    g
}

fn task(ports: Vec<PortMeta>) -> TaskMeta {
    TaskMeta {
        name: "T".into(),
        ports,
        fingerprint: "t".into(),
        instance_count: 1,
    }
}

#[test]
fn input_stream_interface_has_peek_and_eot_bit() {
    let ports = interface_ports(&[PortMeta {
        name: "in".into(),
        direction: PortDirection::InputStream,
        token_type: Some("Word".into()),
        bit_width: Some(32),
    }]);
    let summary: Vec<_> = ports.iter().map(|p| (p.name.as_str(), p.dir, p.width)).collect();
    assert_eq!(
        summary,
        [
            ("in_data", PinDir::Input, 33),
            ("in_valid", PinDir::Input, 1),
            ("in_ready", PinDir::Output, 1),
            ("in_peek", PinDir::Input, 33),
        ]
    );
    let body = MockBackend
        .synthesize(&SynthRequest {
            task: &task(vec![]),
            interface: &ports,
            content_hash: "abc",
        })
        .unwrap();
    assert!(body.contains("input  wire [32:0] in_data"));
    assert!(body.contains("input  wire [32:0] in_peek"));
    assert!(body.contains("abc"));
}

#[test]
fn output_stream_interface_has_no_peek() {
    let ports = interface_ports(&[PortMeta {
        name: "out".into(),
        direction: PortDirection::OutputStream,
        token_type: Some("Word".into()),
        bit_width: Some(16),
    }]);
    let summary: Vec<_> = ports.iter().map(|p| (p.name.as_str(), p.dir, p.width)).collect();
    assert_eq!(
        summary,
        [("out_data", PinDir::Output, 17), ("out_valid", PinDir::Output, 1), ("out_ready", PinDir::Input, 1)]
    );
}

#[test]
fn content_hash_ignores_placement() {
    let mut nested = pass_chain(2);
    nested.top = "Outer".into();
    nested
        .add_definition(
            TaskDefinition::parent("Outer")
                .input("in", "Word")
                .output("out", "Word")
                .invoke(ChildInvocation::of("Chain").pass("in", "in").pass("out", "out")),
        )
        .unwrap();
    let a = extract_metadata(&pass_chain(3)).unwrap();
    let b = extract_metadata(&nested).unwrap();
    assert_eq!(a.tasks[0].content_hash(), b.tasks[0].content_hash());
    let mut other = a.tasks[0].clone();
    other.fingerprint = "different".into();
    assert_ne!(a.tasks[0].content_hash(), other.content_hash());
}

#[test]
fn dedup_calls_backend_once_per_definition() {
    let meta = extract_metadata(&pass_chain(64)).unwrap();
    let (units, stats) = synthesize_tasks(&meta, &MockBackend, 8).unwrap();
    assert_eq!(units.len(), 1);
    assert_eq!(stats.backend_calls, 1);
    assert_eq!(stats.instances, 64);
    assert_eq!(stats.wall_slots, 1);
    assert!(matches!(synthesize_tasks(&meta, &MockBackend, 0), Err(CodegenError::InvalidJobs)));
}

#[test]
fn mock_backend_is_deterministic_across_jobs() {
    let meta = extract_metadata(&byte_pipeline()).unwrap();
    let (a, _) = synthesize_tasks(&meta, &MockBackend, 1).unwrap();
    let (b, _) = synthesize_tasks(&meta, &MockBackend, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn producer_consumer_netlist() {
    let meta = extract_metadata(&byte_pipeline()).unwrap();
    let (units, _) = synthesize_tasks(&meta, &MockBackend, 1).unwrap();
    let net = assemble(&meta, &units).unwrap();
    assert_eq!(net.instances.len(), 2);
    assert_eq!(
        net.fifos,
        [Fifo {
            name: "Top/link".into(),
            width: 9,
            depth: 2,
            parent: "Top".into()
        }]
    );
    assert_eq!(net.fsms.len(), 1);
    assert_eq!(net.fsms[0].children, ["Top/Cons.0", "Top/Prod.0"]);
    check_soundness(&net).unwrap();
}

#[test]
fn missing_unit_is_reported() {
    let meta = extract_metadata(&byte_pipeline()).unwrap();
    let (mut units, _) = synthesize_tasks(&meta, &MockBackend, 1).unwrap();
    units.retain(|u| u.name != "Cons");
    assert!(matches!(assemble(&meta, &units), Err(CodegenError::MissingUnit(n)) if n == "Cons"));
}

#[test]
fn width_mismatch_is_reported() {
    let meta = extract_metadata(&byte_pipeline()).unwrap();
    let (mut units, _) = synthesize_tasks(&meta, &MockBackend, 1).unwrap();
    for u in &mut units {
        for p in &mut u.ports {
            if p.name == "in_data" {
                p.width = 8;
            }
        }
    }
    assert!(matches!(assemble(&meta, &units), Err(CodegenError::WidthMismatch { .. })));
}

#[test]
fn single_leaf_package_has_three_entries() {
    let mut g = ProgramGraph::new("Solo");
    g.add_definition(TaskDefinition::leaf("Solo").behavior(BehaviorRef::unresolved("solo"))).unwrap();
    let meta = extract_metadata(&g).unwrap();
    assert_eq!(meta.tasks.len(), 1);
    assert!(meta.topology.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let out = generate(&g, &MockBackend, 1, Some(dir.path())).unwrap();
    let paths: Vec<_> = out.emitted.unwrap().manifest.files.into_iter().map(|e| e.path).collect();
    assert_eq!(paths, ["design.json", "top.v", "units/Solo.v"]);
    assert!(out.netlist.fsms.is_empty());
}

#[test]
fn reemit_is_unchanged_and_tamper_is_detected() {
    let g = byte_pipeline();
    let dir = tempfile::tempdir().unwrap();
    let first = generate(&g, &MockBackend, 2, Some(dir.path())).unwrap().emitted.unwrap();
    assert!(!first.unchanged);
    let second = generate(&g, &MockBackend, 2, Some(dir.path())).unwrap().emitted.unwrap();
    assert!(second.unchanged);
    assert_eq!(first.manifest, second.manifest);
    assert!(verify_manifest(dir.path()).unwrap().is_empty());

    std::fs::write(dir.path().join("units/Prod.v"), "module Prod(); endmodule\n").unwrap();
    assert_eq!(verify_manifest(dir.path()).unwrap(), ["units/Prod.v"]);
}

#[test]
fn design_json_has_normative_keys() {
    let meta = extract_metadata(&byte_pipeline()).unwrap();
    let (units, _) = synthesize_tasks(&meta, &MockBackend, 1).unwrap();
    let net = assemble(&meta, &units).unwrap();
    let files = render_package(&net);
    let design: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&files["design.json"]).unwrap();
    for key in ["units", "instances", "fifos", "wires", "fsms", "top_args", "manifest"] {
        assert!(design.contains_key(key), "missing {key}");
    }
    let parent = String::from_utf8(files["parents/Top.v"].clone()).unwrap();
    assert!(parent.contains("tp_fifo_fwft #(.WIDTH(9), .DEPTH(2)) link_fifo"));
    assert!(parent.contains(".in_peek(link_dout)"));
}

#[cfg(unix)]
#[test]
fn external_backend_uses_stdout_and_exit_status() {
    let meta = extract_metadata(&byte_pipeline()).unwrap();
    let ok = ExternalCommandBackend::new("sh").arg("-c").arg("cat > /dev/null; echo '// external'");
    let (units, stats) = synthesize_tasks(&meta, &ok, 2).unwrap();
    assert_eq!(stats.backend_calls, 2);
    assert!(units.iter().all(|u| u.body == "// external\n"));

    let failing = ExternalCommandBackend::new("sh").arg("-c").arg("echo boom >&2; exit 3");
    match synthesize_tasks(&meta, &failing, 1) {
        Err(CodegenError::BackendFailure { definition, diagnostic }) => {
            assert_eq!(definition, "Prod");
            assert!(diagnostic.contains("boom"));
        }
        other => panic!("expected backend failure, got {other:?}"),
    }
}
