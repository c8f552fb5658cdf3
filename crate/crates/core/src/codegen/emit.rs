//! Step four: write the package.
//!
//! Layout:
//!
//! ```text
//! units/<Task>.v      one per unique leaf definition (backend output)
//! parents/<Task>.v    one per parent definition
//! top.v               wrapper exposing the top-level interface
//! design.json         normative netlist description
//! manifest.json       sha256 of every other file
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::assemble::Netlist;
use super::hdl;
use super::metadata::{control_ports, interface_ports, ParentMeta, PortMeta};
use super::CodegenError;
use crate::graph::{Binding, PortDirection, ScalarValue};

pub const FIFO_MODULE: &str = "tp_fifo_fwft";
pub const FSM_MODULE: &str = "tp_control_fsm";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmitReport {
    pub manifest: Manifest,
    /// The directory already held an identical package.
    pub unchanged: bool,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn entry(path: &str, bytes: &[u8]) -> ManifestEntry {
    ManifestEntry {
        path: path.to_owned(),
        sha256: digest(bytes),
        bytes: bytes.len(),
    }
}

fn scalar_literal(v: &ScalarValue) -> String {
    match v {
        ScalarValue::Int(i) => format!("64'h{:016x}", *i as u64),
        ScalarValue::Float(f) => format!("64'h{:016x}", f.to_bits()),
        ScalarValue::IntList(l) => format!("64'd0 /* table of {} ints, host-provided */", l.len()),
        ScalarValue::FloatList(l) => format!("64'd0 /* table of {} floats, host-provided */", l.len()),
    }
}

/// Pin connections for one stream or scalar port, given the net prefix it
/// maps to inside the enclosing module.
fn stream_pins(port: &PortMeta, binding: &Binding, pins: &mut Vec<(String, String)>) {
    let n = &port.name;
    match (port.direction, binding) {
        (PortDirection::Scalar, Binding::Scalar(v)) => pins.push((n.clone(), scalar_literal(v))),
        (PortDirection::Scalar, Binding::Port(p)) => pins.push((n.clone(), p.clone())),
        (PortDirection::InputStream, Binding::Channel(c)) => {
            let c = hdl::ident(c);
            pins.push((format!("{n}_data"), format!("{c}_dout")));
            pins.push((format!("{n}_valid"), format!("{c}_empty_n")));
            pins.push((format!("{n}_ready"), format!("{c}_read")));
            pins.push((format!("{n}_peek"), format!("{c}_dout")));
        }
        (PortDirection::OutputStream, Binding::Channel(c)) => {
            let c = hdl::ident(c);
            pins.push((format!("{n}_data"), format!("{c}_din")));
            pins.push((format!("{n}_valid"), format!("{c}_write")));
            pins.push((format!("{n}_ready"), format!("{c}_full_n")));
        }
        (PortDirection::InputStream, Binding::Port(p)) => {
            for s in ["data", "valid", "ready", "peek"] {
                pins.push((format!("{n}_{s}"), format!("{p}_{s}")));
            }
        }
        (PortDirection::OutputStream, Binding::Port(p)) => {
            for s in ["data", "valid", "ready"] {
                pins.push((format!("{n}_{s}"), format!("{p}_{s}")));
            }
        }
        // Validation rejects the remaining combinations.
        _ => unreachable!("binding kind does not match port direction"),
    }
}

fn ports_of<'a>(netlist: &'a Netlist, definition: &str) -> &'a [PortMeta] {
    let meta = &netlist.metadata;
    meta.task(definition)
        .map(|t| t.ports.as_slice())
        .or_else(|| meta.parent(definition).map(|p| p.ports.as_slice()))
        .expect("child definition is in the metadata")
}

fn parent_module(netlist: &Netlist, parent: &ParentMeta) -> String {
    let mut out = String::new();
    out.push_str(&format!("// parent task {}: {} child instances\n", parent.name, parent.children.len()));
    let mut ports = control_ports();
    ports.extend(interface_ports(&parent.ports));
    hdl::module_header(&mut out, &parent.name, &ports);

    for ch in &parent.channels {
        let c = hdl::ident(&ch.name);
        let width = netlist.metadata.token_widths[&ch.token_type] + 1;
        out.push('\n');
        for (suffix, w) in [("din", width), ("write", 1), ("full_n", 1), ("dout", width), ("empty_n", 1), ("read", 1)] {
            hdl::wire(&mut out, &format!("{c}_{suffix}"), w);
        }
        hdl::instance(
            &mut out,
            FIFO_MODULE,
            &[("WIDTH", width.to_string()), ("DEPTH", ch.capacity.to_string())],
            &format!("{c}_fifo"),
            &[
                ("clk".into(), "ap_clk".into()),
                ("rst_n".into(), "ap_rst_n".into()),
                ("din".into(), format!("{c}_din")),
                ("write".into(), format!("{c}_write")),
                ("full_n".into(), format!("{c}_full_n")),
                ("dout".into(), format!("{c}_dout")),
                ("empty_n".into(), format!("{c}_empty_n")),
                ("read".into(), format!("{c}_read")),
            ],
        );
    }

    out.push('\n');
    hdl::wire(&mut out, "children_start", 1);
    let n = parent.children.len() as u32;
    hdl::wire(&mut out, "children_done", n);
    hdl::instance(
        &mut out,
        FSM_MODULE,
        &[("CHILDREN", n.to_string())],
        "control",
        &[
            ("clk".into(), "ap_clk".into()),
            ("rst_n".into(), "ap_rst_n".into()),
            ("start".into(), "ap_start".into()),
            ("child_start".into(), "children_start".into()),
            ("child_done".into(), "children_done".into()),
            ("done".into(), "ap_done".into()),
        ],
    );

    for (i, child) in parent.children.iter().enumerate() {
        out.push('\n');
        let done = if n == 1 {
            "children_done".to_owned()
        } else {
            format!("children_done[{i}]")
        };
        let mut pins = vec![
            ("ap_clk".to_owned(), "ap_clk".to_owned()),
            ("ap_rst_n".to_owned(), "ap_rst_n".to_owned()),
            ("ap_start".to_owned(), "children_start".to_owned()),
            ("ap_done".to_owned(), done),
        ];
        for port in ports_of(netlist, &child.definition) {
            stream_pins(port, &child.bindings[&port.name], &mut pins);
        }
        hdl::instance(&mut out, &child.definition, &[], &child.name, &pins);
    }
    out.push_str("endmodule\n");
    out
}

fn top_wrapper(netlist: &Netlist) -> String {
    let meta = &netlist.metadata;
    let mut out = String::new();
    out.push_str(&format!("// package top: {}\n", meta.top));
    let mut ports = control_ports();
    ports.extend(interface_ports(&meta.top_ports));
    hdl::module_header(&mut out, "top", &ports);
    let mut pins = vec![
        ("ap_clk".to_owned(), "ap_clk".to_owned()),
        ("ap_rst_n".to_owned(), "ap_rst_n".to_owned()),
        ("ap_start".to_owned(), "ap_start".to_owned()),
        ("ap_done".to_owned(), "ap_done".to_owned()),
    ];
    for port in &meta.top_ports {
        stream_pins(port, &Binding::Port(port.name.clone()), &mut pins);
    }
    hdl::instance(&mut out, &meta.top, &[], "kernel", &pins);
    out.push_str("endmodule\n");
    out
}

/// Renders every package file in memory, keyed by relative path.
pub fn render_package(netlist: &Netlist) -> BTreeMap<String, Vec<u8>> {
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for unit in &netlist.units {
        files.insert(format!("units/{}.v", unit.name), unit.body.clone().into_bytes());
    }
    for parent in &netlist.metadata.parents {
        files.insert(format!("parents/{}.v", parent.name), parent_module(netlist, parent).into_bytes());
    }
    files.insert("top.v".into(), top_wrapper(netlist).into_bytes());

    let hdl_manifest: Vec<ManifestEntry> = files.iter().map(|(p, b)| entry(p, b)).collect();
    let design = json!({
        "top": netlist.top,
        "units": netlist.units.iter().map(|u| json!({
            "name": u.name,
            "file": format!("units/{}.v", u.name),
            "content_hash": u.content_hash,
            "ports": u.ports,
            "control": control_ports(),
        })).collect::<Vec<_>>(),
        "parents": netlist.metadata.parents.iter().map(|p| json!({
            "name": p.name,
            "file": format!("parents/{}.v", p.name),
            "instances": p.instances,
        })).collect::<Vec<_>>(),
        "instances": netlist.instances,
        "fifos": netlist.fifos,
        "wires": netlist.wires,
        "fsms": netlist.fsms,
        "top_args": netlist.top_args,
        "manifest": hdl_manifest,
    });
    let mut design = serde_json::to_vec_pretty(&design).expect("design serializes");
    design.push(b'\n');
    files.insert("design.json".into(), design);
    files
}

pub fn emit(netlist: &Netlist, out_dir: &Path) -> Result<EmitReport, CodegenError> {
    let files = render_package(netlist);
    let manifest = Manifest {
        files: files.iter().map(|(p, b)| entry(p, b)).collect(),
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    manifest_bytes.push(b'\n');

    let unchanged = fs::read(out_dir.join("manifest.json")).is_ok_and(|old| old == manifest_bytes)
        && verify_manifest(out_dir).is_ok_and(|bad| bad.is_empty());

    let io = |path: &Path, e: std::io::Error| CodegenError::Io(format!("{}: {e}", path.display()));
    for (rel, bytes) in &files {
        let path = out_dir.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io(&path, e))?;
    }
    let path = out_dir.join("manifest.json");
    fs::write(&path, &manifest_bytes).map_err(|e| io(&path, e))?;
    Ok(EmitReport { manifest, unchanged })
}

/// Re-hashes every file listed in `manifest.json`; returns the paths whose
/// contents no longer match (missing files included).
pub fn verify_manifest(out_dir: &Path) -> Result<Vec<String>, CodegenError> {
    let path = out_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| CodegenError::Io(format!("{}: {e}", path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CodegenError::Io(format!("{}: {e}", path.display())))?;
    Ok(manifest
        .files
        .iter()
        .filter(|e| fs::read(out_dir.join(&e.path)).map_or(true, |b| digest(&b) != e.sha256))
        .map(|e| e.path.clone())
        .collect())
}
