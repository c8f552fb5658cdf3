//! Structural Verilog-2001 subset: module headers, wires and instances.
//! Nothing here describes behavior.

use std::fmt::Write;

use super::metadata::{HdlPort, PinDir};

/// Turns a hierarchical name into a Verilog identifier.
pub fn ident(name: &str) -> String {
    let mut out: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if out.starts_with(|c: char| c.is_ascii_digit()) || out.is_empty() {
        out.insert(0, '_');
    }
    out
}

pub fn range(width: u32) -> String {
    if width == 1 {
        String::new()
    } else {
        format!("[{}:0] ", width - 1)
    }
}

pub fn module_header(out: &mut String, name: &str, ports: &[HdlPort]) {
    writeln!(out, "module {} (", ident(name)).unwrap();
    for (i, p) in ports.iter().enumerate() {
        let dir = match p.dir {
            PinDir::Input => "input ",
            PinDir::Output => "output",
        };
        let sep = if i + 1 == ports.len() { "" } else { "," };
        writeln!(out, "  {dir} wire {}{}{sep}", range(p.width), p.name).unwrap();
    }
    out.push_str(");\n");
}

pub fn wire(out: &mut String, name: &str, width: u32) {
    writeln!(out, "  wire {}{};", range(width), name).unwrap();
}

/// `module_name #(params) inst_name (.pin(net), ...);`
pub fn instance(
    out: &mut String,
    module: &str,
    params: &[(&str, String)],
    name: &str,
    pins: &[(String, String)],
) {
    write!(out, "  {}", ident(module)).unwrap();
    if !params.is_empty() {
        let list: Vec<String> = params.iter().map(|(k, v)| format!(".{k}({v})")).collect();
        write!(out, " #({})", list.join(", ")).unwrap();
    }
    writeln!(out, " {} (", ident(name)).unwrap();
    for (i, (pin, net)) in pins.iter().enumerate() {
        let sep = if i + 1 == pins.len() { "" } else { "," };
        writeln!(out, "    .{pin}({net}){sep}").unwrap();
    }
    out.push_str("  );\n");
}
