//! Per-task synthesis backends.

use std::io::Write as _;
use std::process::{Command, Stdio};

use serde::Serialize;

use super::hdl;
use super::metadata::{control_ports, HdlPort, TaskMeta};

/// Everything a backend gets for one unique task.
#[derive(Clone, Debug, Serialize)]
pub struct SynthRequest<'a> {
    pub task: &'a TaskMeta,
    pub interface: &'a [HdlPort],
    pub content_hash: &'a str,
}

/// Produces the module body for one task. Implementations must be pure in
/// the request for emission to stay byte-stable.
pub trait Backend: Sync {
    fn name(&self) -> &str;
    /// Returns the module text, or a diagnostic.
    fn synthesize(&self, request: &SynthRequest<'_>) -> Result<String, String>;
}

/// Hermetic backend emitting a port-accurate skeleton module.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockBackend;

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn synthesize(&self, request: &SynthRequest<'_>) -> Result<String, String> {
        let mut out = String::new();
        out.push_str(&format!("// content_hash: {}\n", request.content_hash));
        out.push_str(&format!("// behavior: {}\n", request.task.fingerprint));
        let mut ports = control_ports();
        ports.extend(request.interface.iter().cloned());
        hdl::module_header(&mut out, &request.task.name, &ports);
        out.push_str("  // body elided by the mock backend\n");
        out.push_str("endmodule\n");
        Ok(out)
    }
}

/// Runs an external program once per unique task. The task's metadata is
/// written to its stdin as JSON; stdout is taken as the module body. A
/// nonzero exit status is a synthesis failure.
#[derive(Clone, Debug)]
pub struct ExternalCommandBackend {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalCommandBackend {
    pub fn new(program: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
        }
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }
}

impl Backend for ExternalCommandBackend {
    fn name(&self) -> &str {
        &self.program
    }

    fn synthesize(&self, request: &SynthRequest<'_>) -> Result<String, String> {
        let input = serde_json::to_vec(request).map_err(|e| e.to_string())?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot start `{}`: {e}", self.program))?;
        let mut stdin = child.stdin.take().expect("piped");
        // A program that exits without reading stdin closes the pipe early;
        // its exit status decides the outcome.
        let _ = stdin.write_all(&input);
        drop(stdin);
        let output = child.wait_with_output().map_err(|e| e.to_string())?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(format!("`{}` exited with {}: {}", self.program, output.status, stderr.trim()));
        }
        String::from_utf8(output.stdout).map_err(|e| format!("non-UTF-8 output: {e}"))
    }
}
