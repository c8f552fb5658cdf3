//! Hierarchical code generation.
//!
//! The flow has four steps, each a function here:
//!
//! 1. [`extract_metadata`] records per-task interfaces and the flattened
//!    channel topology.
//! 2. [`synthesize_tasks`] runs a [`Backend`] once per unique leaf
//!    definition, memoized on a content hash and parallel up to `jobs`.
//! 3. [`assemble`] wires leaf instances through first-word-fall-through
//!    FIFOs and gives every parent a start/done control FSM.
//! 4. [`emit`] writes structural Verilog, `design.json` and a digest manifest.

mod assemble;
mod backend;
mod emit;
pub mod hdl;
mod metadata;
mod synth;

use std::path::Path;

use thiserror::Error;

use crate::graph::{GraphError, ProgramGraph};

pub use assemble::{
    assemble, check_soundness, ControlFsm, Fifo, FsmState, NetInstance, Netlist, Pin, TopArg, Wire,
    WireKind, BOUNDARY,
};
pub use backend::{Backend, ExternalCommandBackend, MockBackend, SynthRequest};
pub use emit::{
    emit, render_package, verify_manifest, EmitReport, Manifest, ManifestEntry, FIFO_MODULE,
    FSM_MODULE,
};
pub use metadata::{
    control_ports, extract_metadata, interface_ports, ChildMeta, DesignMetadata, EndpointMeta,
    HdlPort, InstanceMeta, ParentMeta, PinDir, PortMeta, TaskMeta, TopologyRow, SCALAR_WIDTH,
};
pub use synth::{synthesize_tasks, ModuleUnit, SynthesisStats};

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error(transparent)]
    NotValidated(#[from] GraphError),
    #[error("backend failed on `{definition}`: {diagnostic}")]
    BackendFailure { definition: String, diagnostic: String },
    #[error("no module unit for definition `{0}`")]
    MissingUnit(String),
    #[error("channel `{channel}` needs {expected}-bit pin {pin}, unit has {found}")]
    WidthMismatch {
        channel: String,
        pin: String,
        expected: u32,
        found: u32,
    },
    #[error("jobs must be at least 1")]
    InvalidJobs,
    #[error("i/o failure: {0}")]
    Io(String),
}

/// Result of the whole flow.
#[derive(Clone, Debug)]
pub struct CodegenOutput {
    pub netlist: Netlist,
    pub stats: SynthesisStats,
    pub emitted: Option<EmitReport>,
}

/// Runs extract, synthesize and assemble, then emits when `out_dir` is set.
pub fn generate(
    graph: &ProgramGraph,
    backend: &dyn Backend,
    jobs: usize,
    out_dir: Option<&Path>,
) -> Result<CodegenOutput, CodegenError> {
    let meta = extract_metadata(graph)?;
    let (units, stats) = synthesize_tasks(&meta, backend, jobs)?;
    let netlist = assemble(&meta, &units)?;
    let emitted = out_dir.map(|dir| emit(&netlist, dir)).transpose()?;
    Ok(CodegenOutput {
        netlist,
        stats,
        emitted,
    })
}

#[cfg(test)]
mod tests;
