//! Task-parallel dataflow programs for FPGA-style accelerators.
//!
//! A program is a hierarchy of tasks. Leaf tasks carry behavior; parent tasks
//! only instantiate children and the bounded channels that connect them.
//! Channels are single-producer/single-consumer FIFOs supporting destructive
//! reads, non-destructive peeks, and out-of-band end-of-transaction (EoT)
//! tokens.
//!
//! The crate is organized around the life of a program:
//!
//! * [`graph`] builds and validates the task hierarchy and flattens it into
//!   concrete instances and channels.
//! * [`channel`] is the FIFO runtime every simulator operation bottoms out in.
//! * [`scheduler`] runs a flattened program, either cooperatively (tasks
//!   suspend on empty reads and full writes) or with the sequential baseline
//!   that runs each task to completion in instantiation order.
//! * [`codegen`] extracts design metadata, synthesizes each unique task once
//!   through a pluggable backend, assembles parents with FIFOs and control
//!   FSMs, and emits a structural netlist package.
//! * [`bench`] holds desk-scale benchmark programs with independent oracles.
//! * [`cli`] is the command-line front end used by the `taskpar` binary.

pub mod bench;
pub mod channel;
pub mod cli;
pub mod codegen;
pub mod graph;
pub mod scheduler;

pub use channel::{ChannelState, Token};
pub use graph::{
    Binding, ChannelDecl, ChildInvocation, GraphStats, PortDecl, PortDirection, ProgramGraph,
    ScalarValue, TaskDefinition, TokenType,
};
pub use scheduler::{
    behavior::{BehaviorError, BehaviorRef, LeafBehavior, TaskIo},
    Harness, RunOutcome, RunReport, SchedulerConfig, SchedulerMode, SimulationState,
};
