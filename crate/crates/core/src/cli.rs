//! Command-line front end.
//!
//! Exit codes: 0 success, 1 error (bad flags, unknown benchmark, parse or
//! i/o failure, oracle mismatch), 2 deadlock or sequential failure, 3
//! watchdog expiry.
//!
//! Inputs name a benchmark as `bench:<name>`, or a graph file by path. A bare
//! name that is not an existing file is looked up in the benchmark registry.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bench::{self, BenchError, BenchInstance, BenchParams};
use crate::codegen::{self, CodegenError, MockBackend};
use crate::graph::{GraphError, ProgramGraph};
use crate::scheduler::trace::{self, TraceEvent};
use crate::scheduler::{self, Harness, RunOutcome, RunReport, SchedulerConfig, SchedulerMode, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_STUCK: i32 = 2;
pub const EXIT_WATCHDOG: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("cannot parse graph file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("i/o failure on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error("oracle mismatch: {0}")]
    Oracle(String),
    #[error("{0}")]
    Usage(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "taskpar", version, about = "Simulate, inspect and generate task-parallel dataflow programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a program in the simulator and print its report.
    Sim(SimArgs),
    /// Synthesize each unique task once and assemble a netlist package.
    Codegen(CodegenArgs),
    /// Print graph statistics or export the graph exchange format.
    Graph(GraphArgs),
    /// List or run registered benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run with tracing and write the line-delimited trace.
    Trace(TraceArgs),
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    List(FormatArgs),
    Run(SimArgs),
}

#[derive(Debug, Args)]
pub struct FormatArgs {
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SizeArgs {
    /// Main benchmark size knob (see `bench list`).
    #[arg(long)]
    pub size: Option<usize>,
    /// Instance count for benchmarks that scale by replication.
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub size: SizeArgs,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=1024))]
    pub workers: u64,
    #[arg(long, default_value = "coroutine")]
    pub scheduler: SchedulerMode,
    #[arg(long, default_value_t = scheduler::DEFAULT_MAX_STEPS, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_steps: u64,
}

impl RunArgs {
    fn config(&self) -> SchedulerConfig {
        SchedulerConfig {
            mode: self.scheduler,
            workers: self.workers as usize,
            seed: self.size.seed,
            max_steps: Some(self.max_steps),
            trace: false,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// `bench:<name>`, a graph file, or a bare benchmark name.
    pub input: String,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CodegenArgs {
    pub input: String,
    #[command(flatten)]
    pub size: SizeArgs,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=1024))]
    pub jobs: u64,
    /// Package directory; without it nothing is written.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    pub input: String,
    #[command(flatten)]
    pub size: SizeArgs,
    /// Write the graph exchange format (JSON) here.
    #[arg(long)]
    pub export: Option<PathBuf>,
    #[arg(long)]
    pub stats: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    pub input: String,
    #[command(flatten)]
    pub run: RunArgs,
    /// Trace file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

/// A resolved input: a benchmark with its oracle, or a bare graph.
enum Program {
    Bench(BenchInstance),
    File(ProgramGraph),
}

impl Program {
    fn graph(&self) -> &ProgramGraph {
        match self {
            Program::Bench(b) => &b.graph,
            Program::File(g) => g,
        }
    }

    fn harness(&self) -> Harness {
        match self {
            Program::Bench(b) => b.harness.clone(),
            Program::File(_) => Harness::new(),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn load(input: &str, size: &SizeArgs) -> Result<Program, CliError> {
    let params = BenchParams {
        size: size.size,
        instances: size.instances,
        seed: size.seed,
    };
    if let Some(name) = input.strip_prefix("bench:") {
        return Ok(Program::Bench(bench::build(name, &params)?));
    }
    let path = Path::new(input);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut graph = ProgramGraph::from_json(&text).map_err(|e| CliError::Parse {
            path: input.to_owned(),
            message: e.to_string(),
        })?;
        graph.resolve_behaviors(&bench::behaviors());
        return Ok(Program::File(graph));
    }
    Ok(Program::Bench(bench::build(input, &params)?))
}

fn exit_code(outcome: &RunOutcome) -> i32 {
    match outcome {
        RunOutcome::Completed => EXIT_OK,
        RunOutcome::Deadlock(_) | RunOutcome::SequentialFailure { .. } => EXIT_STUCK,
        RunOutcome::WatchdogExpired { .. } => EXIT_WATCHDOG,
    }
}

/// `Some(Ok)` when an oracle was checked and matched.
fn check_oracle(program: &Program, report: &RunReport) -> Option<Result<(), String>> {
    match program {
        Program::Bench(b) if report.outcome.is_completed() => Some(b.check(report)),
        _ => None,
    }
}

fn oracle_json(result: &Option<Result<(), String>>) -> Value {
    match result {
        None => json!({ "checked": false, "passed": null, "message": null }),
        Some(Ok(())) => json!({ "checked": true, "passed": true, "message": null }),
        Some(Err(m)) => json!({ "checked": true, "passed": false, "message": m }),
    }
}

fn print_json(out: &mut dyn Write, value: &Value) -> Result<(), CliError> {
    writeln!(out, "{}", serde_json::to_string_pretty(value).expect("json serializes")).map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn finish_run(
    out: &mut dyn Write,
    command: &str,
    program: &Program,
    report: &RunReport,
    format: Format,
    extra: Value,
) -> Result<i32, CliError> {
    let oracle = check_oracle(program, report);
    let stdout = |e| io_err(Path::new("<stdout>"), e);
    match format {
        Format::Json => {
            let mut doc = json!({
                "command": command,
                "exit_code": exit_code(&report.outcome),
                "report": report,
                "oracle": oracle_json(&oracle),
            });
            if let (Value::Object(doc), Value::Object(extra)) = (&mut doc, extra) {
                doc.extend(extra);
            }
            print_json(out, &doc)?;
        }
        Format::Text => {
            write!(out, "{}", report.to_text()).map_err(stdout)?;
            match &oracle {
                Some(Ok(())) => writeln!(out, "oracle: pass").map_err(stdout)?,
                Some(Err(m)) => writeln!(out, "oracle: FAIL {m}").map_err(stdout)?,
                None => {}
            }
            if let Value::Object(extra) = extra {
                for (k, v) in extra {
                    writeln!(out, "{k}: {v}").map_err(stdout)?;
                }
            }
        }
    }
    if let Some(Err(m)) = oracle {
        return Err(CliError::Oracle(m));
    }
    Ok(exit_code(&report.outcome))
}

fn cmd_sim(args: &SimArgs, command: &str, out: &mut dyn Write) -> Result<i32, CliError> {
    let program = load(&args.input, &args.run.size)?;
    let mut state = scheduler::spawn_all(program.graph(), &program.harness())?;
    let report = scheduler::run(&mut state, &args.run.config())?;
    finish_run(out, command, &program, &report, args.format, json!({}))
}

fn cmd_trace(args: &TraceArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let program = load(&args.input, &args.run.size)?;
    let config = args.run.config();
    let mut state = scheduler::spawn_all(program.graph(), &program.harness())?;
    let capacities = state
        .elaboration()
        .channels
        .iter()
        .map(|c| (c.path.clone(), (config.mode == SchedulerMode::Coroutine).then_some(c.capacity)))
        .collect();
    let (report, events): (RunReport, Vec<TraceEvent>) = scheduler::run_traced(&mut state, &config)?;
    let text = trace::render(&events);
    let replay = trace::validate_replay(&events, &capacities);

    let destination = match &args.out {
        Some(path) => {
            fs::write(path, &text).map_err(|e| io_err(path, e))?;
            path.display().to_string()
        }
        None => {
            out.write_all(text.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e))?;
            "-".to_owned()
        }
    };
    if let Err(m) = &replay {
        return Err(CliError::Usage(format!("trace failed replay validation: {m}")));
    }
    if args.out.is_none() {
        // The trace itself went to stdout; keep it parseable.
        return Ok(exit_code(&report.outcome));
    }
    let extra = json!({ "trace": destination, "events": events.len(), "replay": "valid" });
    finish_run(out, "trace", &program, &report, args.format, extra)
}

fn cmd_codegen(args: &CodegenArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let program = load(&args.input, &args.size)?;
    let result = codegen::generate(program.graph(), &MockBackend, args.jobs as usize, args.out.as_deref())?;
    let s = result.stats;
    let unchanged = result.emitted.as_ref().map(|e| e.unchanged);
    let files = result.emitted.as_ref().map(|e| e.manifest.files.len() + 1);
    let stdout = |e| io_err(Path::new("<stdout>"), e);
    match args.format {
        Format::Json => print_json(
            out,
            &json!({
                "command": "codegen",
                "exit_code": EXIT_OK,
                "stats": s,
                "modeled_speedup": s.modeled_speedup(),
                "units": result.netlist.units.iter().map(|u| &u.name).collect::<Vec<_>>(),
                "fifos": result.netlist.fifos.len(),
                "out": args.out.as_ref().map(|p| p.display().to_string()),
                "files": files,
                "unchanged": unchanged,
            }),
        )?,
        Format::Text => {
            writeln!(
                out,
                "backend_calls={} unique={} instances={} jobs={} wall_slots={} modeled_speedup={:.2}",
                s.backend_calls,
                s.unique_definitions,
                s.instances,
                s.jobs,
                s.wall_slots,
                s.modeled_speedup()
            )
            .map_err(stdout)?;
            writeln!(out, "units={} fifos={}", result.netlist.units.len(), result.netlist.fifos.len())
                .map_err(stdout)?;
            if let (Some(dir), Some(unchanged)) = (&args.out, unchanged) {
                let state = if unchanged { "unchanged" } else { "written" };
                writeln!(out, "package {}: {state} ({} files)", dir.display(), files.unwrap_or(0))
                    .map_err(stdout)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_graph(args: &GraphArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    if !args.stats && args.export.is_none() {
        return Err(CliError::Usage("graph needs --stats and/or --export <path>".into()));
    }
    let program = load(&args.input, &args.size)?;
    let graph = program.graph();
    let stats = graph.stats()?;
    if let Some(path) = &args.export {
        fs::write(path, graph.to_json()).map_err(|e| io_err(path, e))?;
    }
    let stdout = |e| io_err(Path::new("<stdout>"), e);
    match args.format {
        Format::Json => print_json(
            out,
            &json!({
                "command": "graph",
                "exit_code": EXIT_OK,
                "top": graph.top,
                "definitions": stats.num_definitions,
                "instances": stats.num_instances,
                "channels": stats.num_channels,
                "export": args.export.as_ref().map(|p| p.display().to_string()),
            }),
        )?,
        Format::Text => {
            if args.stats {
                writeln!(
                    out,
                    "definitions={} instances={} channels={}",
                    stats.num_definitions, stats.num_instances, stats.num_channels
                )
                .map_err(stdout)?;
            }
            if let Some(path) = &args.export {
                writeln!(out, "exported {}", path.display()).map_err(stdout)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_bench_list(args: &FormatArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let stdout = |e| io_err(Path::new("<stdout>"), e);
    match args.format {
        Format::Json => print_json(
            out,
            &json!({
                "command": "bench-list",
                "exit_code": EXIT_OK,
                "benchmarks": bench::registry().iter().map(|e| json!({
                    "name": e.name,
                    "summary": e.summary,
                    "size": e.size_help,
                })).collect::<Vec<_>>(),
            }),
        )?,
        Format::Text => {
            for e in bench::registry() {
                writeln!(out, "{:<10} {}  [--size: {}]", e.name, e.summary, e.size_help).map_err(stdout)?;
            }
        }
    }
    Ok(EXIT_OK)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match &cli.command {
        Command::Sim(args) => cmd_sim(args, "sim", out),
        Command::Codegen(args) => cmd_codegen(args, out),
        Command::Graph(args) => cmd_graph(args, out),
        Command::Bench(BenchCommand::List(args)) => cmd_bench_list(args, out),
        Command::Bench(BenchCommand::Run(args)) => cmd_sim(args, "bench-run", out),
        Command::Trace(args) => cmd_trace(args, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Usage errors exit 1 so that 2 stays reserved for stuck runs.
pub fn main_with(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{rendered}");
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}
