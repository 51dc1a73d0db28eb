//! `ideflow`: simulate, verify and analyze equilibrium flows over time.
//!
//! Exit codes: 0 success, 1 verification failure or engine error, 2 usage or
//! parse error, 3 an engine cap was hit.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ideflow_core::engine::{detect_periodicity, periodicity_json, simulate, EngineConfig, EngineError, Mode, Outcome};
use ideflow_core::flowstate::FlowTrace;
use ideflow_core::instances::{builtin, builtin_names, gen_random, RandomParams};
use ideflow_core::network::{load_instance, save_instance, Instance};
use ideflow_core::numerics::{parse_rat, Rat};
use ideflow_core::thinflow::ThinFlowError;
use ideflow_core::verify::{verify_feasible, verify_ide, verify_termination};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "ideflow", version, about = "Exact simulator and verifier for instantaneous dynamic equilibrium flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Auto,
    Waterfill,
    Thinflow,
}

#[derive(Subcommand)]
enum Command {
    /// Run the engine; prints the report and writes the trace.
    Simulate {
        /// Instance file, or the name of a built-in instance.
        instance: String,
        #[arg(long, value_parser = rat_arg)]
        horizon: Rat,
        #[arg(long, default_value_t = 100_000)]
        max_phases: usize,
        #[arg(long, value_enum, default_value = "auto")]
        mode: ModeArg,
        /// Maximal number of binaries in a thin-flow search.
        #[arg(long, default_value_t = 24)]
        binary_cap: u32,
        #[arg(long)]
        out: PathBuf,
        /// Long-format CSV of inflows, outflows and queues.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also look for a period of at most this length.
        #[arg(long, value_parser = rat_arg, requires = "from")]
        detect_period: Option<Rat>,
        #[arg(long, value_parser = rat_arg)]
        from: Option<Rat>,
    },
    /// Check a trace against an instance; exit 0 iff every check passes.
    Verify {
        instance: String,
        trace: PathBuf,
        /// Also check that the flow has terminated at this time.
        #[arg(long, value_parser = rat_arg)]
        claim_termination: Option<Rat>,
    },
    /// Detect a period in a trace.
    Analyze {
        trace: PathBuf,
        #[arg(long, value_parser = rat_arg)]
        detect_period: Rat,
        #[arg(long, value_parser = rat_arg)]
        from: Rat,
    },
    /// Write a built-in or random instance to a file.
    Gen {
        /// A built-in name or `random`.
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        nodes: usize,
        #[arg(long, default_value_t = 10)]
        edges: usize,
        #[arg(long, default_value_t = 1)]
        sinks: usize,
        #[arg(long, default_value_t = 2)]
        commodities: usize,
        #[arg(long)]
        acyclic: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// List built-in instance names.
    List,
}

fn rat_arg(s: &str) -> Result<Rat, String> {
    parse_rat(s)
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure { code: 1, message: format!("cannot write {}: {e}", path.display()) })
}

fn load(spec: &str) -> Result<Instance, Failure> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(inst) = builtin(spec) {
            return Ok(inst);
        }
    }
    load_instance(&read(path)?).map_err(|e| usage(format!("{spec}: {e}")))
}

fn engine_failure(e: EngineError) -> Failure {
    let code = match e {
        EngineError::ThinFlow(ThinFlowError::CapExceeded { .. }) => 3,
        EngineError::Config(_) => 2,
        _ => 1,
    };
    Failure { code, message: e.to_string() }
}

fn run(cli: Cli) -> Result<(Value, u8), Failure> {
    match cli.command {
        Command::Simulate { instance, horizon, max_phases, mode, binary_cap, out, csv, detect_period, from } => {
            let inst = load(&instance)?;
            let mut cfg = EngineConfig::new(horizon);
            cfg.max_phases = max_phases;
            cfg.mode = match mode {
                ModeArg::Auto => Mode::Auto,
                ModeArg::Waterfill => Mode::SingleSinkWaterfill,
                ModeArg::Thinflow => Mode::MultiCommodityThinFlow,
            };
            cfg.thinflow.binary_cap = binary_cap;
            cfg.periodicity = detect_period.zip(from).map(|(p, f)| (f, p));
            let rep = simulate(&inst, &cfg).map_err(engine_failure)?;
            write(&out, rep.trace.to_json(&inst).as_bytes())?;
            if let Some(csv) = csv {
                write(&csv, rep.trace.to_csv(&inst).as_bytes())?;
            }
            let code = if rep.outcome == Outcome::PhaseCapReached { 3 } else { 0 };
            Ok((rep.to_json_value(&inst), code))
        }
        Command::Verify { instance, trace, claim_termination } => {
            let inst = load(&instance)?;
            let tr = FlowTrace::from_json(&inst, &read(&trace)?).map_err(|e| usage(format!("{}: {e}", trace.display())))?;
            let mut verdict = verify_feasible(&inst, &tr);
            verdict.merge(verify_ide(&inst, &tr));
            if let Some(t) = claim_termination {
                verdict.merge(verify_termination(&inst, &tr, &t));
            }
            let code = if verdict.pass() { 0 } else { 1 };
            Ok((verdict.to_json_value(), code))
        }
        Command::Analyze { trace, detect_period, from } => {
            let tr = FlowTrace::from_json_detached(&read(&trace)?).map_err(|e| usage(format!("{}: {e}", trace.display())))?;
            let found = detect_periodicity(&tr, &from, &detect_period);
            Ok((json!({ "periodicity": found.as_ref().map(periodicity_json) }), 0))
        }
        Command::Gen { name, seed, nodes, edges, sinks, commodities, acyclic, out } => {
            let inst = if name == "random" {
                let p = RandomParams { n: nodes, m: edges, sinks, commodities, acyclic };
                gen_random(seed, p).map_err(|e| usage(e.to_string()))?
            } else {
                builtin(&name).ok_or_else(|| usage(format!("unknown instance {name:?}; see `ideflow list`")))?
            };
            write(&out, &save_instance(&inst))?;
            let summary = json!({
                "written": out.display().to_string(),
                "nodes": inst.nodes.len(),
                "edges": inst.edges.len(),
                "commodities": inst.commodities.len(),
            });
            Ok((summary, 0))
        }
        Command::List => Ok((json!(builtin_names()), 0)),
    }
}

fn threads_from_env() -> Result<(), Failure> {
    let Ok(v) = std::env::var("IDE_FLOW_THREADS") else { return Ok(()) };
    let n: usize = v.parse().ok().filter(|n| *n > 0).ok_or_else(|| usage(format!("IDE_FLOW_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| usage(e.to_string()))
}

/// Print to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}").and_then(|()| out.flush());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads_from_env().and_then(|()| run(cli));
    match result {
        Ok((value, code)) => {
            emit(&serde_json::to_string_pretty(&value).expect("json output"));
            ExitCode::from(code)
        }
        Err(f) => {
            emit(&json!({ "error": f.message }).to_string());
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
