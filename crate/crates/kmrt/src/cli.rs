//! Command-line surface: `compile`, `run`, `bench`, `verify`, `analyze`.
//!
//! Exit codes: 0 success, 1 usage or IO error, 2 malformed or unverifiable
//! program, 3 runtime abort (missing key, deadlock, depth exhaustion).

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kmrt_core::bench::{compare, gen_rotation_sum, synthetic_suite, BenchOptions, Comparison, Program, Strategy};
use kmrt_core::interp::{ones_inputs, profile_levels, EvalError, Inputs};
use kmrt_core::ir::{parse_module, print_module, verify, Module};
use kmrt_core::passes::{run_pipeline, MergeWindow, Pass, PassError, PipelineConfig};
use kmrt_core::runtime::{execute, CostModel, Mode, RuntimeConfig, RuntimeError};

use crate::io;

#[derive(Debug, Parser)]
#[command(name = "kmrt", version, about = "Rotation-key management compiler and runtime simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pass pipeline and write the compiled module.
    Compile(CompileArgs),
    /// Execute a module under the key-loading simulator.
    Run(RunArgs),
    /// Compare strategies over a benchmark suite.
    Bench(BenchArgs),
    /// Check a module and print diagnostics.
    Verify(VerifyArgs),
    /// Print key liveness, merge candidates and level profile as JSON.
    Analyze(AnalyzeArgs),
}

/// Overrides for the module's `params` block.
#[derive(Debug, Args, Default)]
pub struct ParamArgs {
    #[arg(long)]
    pub ring_dim_log2: Option<u32>,
    #[arg(long)]
    pub mult_depth: Option<u32>,
    #[arg(long)]
    pub slots: Option<u32>,
    #[arg(long)]
    pub d_boot: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelineKind {
    Default,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowUnit {
    Ops,
    Time,
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    pub pipeline: PipelineKind,
    /// Comma-separated pass names for `--pipeline custom`.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["bsgs", "no_bootstrap_removal"])]
    pub passes: Vec<String>,
    /// Decompose linear transforms into baby and giant steps.
    #[arg(long)]
    pub bsgs: bool,
    /// Largest clear-to-load distance merged.
    #[arg(long, default_value_t = 64)]
    pub merge_window: u64,
    #[arg(long, value_enum, default_value = "ops")]
    pub merge_window_unit: WindowUnit,
    #[arg(long)]
    pub no_bootstrap_removal: bool,
    /// Inputs used to profile levels for bootstrap removal; defaults to ones.
    #[arg(long)]
    pub profile_inputs: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub emit_manifest: Option<PathBuf>,
    #[arg(long, env = "KMRT_COST_MODEL")]
    pub cost_model: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Low,
    Balanced,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "low")]
    pub mode: ModeArg,
    /// Prefetch budget in keys (balanced mode); unbounded if absent.
    #[arg(long)]
    pub budget: Option<u64>,
    /// JSON object of argument name to slot values; defaults to ones.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Where to write outputs; printed to stdout if absent.
    #[arg(long)]
    pub outputs: Option<PathBuf>,
    #[arg(long, env = "KMRT_COST_MODEL")]
    pub cost_model: Option<PathBuf>,
    /// Key manifest (from `compile --emit-manifest`); defaults to the
    /// module's own index set.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Loads not yet reached by the loader wait for it instead of loading
    /// directly.
    #[arg(long)]
    pub strict_loader: bool,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Matrix-vector products, MLPs and deep bootstrapped chains.
    Synthetic,
    /// Rotation sums with 27 to 442 distinct indices at 512 slots.
    Keycount,
    All,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub suite: Suite,
    #[arg(long, value_delimiter = ',', default_value = "resident,pow2,low,balanced")]
    pub strategies: Vec<String>,
    /// Prefetch budget for the balanced strategy.
    #[arg(long, default_value_t = kmrt_core::bench::DEFAULT_BUDGET)]
    pub budget: u64,
    #[arg(long)]
    pub no_bsgs: bool,
    #[arg(long)]
    pub no_bootstrap_removal: bool,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long, env = "KMRT_COST_MODEL")]
    pub cost_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub merge_window: u64,
    /// Inputs for the level profile; defaults to ones.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
}

/// A failure mapped to its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Invalid(String),
    Abort(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::Abort(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Invalid(m) | Failure::Abort(m) => f.write_str(m),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(format!("{e:#}"))
    }
}

impl From<PassError> for Failure {
    fn from(e: PassError) -> Self {
        match e {
            PassError::Eval(e) => e.into(),
            PassError::Order(_) | PassError::UnknownPass(_) => Failure::Usage(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::MissingInput(_) | EvalError::InputLength { .. } | EvalError::UnsupportedArg(..) => {
                Failure::Usage(e.to_string())
            }
            EvalError::DepthExhausted { .. } | EvalError::Overflow { .. } => Failure::Abort(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Eval(e) => e.into(),
            RuntimeError::ZeroBudget | RuntimeError::CostModel(_) => Failure::Usage(e.to_string()),
            _ => Failure::Abort(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Parses `argv` and runs the subcommand, printing diagnostics to stderr.
pub fn main_with<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Compile(a) => compile(a),
        Command::Run(a) => run_module(a),
        Command::Bench(a) => bench(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Analyze(a) => analyze(a),
    }
}

/// Reads, parses and applies parameter overrides; does not verify.
fn load_module(path: &Path, params: &ParamArgs) -> Result<Module, Failure> {
    let text = io::read_text(path)?;
    let mut m = parse_module(&text).map_err(|e| Failure::Invalid(format!("{}:{e}", path.display())))?;
    let p = &mut m.params;
    if let Some(v) = params.ring_dim_log2 {
        p.ring_dim_log2 = v;
    }
    if let Some(v) = params.mult_depth {
        p.mult_depth = v;
    }
    if let Some(v) = params.slots {
        p.slots = v;
    }
    if let Some(v) = params.d_boot {
        p.d_boot = v;
    }
    Ok(m)
}

fn verified(m: Module) -> Result<Module, Failure> {
    verify(&m).map_err(|ds| Failure::Invalid(ds.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")))?;
    Ok(m)
}

fn cost_model(path: Option<&Path>) -> Result<CostModel, Failure> {
    Ok(match path {
        Some(p) => io::read_cost_model(p)?,
        None => CostModel::default(),
    })
}

fn inputs_or_ones(path: Option<&Path>, m: &Module) -> Result<Inputs, Failure> {
    Ok(match path {
        Some(p) => io::read_inputs(p)?,
        None => ones_inputs(m),
    })
}

fn compile(a: CompileArgs) -> Outcome {
    let m = verified(load_module(&a.input, &a.params)?)?;
    let mut cfg = match a.pipeline {
        PipelineKind::Default => {
            if !a.passes.is_empty() {
                return Err(Failure::Usage("--passes requires --pipeline custom".into()));
            }
            PipelineConfig::keymem(a.bsgs, !a.no_bootstrap_removal)
        }
        PipelineKind::Custom => {
            if a.passes.is_empty() {
                return Err(Failure::Usage("--pipeline custom requires --passes".into()));
            }
            let passes = a
                .passes
                .iter()
                .map(|s| s.trim().parse::<Pass>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            PipelineConfig::custom(passes)
        }
    };
    cfg.window = match a.merge_window_unit {
        WindowUnit::Ops => MergeWindow::Ops(a.merge_window),
        WindowUnit::Time => MergeWindow::Time(a.merge_window),
    };
    cfg.cost_model = cost_model(a.cost_model.as_deref())?;
    if let Some(p) = &a.profile_inputs {
        cfg.profile_inputs = Some(io::read_inputs(p)?);
    }
    cfg.validate().map_err(Failure::from)?;
    let out = run_pipeline(&m, &cfg)?;
    let text = print_module(&out.module);
    match &a.output {
        Some(p) => io::write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    if let Some(p) = &a.emit_manifest {
        io::write_json(p, &io::Manifest::of(&out.module))?;
    }
    for r in &out.reports {
        for n in &r.notes {
            eprintln!("{}: {n}", r.pass);
        }
    }
    Ok(())
}

fn run_module(a: RunArgs) -> Outcome {
    let mode = match a.mode {
        ModeArg::Low => Mode::LowMemory,
        ModeArg::Balanced => Mode::Balanced,
    };
    if mode == Mode::LowMemory && a.budget.is_some() {
        return Err(Failure::Usage("--budget applies to --mode balanced only".into()));
    }
    if a.budget == Some(0) {
        return Err(Failure::Usage("--budget must be at least 1".into()));
    }
    if mode == Mode::LowMemory && a.strict_loader {
        return Err(Failure::Usage("--strict-loader applies to --mode balanced only".into()));
    }
    let m = verified(load_module(&a.input, &a.params)?)?;
    let manifest = match &a.manifest {
        Some(p) => Some(io::read_manifest(p)?.indices),
        None => None,
    };
    let cfg = RuntimeConfig {
        mode,
        budget: a.budget,
        cost: cost_model(a.cost_model.as_deref())?,
        demand_loads: !a.strict_loader,
        manifest,
    };
    let inputs = inputs_or_ones(a.inputs.as_deref(), &m)?;
    let (outputs, trace) = execute(&m, &inputs, &cfg)?;
    let out = io::outputs_json(&outputs);
    match &a.outputs {
        Some(p) => io::write_json(p, &out)?,
        None => print!("{}", io::to_json(&out)?),
    }
    if let Some(p) = &a.trace {
        io::write_json(p, &io::TraceFile::from(&trace))?;
    }
    Ok(())
}

/// Rotation sums with the distinct-index counts of the key-count table.
pub const KEYCOUNT_SIZES: [u32; 9] = [27, 33, 75, 117, 139, 213, 267, 285, 442];

pub fn keycount_suite() -> Vec<Program> {
    KEYCOUNT_SIZES
        .iter()
        .map(|&n| Program::new(format!("rotsum{n}"), gen_rotation_sum(n, 512).expect("fits in 512 slots")))
        .collect()
}

/// Runs the grid with one thread per program; row order is deterministic.
pub fn compare_parallel(programs: &[Program], strategies: &[Strategy], opts: &BenchOptions) -> Comparison {
    let parts: Vec<Comparison> = std::thread::scope(|s| {
        let handles: Vec<_> = programs
            .iter()
            .map(|p| s.spawn(move || compare(std::slice::from_ref(p), strategies, opts)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    });
    let mut out = Comparison::default();
    for p in parts {
        out.rows.extend(p.rows);
        out.failures.extend(p.failures);
    }
    out
}

fn bench(a: BenchArgs) -> Outcome {
    if a.budget == 0 {
        return Err(Failure::Usage("--budget must be at least 1".into()));
    }
    let mut strategies = Vec::new();
    for s in &a.strategies {
        let mut st: Strategy = s.trim().parse().map_err(Failure::Usage)?;
        if let Strategy::KeymemBalanced { budget } = &mut st {
            *budget = Some(a.budget);
        }
        if strategies.contains(&st) {
            return Err(Failure::Usage(format!("strategy `{s}` listed twice")));
        }
        strategies.push(st);
    }
    let programs = match a.suite {
        Suite::Synthetic => synthetic_suite(),
        Suite::Keycount => keycount_suite(),
        Suite::All => synthetic_suite().into_iter().chain(keycount_suite()).collect(),
    };
    let opts = BenchOptions {
        bsgs: !a.no_bsgs,
        remove_bootstraps: !a.no_bootstrap_removal,
        cost: cost_model(a.cost_model.as_deref())?,
    };
    let cmp = compare_parallel(&programs, &strategies, &opts);
    if let Some(p) = &a.csv {
        io::write_atomic(p, &io::report_csv(&cmp.rows)?)?;
    }
    if let Some(p) = &a.json {
        io::write_json(p, &io::Report::from(&cmp))?;
    }
    if a.csv.is_none() && a.json.is_none() {
        print!("{}", String::from_utf8_lossy(&io::report_csv(&cmp.rows)?));
    }
    for f in &cmp.failures {
        eprintln!("{} / {}: {}", f.program, f.strategy, f.message);
    }
    match cmp.failures.len() {
        0 => Ok(()),
        n => Err(Failure::Abort(format!("{n} benchmark cells failed"))),
    }
}

fn verify_cmd(a: VerifyArgs) -> Outcome {
    verified(load_module(&a.input, &a.params)?)?;
    eprintln!("{}: ok", a.input.display());
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Outcome {
    let m = verified(load_module(&a.input, &a.params)?)?;
    let inputs = inputs_or_ones(a.inputs.as_deref(), &m)?;
    let levels = profile_levels(&m, &inputs).ok();
    let report = io::analysis(&m, a.merge_window, levels);
    match &a.json {
        Some(p) => io::write_json(p, &report)?,
        None => print!("{}", io::to_json(&report)?),
    }
    Ok(())
}
