//! Synthetic benchmark programs, the comparison strategies and the report
//! grid.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::rotation_index_set;
use crate::interp::{eval, Inputs, Value};
use crate::ir::{verify, Const, CryptoParams, IndexExpr, Matrix, Module, Op, OpKind, Type, ValueId};
use crate::passes::{insert_clear_ops, pow2_baseline, resident_baseline, run_pipeline, PassError, PipelineConfig};
use crate::runtime::{execute, key_size_bytes, makespan, peak_memory, CostModel, EventKind, RuntimeConfig, RuntimeError};

/// Appends ops to a fresh `@main` and returns the module when done.
struct Builder {
    m: Module,
    f: crate::ir::Func,
}

impl Builder {
    fn new(params: CryptoParams) -> Self {
        Self { m: Module::new(params), f: crate::ir::Func::new("main") }
    }

    fn arg(&mut self, ty: Type, name: &str) -> ValueId {
        self.f.add_arg(ty, name)
    }

    fn op(&mut self, kind: OpKind, operands: Vec<ValueId>, ty: Type) -> ValueId {
        let r = self.f.new_value(ty);
        self.f.body.push(Op::new(kind, operands, vec![r]));
        r
    }

    fn rotate(&mut self, v: ValueId, k: i64) -> ValueId {
        self.op(OpKind::Rotate { index: IndexExpr::constant(k) }, vec![v], Type::Ct)
    }

    fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.op(OpKind::Add, vec![a, b], Type::Ct)
    }

    fn splat(&mut self, c: i64) -> ValueId {
        self.op(OpKind::Const(Const::Splat(c)), vec![], Type::Pt)
    }

    fn transform(&mut self, v: ValueId, name: &str, w: Matrix) -> ValueId {
        self.m.matrices.insert(name.to_string(), w);
        self.op(OpKind::LinearTransform { matrix: name.to_string() }, vec![v], Type::Ct)
    }

    fn finish(mut self, ret: ValueId) -> Module {
        self.f.ret = vec![Type::Ct];
        self.f.body.push(Op::new(OpKind::Return, vec![ret], vec![]));
        self.m.funcs.push(self.f);
        self.m
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GenError {
    #[error("slots = {0} is not a power of two >= 2")]
    Slots(u32),
    #[error("layer width {width} exceeds {slots} slots")]
    Width { width: usize, slots: u32 },
    #[error("{0}")]
    Params(String),
}

fn params_for(slots: u32) -> Result<CryptoParams, GenError> {
    let p = CryptoParams::with_slots(slots);
    if !slots.is_power_of_two() || slots < 2 {
        return Err(GenError::Slots(slots));
    }
    p.validate().map_err(GenError::Params)?;
    Ok(p)
}

/// Dense `n × n` matrix with every generalized diagonal nonzero.
fn dense_matrix(n: usize) -> Matrix {
    let data = (0..n * n).map(|k| 1 + ((k / n) * 3 + (k % n) * 5) as i64 % 7).collect();
    Matrix::new(n, n, data)
}

/// One `N × N` matrix-vector product over `N` slots.
pub fn gen_mvm(n: u32) -> Result<Module, GenError> {
    let mut b = Builder::new(params_for(n)?);
    let v = b.arg(Type::Ct, "v");
    let r = b.transform(v, "W", dense_matrix(n as usize));
    Ok(b.finish(r))
}

/// Alternating linear layers and slotwise squares. Layer `i` maps
/// `dims[i]` inputs to `dims[i + 1]` outputs, zero-padded to a square.
/// Weights are in `{-1, 0, 1}` so activations stay small.
pub fn gen_mlp(dims: &[usize], slots: u32) -> Result<Module, GenError> {
    let mut b = Builder::new(params_for(slots)?);
    if let Some(&width) = dims.iter().find(|&&d| d > slots as usize) {
        return Err(GenError::Width { width, slots });
    }
    let mut x = b.arg(Type::Ct, "x");
    for (layer, pair) in dims.windows(2).enumerate() {
        let (din, dout) = (pair[0], pair[1]);
        let n = din.max(dout);
        let mut w = Matrix::zeros(n, n);
        for r in 0..dout {
            for c in 0..din {
                w.data[r * n + c] = ((r * 7 + c * 3 + layer) % 3) as i64 - 1;
            }
        }
        x = b.transform(x, &format!("W{layer}"), w);
        x = b.op(OpKind::MulCt, vec![x, x], Type::Ct);
    }
    Ok(b.finish(x))
}

/// Levels consumed by one `gen_deep` block.
pub const DEEP_BLOCK_DEPTH: u32 = 2;

/// `n_blocks` blocks of `x + rotate(x, k)` followed by two plaintext
/// multiplies. With `with_bootstraps`, a bootstrap precedes any block that
/// would take the level below `d_boot`. `redundant_before` adds one extra
/// bootstrap before that block regardless of level.
pub fn gen_deep(n_blocks: usize, with_bootstraps: bool, redundant_before: Option<usize>) -> Result<Module, GenError> {
    let params = CryptoParams::default();
    let slots = i64::from(params.slots);
    let mut b = Builder::new(params.clone());
    let mut x = b.arg(Type::Ct, "x");
    let one = b.splat(1);
    let mut level = params.mult_depth;
    for blk in 0..n_blocks {
        let needs = level < params.d_boot + DEEP_BLOCK_DEPTH;
        if (with_bootstraps && needs) || redundant_before == Some(blk) {
            x = b.op(OpKind::Bootstrap, vec![x], Type::Ct);
            level = params.refreshed_level();
        }
        let k = (blk as i64 * 5 + 1) % slots;
        let r = b.rotate(x, k);
        let s = b.add(x, r);
        let t = b.op(OpKind::MulPt, vec![s, one], Type::Ct);
        x = b.op(OpKind::MulPt, vec![t, one], Type::Ct);
        level = level.saturating_sub(DEEP_BLOCK_DEPTH);
    }
    Ok(b.finish(x))
}

/// Sum of `x` rotated by each of `1..=n_indices`, at `slots` slots.
pub fn gen_rotation_sum(n_indices: u32, slots: u32) -> Result<Module, GenError> {
    let mut b = Builder::new(params_for(slots)?);
    if n_indices >= slots {
        return Err(GenError::Width { width: n_indices as usize, slots });
    }
    let x = b.arg(Type::Ct, "x");
    let mut acc = x;
    for k in 1..=n_indices {
        let r = b.rotate(x, i64::from(k));
        acc = b.add(acc, r);
    }
    Ok(b.finish(acc))
}

/// Small deterministic inputs for every data argument of `@main`.
pub fn default_inputs(m: &Module) -> Inputs {
    let mut inputs = Inputs::new();
    if let Some(f) = m.main() {
        for (i, &a) in f.args.iter().enumerate() {
            if f.ty(a).is_data() {
                let v = (0..m.params.slots as i64).map(|j| (j + i as i64) % 5 - 2).collect();
                inputs.insert(f.arg_name(i), v);
            }
        }
    }
    inputs
}

/// A fuzzed program with inputs; `mvm` names the matrix when the program
/// is a single linear transform of its input.
#[derive(Clone, Debug)]
pub struct FuzzCase {
    pub module: Module,
    pub inputs: Inputs,
    pub mvm: Option<String>,
}

/// Largest magnitude any generated value may reach.
const FUZZ_LIMIT: i64 = 1 << 40;
const FUZZ_INPUT: i64 = 4;

/// Random program of at most 200 ops over at most 64 slots, seeded.
///
/// Magnitudes and levels are tracked while generating so evaluation never
/// overflows and never runs out of depth.
pub fn gen_random(seed: u64) -> FuzzCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = *[4u32, 8, 16, 32, 64].choose(&mut rng).unwrap();
    let mult_depth = *[6u32, 10, 30].choose(&mut rng).unwrap();
    let params = CryptoParams { mult_depth, d_boot: mult_depth / 2, ..CryptoParams::with_slots(slots) };
    let mut b = Builder::new(params.clone());
    let random_matrix = |rng: &mut ChaCha8Rng, n: usize| {
        let data = (0..n * n).map(|_| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(-3..=3) }).collect();
        Matrix::new(n, n, data)
    };

    if rng.gen_ratio(1, 8) {
        let n = rng.gen_range(1..=slots as usize);
        let x = b.arg(Type::Ct, "x");
        let w = random_matrix(&mut rng, n);
        let r = b.transform(x, "W", w);
        let module = b.finish(r);
        let inputs = fuzz_inputs(&module, &mut rng);
        return FuzzCase { module, inputs, mvm: Some("W".into()) };
    }

    // (value, level, magnitude bound)
    let mut live: Vec<(ValueId, u32, i64)> = Vec::new();
    for i in 0..rng.gen_range(1..=2) {
        live.push((b.arg(Type::Ct, &format!("x{i}")), mult_depth, FUZZ_INPUT));
    }
    let p = if rng.gen_bool(0.5) { Some(b.arg(Type::Pt, "p")) } else { None };
    let target = rng.gen_range(1..=199usize);
    let mut n_mats = 0;
    while b.f.body.len() < target {
        let a = if rng.gen_bool(0.6) { *live.last().unwrap() } else { *live.choose(&mut rng).unwrap() };
        let (v, level, bound) = a;
        let choice = rng.gen_range(0..100);
        let next = match choice {
            0..=29 => {
                let k = rng.gen_range(-(slots as i64)..=slots as i64).rem_euclid(i64::from(slots));
                (b.rotate(v, k), level, bound)
            }
            30..=49 => {
                let c = *live.choose(&mut rng).unwrap();
                if bound + c.2 > FUZZ_LIMIT {
                    continue;
                }
                (b.add(v, c.0), level.min(c.1), bound + c.2)
            }
            50..=84 if level == 0 => (b.op(OpKind::Bootstrap, vec![v], Type::Ct), params.refreshed_level(), bound),
            50..=59 => {
                let (pt, pb) = match p {
                    Some(p) if rng.gen_bool(0.5) => (p, FUZZ_INPUT),
                    _ => {
                        let c = rng.gen_range(-2..=2);
                        (b.splat(c), c.abs())
                    }
                };
                (b.op(OpKind::MulPt, vec![v, pt], Type::Ct), level - 1, bound * pb.max(1))
            }
            60..=69 => {
                let c = *live.choose(&mut rng).unwrap();
                if c.1 == 0 || bound.saturating_mul(c.2) > FUZZ_LIMIT {
                    continue;
                }
                (b.op(OpKind::MulCt, vec![v, c.0], Type::Ct), level.min(c.1) - 1, bound * c.2)
            }
            70..=84 => {
                let n = rng.gen_range(1..=slots as usize);
                if bound.saturating_mul(3 * n as i64) > FUZZ_LIMIT {
                    continue;
                }
                let w = random_matrix(&mut rng, n);
                n_mats += 1;
                (b.transform(v, &format!("W{n_mats}"), w), level - 1, bound * 3 * n as i64)
            }
            _ => (b.op(OpKind::Bootstrap, vec![v], Type::Ct), params.refreshed_level(), bound),
        };
        live.push(next);
    }
    let ret = live.last().unwrap().0;
    let module = b.finish(ret);
    let inputs = fuzz_inputs(&module, &mut rng);
    FuzzCase { module, inputs, mvm: None }
}

fn fuzz_inputs(m: &Module, rng: &mut ChaCha8Rng) -> Inputs {
    let mut inputs = Inputs::new();
    if let Some(f) = m.main() {
        for (i, &a) in f.args.iter().enumerate() {
            if f.ty(a).is_data() {
                let v = (0..m.params.slots).map(|_| rng.gen_range(-FUZZ_INPUT..=FUZZ_INPUT)).collect();
                inputs.insert(f.arg_name(i), v);
            }
        }
    }
    inputs
}

/// How a program is compiled and run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Every key resident for the whole run.
    Resident,
    /// Powers-of-two keys resident, other rotations chained.
    Pow2,
    KeymemLow,
    KeymemBalanced { budget: Option<u64> },
}

/// Prefetch budget used by `keymem_balanced` unless overridden.
pub const DEFAULT_BUDGET: u64 = 4;

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Resident,
        Strategy::Pow2,
        Strategy::KeymemLow,
        Strategy::KeymemBalanced { budget: Some(DEFAULT_BUDGET) },
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Resident => "resident",
            Strategy::Pow2 => "pow2",
            Strategy::KeymemLow => "keymem_low",
            Strategy::KeymemBalanced { .. } => "keymem_balanced",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "resident" => Ok(Strategy::Resident),
            "pow2" => Ok(Strategy::Pow2),
            "low" | "keymem_low" => Ok(Strategy::KeymemLow),
            "balanced" | "keymem_balanced" => Ok(Strategy::KeymemBalanced { budget: Some(DEFAULT_BUDGET) }),
            _ => Err(format!("unknown strategy `{s}` (resident, pow2, low, balanced)")),
        }
    }
}

/// Compilation switches shared by every strategy.
#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub bsgs: bool,
    pub remove_bootstraps: bool,
    pub cost: CostModel,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { bsgs: true, remove_bootstraps: true, cost: CostModel::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReportRow {
    pub program: String,
    pub strategy: String,
    pub key_count: u64,
    pub peak_key_bytes: u64,
    pub peak_total_bytes: u64,
    pub makespan: u64,
    pub load_count: u64,
    pub chain_ops: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Pass(#[from] PassError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("lowered module fails verification: {0}")]
    Verify(String),
    #[error("outputs differ from the reference evaluation")]
    Mismatch,
}

/// A strategy's lowered module and the rotations chaining added.
pub fn lower(m: &Module, s: Strategy, opts: &BenchOptions) -> Result<(Module, u64), BenchError> {
    let mut cfg = match s {
        Strategy::Resident | Strategy::Pow2 => PipelineConfig::frontend(opts.bsgs, opts.remove_bootstraps),
        _ => PipelineConfig::keymem(opts.bsgs, opts.remove_bootstraps),
    };
    cfg.cost_model = opts.cost.clone();
    let front = run_pipeline(m, &cfg)?.module;
    let (lowered, chain) = match s {
        Strategy::Resident => (insert_clear_ops(&resident_baseline(&front)), 0),
        Strategy::Pow2 => {
            let (p, added) = pow2_baseline(&front)?;
            (insert_clear_ops(&p), added)
        }
        _ => (front, 0),
    };
    verify(&lowered).map_err(|d| BenchError::Verify(d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")))?;
    Ok((lowered, chain))
}

pub fn runtime_config(s: Strategy, cost: &CostModel) -> RuntimeConfig {
    match s {
        Strategy::KeymemBalanced { budget } => RuntimeConfig { cost: cost.clone(), ..RuntimeConfig::balanced(budget) },
        _ => RuntimeConfig { cost: cost.clone(), ..RuntimeConfig::low_memory() },
    }
}

/// Lowers, executes and measures one cell. Outputs are checked against
/// `expected` when given.
pub fn run_cell(
    name: &str,
    m: &Module,
    inputs: &Inputs,
    s: Strategy,
    opts: &BenchOptions,
    expected: Option<&[Value]>,
) -> Result<ReportRow, BenchError> {
    let (lowered, chain_ops) = lower(m, s, opts)?;
    let (out, trace) = execute(&lowered, inputs, &runtime_config(s, &opts.cost))?;
    if expected.is_some_and(|e| !same_slots(e, &out)) {
        return Err(BenchError::Mismatch);
    }
    let peak = peak_memory(&trace);
    Ok(ReportRow {
        program: name.into(),
        strategy: s.name().into(),
        key_count: rotation_index_set(&lowered).len() as u64,
        peak_key_bytes: peak.key,
        peak_total_bytes: peak.total,
        makespan: makespan(&trace),
        load_count: trace.events.iter().filter(|e| e.kind == EventKind::LoadStart).count() as u64,
        chain_ops,
    })
}

/// Slot values agree; levels may differ once bootstraps are removed.
pub fn same_slots(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.slots() == y.slots())
}

#[derive(Clone, Debug)]
pub struct Program {
    pub name: String,
    pub module: Module,
    pub inputs: Inputs,
}

impl Program {
    pub fn new(name: impl Into<String>, module: Module) -> Self {
        let inputs = default_inputs(&module);
        Self { name: name.into(), module, inputs }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellFailure {
    pub program: String,
    pub strategy: String,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct Comparison {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<CellFailure>,
}

/// Runs every strategy on every program. A failing cell is recorded and
/// the grid continues.
pub fn compare(programs: &[Program], strategies: &[Strategy], opts: &BenchOptions) -> Comparison {
    let mut out = Comparison::default();
    for p in programs {
        let expected = match eval(&p.module, &p.inputs) {
            Ok(v) => v,
            Err(e) => {
                for s in strategies {
                    out.failures.push(CellFailure {
                        program: p.name.clone(),
                        strategy: s.name().into(),
                        message: e.to_string(),
                    });
                }
                continue;
            }
        };
        for &s in strategies {
            match run_cell(&p.name, &p.module, &p.inputs, s, opts, Some(&expected)) {
                Ok(row) => out.rows.push(row),
                Err(e) => out.failures.push(CellFailure {
                    program: p.name.clone(),
                    strategy: s.name().into(),
                    message: e.to_string(),
                }),
            }
        }
    }
    out
}

/// The synthetic suite: matrix-vector products, small MLPs and deep
/// bootstrapped chains.
pub fn synthetic_suite() -> Vec<Program> {
    let gens: Vec<(&str, Result<Module, GenError>)> = vec![
        ("mvm16", gen_mvm(16)),
        ("mvm64", gen_mvm(64)),
        ("mlp_16_16_16", gen_mlp(&[16, 16, 16], 64)),
        ("mlp_64_32_10", gen_mlp(&[64, 32, 10], 64)),
        ("deep10", gen_deep(10, true, None)),
        ("deep24", gen_deep(24, true, None)),
    ];
    gens.into_iter().map(|(n, m)| Program::new(n, m.expect("suite generators are valid"))).collect()
}

/// Bytes of the key store if every index in `set` is resident.
pub fn resident_key_bytes(p: &CryptoParams, set: &BTreeSet<u32>) -> u64 {
    key_size_bytes(p) * set.len() as u64
}
