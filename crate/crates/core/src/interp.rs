//! Reference semantics over exact integer slot vectors.
//!
//! Ciphertexts carry a level; every op follows the level rules below and
//! errors out instead of going negative. Key-management ops have no value
//! effect here: availability is checked by [`crate::runtime`].
//!
//! | op | slots | level |
//! |----|-------|-------|
//! | add | slotwise sum | min |
//! | mul_pt, mul_ct | slotwise product | min − 1 |
//! | rotate, fast_rotate | left cyclic shift | unchanged |
//! | bootstrap | unchanged | `L_max − d_boot` |
//! | linear_transform | `W · v` | − 1 |

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::ir::{canonical_index, op_path, Const, Func, IndexExpr, Matrix, Module, Op, OpKind, Type, ValueId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CtValue {
    pub slots: Vec<i64>,
    pub level: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    Ct(CtValue),
    Pt(Vec<i64>),
    Key(u32),
    Index(i64),
}

impl Value {
    pub fn slots(&self) -> Option<&[i64]> {
        match self {
            Value::Ct(c) => Some(&c.slots),
            Value::Pt(p) => Some(p),
            _ => None,
        }
    }

    pub fn level(&self) -> Option<u32> {
        match self {
            Value::Ct(c) => Some(c.level),
            _ => None,
        }
    }
}

/// Input vectors keyed by argument name.
pub type Inputs = BTreeMap<String, Vec<i64>>;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no entry function `@main`")]
    NoMain,
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("input `{name}` has {got} slots, at most {slots} allowed")]
    InputLength { name: String, got: usize, slots: u32 },
    #[error("argument `{0}` of type {1} cannot be supplied as an input")]
    UnsupportedArg(String, Type),
    #[error("depth exhausted at {op}: level would drop below 0")]
    DepthExhausted { op: String },
    #[error("integer overflow at {op}")]
    Overflow { op: String },
    #[error("{op}: {message}")]
    Malformed { op: String, message: String },
    #[error("matrix is {rows}x{cols}, vector has {len} slots")]
    Dimension { rows: usize, cols: usize, len: usize },
}

/// One executed op, as seen by an [`Observer`].
pub struct Step<'a> {
    pub op: &'a Op,
    pub func: &'a Func,
    /// Position in nested bodies; loop iterations share a path.
    pub path: &'a [usize],
    pub operands: &'a [Value],
    /// Canonical amount of a rotate/fast_rotate.
    pub rotation: Option<u32>,
}

impl Step<'_> {
    pub fn label(&self) -> String {
        alloc::format!("{}#{}", self.op.name(), op_path(self.path))
    }
}

/// Hooks called around every non-loop op in execution order.
pub trait Observer {
    type Error: From<EvalError>;

    fn before(&mut self, _step: &Step<'_>) -> Result<(), Self::Error> {
        Ok(())
    }

    fn after(&mut self, _step: &Step<'_>, _results: &[Value]) -> Result<(), Self::Error> {
        Ok(())
    }
}

impl Observer for () {
    type Error = EvalError;
}

pub fn eval(m: &Module, inputs: &Inputs) -> Result<Vec<Value>, EvalError> {
    eval_with(m, inputs, &mut ())
}

/// Evaluates `@main`, reporting each op to `obs`. Returns the values of the
/// final `return`.
pub fn eval_with<O: Observer>(m: &Module, inputs: &Inputs, obs: &mut O) -> Result<Vec<Value>, O::Error> {
    let f = m.main().ok_or(EvalError::NoMain)?;
    let slots = m.params.slots as usize;
    let mut env = vec![None; f.values.len()];
    for (i, &a) in f.args.iter().enumerate() {
        let name = f.arg_name(i);
        let ty = f.ty(a);
        let v = match ty {
            Type::RotKey(k) => Value::Key(k),
            Type::Ct | Type::Pt => {
                let raw = inputs.get(&name).ok_or_else(|| EvalError::MissingInput(name.clone()))?;
                if raw.len() > slots {
                    return Err(EvalError::InputLength { name, got: raw.len(), slots: m.params.slots }.into());
                }
                let mut v = raw.clone();
                v.resize(slots, 0);
                if ty == Type::Ct {
                    Value::Ct(CtValue { slots: v, level: m.params.mult_depth })
                } else {
                    Value::Pt(v)
                }
            }
            Type::Index => return Err(EvalError::UnsupportedArg(name, ty).into()),
        };
        env[a.index()] = Some(v);
    }
    let mut machine = Machine { m, f, env, obs, path: Vec::new() };
    machine.block(&f.body)
}

struct Machine<'a, O> {
    m: &'a Module,
    f: &'a Func,
    env: Vec<Option<Value>>,
    obs: &'a mut O,
    path: Vec<usize>,
}

impl<'a, O: Observer> Machine<'a, O> {
    fn label(&self, op: &Op) -> String {
        alloc::format!("{}#{}", op.name(), op_path(&self.path))
    }

    fn get(&self, op: &Op, v: ValueId) -> Result<Value, EvalError> {
        self.env.get(v.index()).cloned().flatten().ok_or_else(|| EvalError::Malformed {
            op: self.label(op),
            message: alloc::format!("%{} has no value", self.f.value_name(v)),
        })
    }

    fn set(&mut self, v: ValueId, value: Value) {
        if let Some(slot) = self.env.get_mut(v.index()) {
            *slot = Some(value);
        }
    }

    fn block(&mut self, ops: &'a [Op]) -> Result<Vec<Value>, O::Error> {
        for (pos, op) in ops.iter().enumerate() {
            self.path.push(pos);
            if let OpKind::ForLoop(l) = &op.kind {
                let mut carried = op.operands.iter().map(|&v| self.get(op, v)).collect::<Result<Vec<_>, _>>()?;
                for i in l.iterations() {
                    self.set(l.iv, Value::Index(i));
                    for (&a, v) in l.iter_args.iter().zip(carried) {
                        self.set(a, v);
                    }
                    carried = self.block(&l.body)?;
                }
                for (&r, v) in op.results.iter().zip(carried) {
                    self.set(r, v);
                }
                self.path.pop();
                continue;
            }
            let operands = op.operands.iter().map(|&v| self.get(op, v)).collect::<Result<Vec<_>, _>>()?;
            let env = &self.env;
            let lookup = |v: ValueId| match env.get(v.index()) {
                Some(Some(Value::Index(i))) => Some(*i),
                _ => None,
            };
            let rotation =
                op.kind.rotation_index().and_then(|e| e.eval(lookup)).map(|k| canonical_index(k, self.m.params.slots));
            let step = Step { op, func: self.f, path: &self.path, operands: &operands, rotation };
            self.obs.before(&step)?;
            if let OpKind::Yield | OpKind::Return = op.kind {
                self.obs.after(&step, &[])?;
                self.path.pop();
                return Ok(operands);
            }
            let label = step.label();
            let result = apply(self.m, &op.kind, &operands, lookup).map_err(|e| e.at(label))?;
            let results: Vec<Value> = result.into_iter().collect();
            self.obs.after(&step, &results)?;
            for (&r, v) in op.results.iter().zip(results) {
                self.set(r, v);
            }
            self.path.pop();
        }
        Ok(Vec::new())
    }
}

enum OpError {
    Depth,
    Overflow,
    Malformed(String),
}

impl OpError {
    fn at(self, op: String) -> EvalError {
        match self {
            OpError::Depth => EvalError::DepthExhausted { op },
            OpError::Overflow => EvalError::Overflow { op },
            OpError::Malformed(message) => EvalError::Malformed { op, message },
        }
    }
}

fn malformed(msg: &str) -> OpError {
    OpError::Malformed(msg.to_string())
}

/// Left cyclic shift: `out[j] = v[(j + k) mod n]`.
pub fn rotate_left(v: &[i64], k: u32) -> Vec<i64> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k as usize % n;
    v[k..].iter().chain(&v[..k]).copied().collect()
}

/// Plain row-by-column product `W · v`.
pub fn mvm_oracle(w: &Matrix, v: &[i64]) -> Result<Vec<i64>, EvalError> {
    if w.cols != v.len() {
        return Err(EvalError::Dimension { rows: w.rows, cols: w.cols, len: v.len() });
    }
    (0..w.rows)
        .map(|r| {
            (0..w.cols)
                .try_fold(0i64, |acc, c| w.get(r, c).checked_mul(v[c]).and_then(|p| acc.checked_add(p)))
                .ok_or(EvalError::Overflow { op: "mvm_oracle".into() })
        })
        .collect()
}

fn zip_with(a: &[i64], b: &[i64], f: fn(i64, i64) -> Option<i64>) -> Result<Vec<i64>, OpError> {
    if a.len() != b.len() {
        return Err(malformed("operand slot counts differ"));
    }
    a.iter().zip(b).map(|(&x, &y)| f(x, y).ok_or(OpError::Overflow)).collect()
}

fn data(v: &Value) -> Result<(&[i64], Option<u32>), OpError> {
    match v {
        Value::Ct(c) => Ok((&c.slots, Some(c.level))),
        Value::Pt(p) => Ok((p, None)),
        _ => Err(malformed("expected a ciphertext or plaintext operand")),
    }
}

fn ct(v: Option<&Value>) -> Result<&CtValue, OpError> {
    match v {
        Some(Value::Ct(c)) => Ok(c),
        _ => Err(malformed("expected a ciphertext operand")),
    }
}

fn drop_level(level: u32) -> Result<u32, OpError> {
    level.checked_sub(1).ok_or(OpError::Depth)
}

fn matrix<'m>(m: &'m Module, name: &str) -> Result<&'m Matrix, OpError> {
    let w = m.matrices.get(name).ok_or_else(|| OpError::Malformed(alloc::format!("unknown matrix @{name}")))?;
    let n = m.params.slots as usize;
    if w.rows > n || w.cols > n {
        return Err(OpError::Malformed(alloc::format!("matrix @{name} is {}x{}, larger than {n} slots", w.rows, w.cols)));
    }
    Ok(w)
}

fn index(e: &IndexExpr, lookup: &impl Fn(ValueId) -> Option<i64>) -> Result<i64, OpError> {
    e.eval(lookup).ok_or_else(|| malformed("index expression refers to an unbound loop index"))
}

/// Plaintext diagonal `diag` of `w` zero-padded to `n × n`, rotated left by
/// `shift`.
pub fn diagonal_plaintext(w: &Matrix, diag: i64, shift: i64, n: u32) -> Vec<i64> {
    let base = if diag < 0 { vec![0; n as usize] } else { w.diagonal(diag as usize, n as usize) };
    rotate_left(&base, canonical_index(shift, n))
}

/// `W · v` computed as `Σ_i diag_i(W) ⊙ rotate(v, i)` over the padded matrix.
pub fn diagonal_mvm(w: &Matrix, v: &[i64]) -> Option<Vec<i64>> {
    let n = v.len();
    let mut acc = vec![0i64; n];
    for d in 0..n {
        let diag = w.diagonal(d, n);
        if diag.iter().all(|&x| x == 0) {
            continue;
        }
        let r = rotate_left(v, d as u32);
        for j in 0..n {
            acc[j] = acc[j].checked_add(diag[j].checked_mul(r[j])?)?;
        }
    }
    Some(acc)
}

fn apply(
    m: &Module,
    kind: &OpKind,
    operands: &[Value],
    lookup: impl Fn(ValueId) -> Option<i64>,
) -> Result<Option<Value>, OpError> {
    let slots = m.params.slots;
    let v = match kind {
        OpKind::Add => {
            let [a, b] = operands else { return Err(malformed("add takes two operands")) };
            let ((x, la), (y, lb)) = (data(a)?, data(b)?);
            let sum = zip_with(x, y, i64::checked_add)?;
            match (la, lb) {
                (None, None) => Value::Pt(sum),
                (Some(l), None) | (None, Some(l)) => Value::Ct(CtValue { slots: sum, level: l }),
                (Some(la), Some(lb)) => Value::Ct(CtValue { slots: sum, level: la.min(lb) }),
            }
        }
        OpKind::MulPt | OpKind::MulCt => {
            let [a, b] = operands else { return Err(malformed("multiplication takes two operands")) };
            let ((x, la), (y, lb)) = (data(a)?, data(b)?);
            let level = match (la, lb) {
                (Some(la), Some(lb)) => la.min(lb),
                (Some(l), None) | (None, Some(l)) => l,
                (None, None) => return Err(malformed("multiplication needs a ciphertext operand")),
            };
            Value::Ct(CtValue { slots: zip_with(x, y, i64::checked_mul)?, level: drop_level(level)? })
        }
        OpKind::Rotate { index: e } | OpKind::FastRotate { index: e } => {
            let c = ct(operands.first())?;
            let k = canonical_index(index(e, &lookup)?, slots);
            Value::Ct(CtValue { slots: rotate_left(&c.slots, k), level: c.level })
        }
        OpKind::PrecomputeRot => Value::Ct(ct(operands.first())?.clone()),
        OpKind::Bootstrap => {
            let c = ct(operands.first())?;
            Value::Ct(CtValue { slots: c.slots.clone(), level: m.params.refreshed_level() })
        }
        OpKind::LinearTransform { matrix: name } => {
            let w = matrix(m, name)?;
            let c = ct(operands.first())?;
            let out = diagonal_mvm(w, &c.slots).ok_or(OpError::Overflow)?;
            Value::Ct(CtValue { slots: out, level: drop_level(c.level)? })
        }
        OpKind::Const(Const::Splat(x)) => Value::Pt(vec![*x; slots as usize]),
        OpKind::Const(Const::Diagonal { matrix: name, diag, shift }) => {
            let w = matrix(m, name)?;
            Value::Pt(diagonal_plaintext(w, index(diag, &lookup)?, index(shift, &lookup)?, slots))
        }
        OpKind::LoadKey { index } | OpKind::AssumeKey { index } => Value::Key(*index),
        OpKind::UseKey => match operands.first() {
            Some(k @ Value::Key(_)) => k.clone(),
            _ => return Err(malformed("use_key expects a key operand")),
        },
        OpKind::ClearKey | OpKind::ClearCt | OpKind::PrefetchKey { .. } => return Ok(None),
        OpKind::ForLoop(_) | OpKind::Yield | OpKind::Return => return Err(malformed("structural op evaluated as a value")),
    };
    Ok(Some(v))
}

/// Levels around one executed ciphertext-producing op.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LevelRecord {
    pub path: Vec<usize>,
    pub opcode: String,
    pub in_levels: Vec<u32>,
    pub out_levels: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct LevelProfile {
    pub records: Vec<LevelRecord>,
}

impl LevelProfile {
    pub fn bootstraps(&self) -> impl Iterator<Item = &LevelRecord> {
        self.records.iter().filter(|r| r.opcode == "ckks.bootstrap")
    }
}

struct Profiler(LevelProfile);

impl Observer for Profiler {
    type Error = EvalError;

    fn after(&mut self, step: &Step<'_>, results: &[Value]) -> Result<(), EvalError> {
        let out_levels: Vec<u32> = results.iter().filter_map(Value::level).collect();
        if !out_levels.is_empty() {
            self.0.records.push(LevelRecord {
                path: step.path.to_vec(),
                opcode: step.op.name().into(),
                in_levels: step.operands.iter().filter_map(Value::level).collect(),
                out_levels,
            });
        }
        Ok(())
    }
}

pub fn profile_levels(m: &Module, inputs: &Inputs) -> Result<LevelProfile, EvalError> {
    let mut p = Profiler(LevelProfile::default());
    eval_with(m, inputs, &mut p)?;
    Ok(p.0)
}

/// All-ones vector for every ciphertext/plaintext argument of `@main`.
pub fn ones_inputs(m: &Module) -> Inputs {
    let mut inputs = Inputs::new();
    if let Some(f) = m.main() {
        for (i, &a) in f.args.iter().enumerate() {
            if f.ty(a).is_data() {
                inputs.insert(f.arg_name(i), vec![1; m.params.slots as usize]);
            }
        }
    }
    inputs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;
    use proptest::prelude::*;

    fn run(src: &str, x: Vec<i64>) -> Result<Vec<Value>, EvalError> {
        let m = parse_module(src).unwrap();
        eval(&m, &Inputs::from([("x".into(), x)]))
    }

    #[test]
    fn rotate_examples() {
        assert_eq!(rotate_left(&[1, 2, 3, 4], 1), vec![2, 3, 4, 1]);
        assert_eq!(rotate_left(&[1, 2, 3, 4], 0), vec![1, 2, 3, 4]);
    }

    #[test]
    fn identity_transform_drops_one_level() {
        let src = "params { slots = 4 }
matrix @I [1, 0, 0, 0; 0, 1, 0, 0; 0, 0, 1, 0; 0, 0, 0, 1]
func @main(%x: ct) -> ct {
  %y = ckks.linear_transform %x {matrix = @I}
  return %y
}";
        let out = run(src, vec![1, 2, 3, 4]).unwrap();
        let w = Matrix::identity(4);
        assert_eq!(out, vec![Value::Ct(CtValue { slots: mvm_oracle(&w, &[1, 2, 3, 4]).unwrap(), level: 29 })]);
    }

    #[test]
    fn oracle_trivia() {
        assert_eq!(mvm_oracle(&Matrix::identity(4), &[1, 2, 3, 4]).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(mvm_oracle(&Matrix::zeros(3, 3), &[5, 6, 7]).unwrap(), vec![0, 0, 0]);
        assert!(matches!(mvm_oracle(&Matrix::zeros(3, 2), &[5, 6, 7]), Err(EvalError::Dimension { .. })));
    }

    #[test]
    fn bootstrap_levels() {
        // 10 squarings bring a level-30 input to 20, 25 bring it to 5
        for (squarings, want_in) in [(10, 20), (25, 5)] {
            let mut src = String::from("params { slots = 4, mult_depth = 30, d_boot = 14 }\nfunc @main(%x: ct) -> ct {\n");
            let mut prev = String::from("%x");
            for i in 0..squarings {
                src.push_str(&alloc::format!("  %s{i} = ckks.mul_ct {prev}, {prev}\n"));
                prev = alloc::format!("%s{i}");
            }
            src.push_str(&alloc::format!("  %b = ckks.bootstrap {prev}\n  return %b\n}}\n"));
            let m = parse_module(&src).unwrap();
            let prof = profile_levels(&m, &ones_inputs(&m)).unwrap();
            let boots: Vec<_> = prof.bootstraps().collect();
            assert_eq!(boots.len(), 1);
            assert_eq!((boots[0].in_levels[0], boots[0].out_levels[0]), (want_in, 16));
        }
        let m = parse_module("params { slots = 4 }\nfunc @main(%x: ct) -> ct {\n  return %x\n}").unwrap();
        assert_eq!(profile_levels(&m, &ones_inputs(&m)).unwrap().bootstraps().count(), 0);
    }

    #[test]
    fn depth_exhaustion_names_the_op() {
        let mut src = String::from("params { slots = 4, mult_depth = 2, d_boot = 1 }\nfunc @main(%x: ct) -> ct {\n");
        src.push_str("  %a = ckks.mul_ct %x, %x\n  %b = ckks.mul_ct %a, %a\n  %c = ckks.mul_ct %b, %b\n  return %c\n}");
        let err = run(&src, vec![1]).unwrap_err();
        assert_eq!(err, EvalError::DepthExhausted { op: "ckks.mul_ct#2".into() });
    }

    #[test]
    fn loops_and_dynamic_indices() {
        // Σ_{i=0}^{3} rotate(x, i): every slot becomes the total
        let src = "params { slots = 4 }
func @main(%x: ct) -> ct {
  %r = for_loop %i = 1 to 4 step 1 iter(%acc = %x) {
    %t = ckks.rotate %x {index = %i}
    %s = ckks.add %acc, %t
    yield %s
  }
  return %r
}";
        let out = run(src, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(out[0].slots().unwrap(), &[10, 10, 10, 10]);
    }

    #[test]
    fn overflow_is_reported() {
        let src = "params { slots = 2 }
func @main(%x: ct) -> ct {
  %a = ckks.mul_ct %x, %x
  return %a
}";
        assert!(matches!(run(src, vec![i64::MAX, 0]), Err(EvalError::Overflow { .. })));
    }

    fn small_matrix() -> impl Strategy<Value = (Matrix, Vec<i64>)> {
        (1usize..=8).prop_flat_map(|n| {
            (
                proptest::collection::vec(-50i64..50, n * n).prop_map(move |d| Matrix::new(n, n, d)),
                proptest::collection::vec(-50i64..50, n),
            )
        })
    }

    proptest! {
        #[test]
        fn rotation_composes(v in proptest::collection::vec(-100i64..100, 16), a in -40i64..40, b in -40i64..40) {
            let lhs = rotate_left(&rotate_left(&v, canonical_index(a, 16)), canonical_index(b, 16));
            prop_assert_eq!(lhs, rotate_left(&v, canonical_index(a + b, 16)));
        }

        #[test]
        fn rotation_is_linear(x in proptest::collection::vec(-100i64..100, 8), y in proptest::collection::vec(-100i64..100, 8), k in 0u32..8) {
            let sum: Vec<i64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let prod: Vec<i64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
            let (rx, ry) = (rotate_left(&x, k), rotate_left(&y, k));
            prop_assert_eq!(rotate_left(&sum, k), rx.iter().zip(&ry).map(|(a, b)| a + b).collect::<Vec<_>>());
            prop_assert_eq!(rotate_left(&prod, k), rx.iter().zip(&ry).map(|(a, b)| a * b).collect::<Vec<_>>());
        }

        #[test]
        fn diagonal_form_matches_oracle((w, v) in small_matrix()) {
            prop_assert_eq!(diagonal_mvm(&w, &v).unwrap(), mvm_oracle(&w, &v).unwrap());
        }

        #[test]
        fn levels_never_increase_without_bootstrap(ops in proptest::collection::vec(0u8..4, 1..20)) {
            let mut src = String::from("params { slots = 4 }\nfunc @main(%x: ct) -> ct {\n  %c = ckks.const {value = 2}\n");
            let mut prev = String::from("%x");
            for (i, op) in ops.iter().enumerate() {
                let line = match op {
                    0 => alloc::format!("  %v{i} = ckks.add {prev}, %x\n"),
                    1 => alloc::format!("  %v{i} = ckks.mul_pt {prev}, %c\n"),
                    2 => alloc::format!("  %v{i} = ckks.rotate {prev} {{index = 1}}\n"),
                    _ => alloc::format!("  %v{i} = ckks.mul_ct {prev}, {prev}\n"),
                };
                src.push_str(&line);
                prev = alloc::format!("%v{i}");
            }
            src.push_str(&alloc::format!("  return {prev}\n}}"));
            let m = parse_module(&src).unwrap();
            let prof = profile_levels(&m, &Inputs::from([("x".into(), vec![0; 4])])).unwrap();
            for r in &prof.records {
                let min_in = r.in_levels.iter().copied().min().unwrap_or(30);
                prop_assert!(r.out_levels.iter().all(|&o| o <= min_in));
            }
        }
    }
}
