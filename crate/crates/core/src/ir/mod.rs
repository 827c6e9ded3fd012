//! SSA intermediate representation with first-class rotation keys.
//!
//! A [`Module`] holds crypto parameters, named dense integer matrices and a
//! list of functions. Each [`Func`] owns an arena of values; ops refer to
//! values by [`ValueId`]. Structured `for_loop` ops own a nested body, so
//! dominance is lexical: a value is visible in its own block after its
//! definition and in every block nested below that point.
//!
//! Rotation keys are values of type [`Type::RotKey`], parameterized by the
//! canonical rotation index they support.

mod parse;
mod print;
mod verify;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;

pub use parse::{parse_module, ParseError, ParseErrorKind};
pub use print::print_module;
pub use verify::{verify, Diagnostic, Rule};

/// Maps a raw rotation amount onto `[0, slots)`.
///
/// `slots` must be a power of two; keys for `raw` and `raw ± slots` are the
/// same key.
pub fn canonical_index(raw: i64, slots: u32) -> u32 {
    debug_assert!(slots.is_power_of_two());
    raw.rem_euclid(i64::from(slots)) as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ValueId(pub u32);

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Type {
    Ct,
    Pt,
    /// Rotation key for one canonical index.
    RotKey(u32),
    /// Loop induction variable.
    Index,
}

impl Type {
    pub fn is_data(self) -> bool {
        matches!(self, Type::Ct | Type::Pt)
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Ct => f.write_str("ct"),
            Type::Pt => f.write_str("pt"),
            Type::RotKey(i) => write!(f, "rk<{i}>"),
            Type::Index => f.write_str("index"),
        }
    }
}

/// Affine expression over enclosing loop induction variables:
/// `constant + Σ coeff·iv`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct IndexExpr {
    pub constant: i64,
    pub terms: Vec<(ValueId, i64)>,
}

impl IndexExpr {
    pub fn constant(c: i64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn var(iv: ValueId) -> Self {
        Self { constant: 0, terms: alloc::vec![(iv, 1)] }
    }

    pub fn scaled(iv: ValueId, coeff: i64) -> Self {
        Self { constant: 0, terms: alloc::vec![(iv, coeff)] }
    }

    pub fn plus(mut self, other: &IndexExpr) -> Self {
        self.constant += other.constant;
        for &(v, c) in &other.terms {
            match self.terms.iter_mut().find(|(w, _)| *w == v) {
                Some((_, d)) => *d += c,
                None => self.terms.push((v, c)),
            }
        }
        self.terms.retain(|&(_, c)| c != 0);
        self
    }

    pub fn negate(mut self) -> Self {
        self.constant = -self.constant;
        for (_, c) in &mut self.terms {
            *c = -*c;
        }
        self
    }

    pub fn as_const(&self) -> Option<i64> {
        self.terms.is_empty().then_some(self.constant)
    }

    /// Evaluates with `lookup` resolving induction variables.
    pub fn eval(&self, mut lookup: impl FnMut(ValueId) -> Option<i64>) -> Option<i64> {
        let mut acc = self.constant;
        for &(v, c) in &self.terms {
            acc = acc.checked_add(c.checked_mul(lookup(v)?)?)?;
        }
        Some(acc)
    }

    /// Replaces known induction variables by constants.
    pub fn substitute(&self, known: &BTreeMap<ValueId, i64>) -> IndexExpr {
        let mut out = IndexExpr::constant(self.constant);
        for &(v, c) in &self.terms {
            match known.get(&v) {
                Some(k) => out.constant += c * k,
                None => out.terms.push((v, c)),
            }
        }
        out
    }

    pub fn vars(&self) -> impl Iterator<Item = ValueId> + '_ {
        self.terms.iter().map(|&(v, _)| v)
    }

    fn map_vars(&mut self, f: &mut impl FnMut(ValueId) -> ValueId) {
        for (v, _) in &mut self.terms {
            *v = f(*v);
        }
    }
}

impl From<i64> for IndexExpr {
    fn from(c: i64) -> Self {
        IndexExpr::constant(c)
    }
}

/// Dotted position of an op inside nested loop bodies, e.g. `3.1`.
pub fn op_path(path: &[usize]) -> String {
    let mut s = String::new();
    for (i, p) in path.iter().enumerate() {
        if i > 0 {
            s.push('.');
        }
        let _ = write!(s, "{p}");
    }
    s
}

/// Cleartext constant payloads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Const {
    /// Every slot holds the same value.
    Splat(i64),
    /// Generalized diagonal `diag` of matrix `@matrix` (zero-padded to
    /// `slots × slots`), rotated left by `shift`. Diagonals at or beyond
    /// `slots` are all-zero.
    Diagonal { matrix: String, diag: IndexExpr, shift: IndexExpr },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForLoop {
    pub iv: ValueId,
    pub lo: i64,
    pub hi: i64,
    pub step: i64,
    /// Block arguments bound to the loop-carried values.
    pub iter_args: Vec<ValueId>,
    pub body: Vec<Op>,
    /// Set on loops produced by linear-transform lowering: diagonal
    /// matrix-vector product over `@matrix`.
    pub mvm: Option<String>,
}

impl ForLoop {
    pub fn trip_count(&self) -> u64 {
        if self.step <= 0 || self.hi <= self.lo {
            return 0;
        }
        ((self.hi - self.lo) as u64).div_ceil(self.step as u64)
    }

    pub fn iterations(&self) -> impl Iterator<Item = i64> {
        let (lo, hi, step) = (self.lo, self.hi, self.step.max(1));
        (lo..hi).step_by(step as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    MulPt,
    MulCt,
    Rotate { index: IndexExpr },
    PrecomputeRot,
    FastRotate { index: IndexExpr },
    Bootstrap,
    LinearTransform { matrix: String },
    Const(Const),
    LoadKey { index: u32 },
    ClearKey,
    PrefetchKey { index: u32 },
    UseKey,
    AssumeKey { index: u32 },
    ClearCt,
    ForLoop(ForLoop),
    Yield,
    Return,
}

impl OpKind {
    /// Textual opcode.
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "ckks.add",
            OpKind::MulPt => "ckks.mul_pt",
            OpKind::MulCt => "ckks.mul_ct",
            OpKind::Rotate { .. } => "ckks.rotate",
            OpKind::PrecomputeRot => "ckks.precompute_rot",
            OpKind::FastRotate { .. } => "ckks.fast_rotate",
            OpKind::Bootstrap => "ckks.bootstrap",
            OpKind::LinearTransform { .. } => "ckks.linear_transform",
            OpKind::Const(_) => "ckks.const",
            OpKind::LoadKey { .. } => "kmrt.load_key",
            OpKind::ClearKey => "kmrt.clear_key",
            OpKind::PrefetchKey { .. } => "kmrt.prefetch_key",
            OpKind::UseKey => "kmrt.use_key",
            OpKind::AssumeKey { .. } => "kmrt.assume_key",
            OpKind::ClearCt => "ckks.clear_ct",
            OpKind::ForLoop(_) => "for_loop",
            OpKind::Yield => "yield",
            OpKind::Return => "return",
        }
    }

    pub fn is_kmrt(&self) -> bool {
        matches!(
            self,
            OpKind::LoadKey { .. }
                | OpKind::ClearKey
                | OpKind::PrefetchKey { .. }
                | OpKind::UseKey
                | OpKind::AssumeKey { .. }
        )
    }

    pub fn is_rotation(&self) -> bool {
        matches!(self, OpKind::Rotate { .. } | OpKind::FastRotate { .. })
    }

    /// Rotation amount for rotate/fast_rotate.
    pub fn rotation_index(&self) -> Option<&IndexExpr> {
        match self {
            OpKind::Rotate { index } | OpKind::FastRotate { index } => Some(index),
            _ => None,
        }
    }

    /// Ops without side effects beyond their results; removable when unused.
    pub fn is_pure(&self) -> bool {
        matches!(
            self,
            OpKind::Add
                | OpKind::MulPt
                | OpKind::MulCt
                | OpKind::Rotate { .. }
                | OpKind::PrecomputeRot
                | OpKind::FastRotate { .. }
                | OpKind::Bootstrap
                | OpKind::LinearTransform { .. }
                | OpKind::Const(_)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Op {
    pub kind: OpKind,
    pub operands: Vec<ValueId>,
    pub results: Vec<ValueId>,
}

impl Op {
    pub fn new(kind: OpKind, operands: Vec<ValueId>, results: Vec<ValueId>) -> Self {
        Self { kind, operands, results }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn result(&self) -> Option<ValueId> {
        self.results.first().copied()
    }

    pub fn as_loop(&self) -> Option<&ForLoop> {
        match &self.kind {
            OpKind::ForLoop(l) => Some(l),
            _ => None,
        }
    }

    /// Every value this op reads, including reads from nested loop bodies
    /// and induction variables referenced by index expressions.
    pub fn for_each_use(&self, f: &mut impl FnMut(ValueId)) {
        for &v in &self.operands {
            f(v);
        }
        match &self.kind {
            OpKind::Rotate { index } | OpKind::FastRotate { index } => index.vars().for_each(&mut *f),
            OpKind::Const(Const::Diagonal { diag, shift, .. }) => {
                diag.vars().for_each(&mut *f);
                shift.vars().for_each(&mut *f);
            }
            OpKind::ForLoop(l) => {
                for op in &l.body {
                    op.for_each_use(f);
                }
            }
            _ => {}
        }
    }

    /// Rewrites every read (recursively, see [`Op::for_each_use`]).
    pub fn map_uses(&mut self, f: &mut impl FnMut(ValueId) -> ValueId) {
        for v in &mut self.operands {
            *v = f(*v);
        }
        match &mut self.kind {
            OpKind::Rotate { index } | OpKind::FastRotate { index } => index.map_vars(f),
            OpKind::Const(Const::Diagonal { diag, shift, .. }) => {
                diag.map_vars(f);
                shift.map_vars(f);
            }
            OpKind::ForLoop(l) => {
                for op in &mut l.body {
                    op.map_uses(f);
                }
            }
            _ => {}
        }
    }

    /// Every value defined by this op or inside its nested body.
    pub fn for_each_def(&self, f: &mut impl FnMut(ValueId)) {
        for &v in &self.results {
            f(v);
        }
        if let OpKind::ForLoop(l) = &self.kind {
            f(l.iv);
            for &a in &l.iter_args {
                f(a);
            }
            for op in &l.body {
                op.for_each_def(f);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueInfo {
    pub ty: Type,
    /// Source name, if the value came from text with a non-numeric name.
    pub name: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Func {
    pub name: String,
    pub args: Vec<ValueId>,
    pub ret: Vec<Type>,
    pub body: Vec<Op>,
    pub values: Vec<ValueInfo>,
}

impl Func {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), args: Vec::new(), ret: Vec::new(), body: Vec::new(), values: Vec::new() }
    }

    pub fn new_value(&mut self, ty: Type) -> ValueId {
        let id = ValueId(self.values.len() as u32);
        self.values.push(ValueInfo { ty, name: None });
        id
    }

    pub fn new_named(&mut self, ty: Type, name: impl Into<String>) -> ValueId {
        let id = self.new_value(ty);
        self.values[id.index()].name = Some(name.into());
        id
    }

    pub fn add_arg(&mut self, ty: Type, name: impl Into<String>) -> ValueId {
        let id = self.new_named(ty, name);
        self.args.push(id);
        id
    }

    pub fn ty(&self, v: ValueId) -> Type {
        self.values[v.index()].ty
    }

    /// Display name of a value without the `%` sigil.
    pub fn value_name(&self, v: ValueId) -> String {
        match self.values.get(v.index()).and_then(|i| i.name.as_ref()) {
            Some(n) => n.clone(),
            None => alloc::format!("{}", v.0),
        }
    }

    /// Name used for the `i`-th argument in input maps.
    pub fn arg_name(&self, i: usize) -> String {
        let v = self.args[i];
        match &self.values[v.index()].name {
            Some(n) => n.clone(),
            None => alloc::format!("arg{i}"),
        }
    }

    /// Operands of the trailing `return`, if any.
    pub fn returned(&self) -> &[ValueId] {
        match self.body.last() {
            Some(op) if op.kind == OpKind::Return => &op.operands,
            _ => &[],
        }
    }

    /// Renumbers values in textual definition order and drops unreferenced
    /// arena entries. Parsing the printed form of a compacted function
    /// reproduces it exactly.
    pub fn compact(&mut self) {
        let mut order: Vec<ValueId> = self.args.clone();
        for op in &self.body {
            op.for_each_def(&mut |v| order.push(v));
        }
        let mut remap = alloc::vec![u32::MAX; self.values.len()];
        let mut values = Vec::with_capacity(order.len());
        for (new, old) in order.iter().enumerate() {
            if remap[old.index()] == u32::MAX {
                remap[old.index()] = new as u32;
                values.push(self.values[old.index()].clone());
            }
        }
        let mut map = |v: ValueId| ValueId(remap[v.index()]);
        for a in &mut self.args {
            *a = map(*a);
        }
        fn rename(ops: &mut [Op], map: &mut impl FnMut(ValueId) -> ValueId) {
            for op in ops {
                for r in &mut op.results {
                    *r = map(*r);
                }
                for v in &mut op.operands {
                    *v = map(*v);
                }
                match &mut op.kind {
                    OpKind::Rotate { index } | OpKind::FastRotate { index } => index.map_vars(map),
                    OpKind::Const(Const::Diagonal { diag, shift, .. }) => {
                        diag.map_vars(map);
                        shift.map_vars(map);
                    }
                    OpKind::ForLoop(l) => {
                        l.iv = map(l.iv);
                        for a in &mut l.iter_args {
                            *a = map(*a);
                        }
                        rename(&mut l.body, map);
                    }
                    _ => {}
                }
            }
        }
        rename(&mut self.body, &mut map);
        self.values = values;
    }

    /// Number of ops, counting nested loop bodies.
    pub fn op_count(&self) -> usize {
        fn count(ops: &[Op]) -> usize {
            ops.iter().map(|op| 1 + op.as_loop().map_or(0, |l| count(&l.body))).sum()
        }
        count(&self.body)
    }

    /// Visits every op in textual order, descending into loop bodies.
    pub fn walk(&self, f: &mut impl FnMut(&Op)) {
        fn go(ops: &[Op], f: &mut impl FnMut(&Op)) {
            for op in ops {
                f(op);
                if let Some(l) = op.as_loop() {
                    go(&l.body, f);
                }
            }
        }
        go(&self.body, f);
    }

    pub fn has_loops(&self) -> bool {
        self.body.iter().any(|op| op.as_loop().is_some())
    }
}

/// Dense integer matrix, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = alloc::vec![0; n * n];
        for i in 0..n {
            data[i * n + i] = 1;
        }
        Self::new(n, n, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, alloc::vec![0; rows * cols])
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    /// Entry of the zero-padded `n × n` extension.
    pub fn padded(&self, r: usize, c: usize) -> i64 {
        if r < self.rows && c < self.cols {
            self.get(r, c)
        } else {
            0
        }
    }

    /// Generalized diagonal `d` of the zero-padded `n × n` matrix:
    /// `out[j] = W[j][(j + d) mod n]`, all-zero for `d >= n`.
    pub fn diagonal(&self, d: usize, n: usize) -> Vec<i64> {
        if d >= n {
            return alloc::vec![0; n];
        }
        (0..n).map(|j| self.padded(j, (j + d) % n)).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CryptoParams {
    pub ring_dim_log2: u32,
    /// Maximum multiplicative depth `L_max`.
    pub mult_depth: u32,
    pub slots: u32,
    /// Levels consumed by one bootstrap.
    pub d_boot: u32,
    /// Explicit bootstrap rotation indices; `None` selects the default
    /// signed powers of two.
    pub boot_keys: Option<BTreeSet<u32>>,
    /// Bootstraps additionally need the conjugation key.
    pub conj_key: bool,
}

impl Default for CryptoParams {
    fn default() -> Self {
        Self { ring_dim_log2: 16, mult_depth: 30, slots: 64, d_boot: 14, boot_keys: None, conj_key: false }
    }
}

impl CryptoParams {
    pub fn with_slots(slots: u32) -> Self {
        Self { slots, ..Self::default() }
    }

    /// Level of a freshly bootstrapped ciphertext.
    pub fn refreshed_level(&self) -> u32 {
        self.mult_depth - self.d_boot
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.slots.is_power_of_two() || self.slots < 2 {
            return Err(alloc::format!("slots = {} is not a power of two >= 2", self.slots));
        }
        if self.ring_dim_log2 == 0 || self.ring_dim_log2 > 40 {
            return Err(alloc::format!("ring_dim_log2 = {} out of range", self.ring_dim_log2));
        }
        if u64::from(self.slots) > 1u64 << (self.ring_dim_log2 - 1) {
            return Err(alloc::format!(
                "slots = {} exceeds half the ring dimension 2^{}",
                self.slots, self.ring_dim_log2
            ));
        }
        if self.d_boot == 0 || self.d_boot >= self.mult_depth {
            return Err(alloc::format!(
                "d_boot = {} must satisfy 0 < d_boot < mult_depth = {}",
                self.d_boot, self.mult_depth
            ));
        }
        if let Some(keys) = &self.boot_keys {
            if let Some(k) = keys.iter().find(|&&k| k == 0 || k >= self.slots) {
                return Err(alloc::format!("bootstrap key index {k} is not canonical"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Module {
    pub params: CryptoParams,
    pub matrices: BTreeMap<String, Matrix>,
    pub funcs: Vec<Func>,
}

impl Module {
    pub fn new(params: CryptoParams) -> Self {
        Self { params, matrices: BTreeMap::new(), funcs: Vec::new() }
    }

    pub fn main(&self) -> Option<&Func> {
        self.funcs.iter().find(|f| f.name == "main")
    }

    pub fn main_mut(&mut self) -> Option<&mut Func> {
        self.funcs.iter_mut().find(|f| f.name == "main")
    }

    pub fn compact(&mut self) {
        for f in &mut self.funcs {
            f.compact();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_index_examples() {
        assert_eq!(canonical_index(-2, 16), 14);
        assert_eq!(canonical_index(16, 16), 0);
        assert_eq!(canonical_index(11, 16), 11);
        assert_eq!(canonical_index(-16, 16), 0);
    }

    #[test]
    fn diagonal_extraction() {
        let w = Matrix::new(2, 2, alloc::vec![1, 2, 3, 4]);
        // padded to 4x4: row0 = [1,2,0,0], row1 = [3,4,0,0]
        assert_eq!(w.diagonal(0, 4), alloc::vec![1, 4, 0, 0]);
        assert_eq!(w.diagonal(1, 4), alloc::vec![2, 0, 0, 0]);
        assert_eq!(w.diagonal(3, 4), alloc::vec![0, 3, 0, 0]);
        assert_eq!(w.diagonal(4, 4), alloc::vec![0; 4]);
    }

    #[test]
    fn trip_counts() {
        let l = |lo, hi, step| ForLoop { iv: ValueId(0), lo, hi, step, iter_args: Vec::new(), body: Vec::new(), mvm: None };
        assert_eq!(l(0, 4, 1).trip_count(), 4);
        assert_eq!(l(1, 8, 3).trip_count(), 3);
        assert_eq!(l(4, 4, 1).trip_count(), 0);
        assert_eq!(l(1, 8, 3).iterations().collect::<Vec<_>>(), alloc::vec![1, 4, 7]);
    }

    #[test]
    fn params_validation() {
        assert!(CryptoParams::default().validate().is_ok());
        assert!(CryptoParams { slots: 12, ..Default::default() }.validate().is_err());
        assert!(CryptoParams { d_boot: 30, ..Default::default() }.validate().is_err());
        assert!(CryptoParams { ring_dim_log2: 4, slots: 16, ..Default::default() }.validate().is_err());
    }
}
