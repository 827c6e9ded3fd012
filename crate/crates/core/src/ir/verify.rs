use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

use super::{op_path, Const, Func, IndexExpr, Module, Op, OpKind, Type, ValueId};

/// Verifier rule violated by a [`Diagnostic`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rule {
    Ssa,
    UndefinedValue,
    OperandType,
    ResultType,
    KeyIndexMismatch,
    DynamicKeyedRotation,
    NonCanonicalIndex,
    UseAfterClear,
    UnprovenKeyAvailability,
    YieldMismatch,
    ReturnMismatch,
    Terminator,
    UnknownSymbol,
    LoopBounds,
    Module,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Ssa => "ssa",
            Rule::UndefinedValue => "undefined-value",
            Rule::OperandType => "operand-type",
            Rule::ResultType => "result-type",
            Rule::KeyIndexMismatch => "key-index-mismatch",
            Rule::DynamicKeyedRotation => "dynamic-keyed-rotation",
            Rule::NonCanonicalIndex => "non-canonical-index",
            Rule::UseAfterClear => "use-after-clear",
            Rule::UnprovenKeyAvailability => "unproven key availability",
            Rule::YieldMismatch => "yield-mismatch",
            Rule::ReturnMismatch => "return-mismatch",
            Rule::Terminator => "terminator",
            Rule::UnknownSymbol => "unknown-symbol",
            Rule::LoopBounds => "loop-bounds",
            Rule::Module => "module",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub rule: Rule,
    /// `@func` plus the op's opcode and nesting path, e.g. `@main/ckks.rotate#3`.
    pub op: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.rule, self.op, self.message)
    }
}

/// Result type an op would produce given its operand types.
pub(crate) fn infer_result_type(kind: &OpKind, operands: &[Type]) -> Option<Type> {
    match kind {
        OpKind::Add => {
            if operands.contains(&Type::Ct) {
                Some(Type::Ct)
            } else if !operands.is_empty() && operands.iter().all(|&t| t == Type::Pt) {
                Some(Type::Pt)
            } else {
                None
            }
        }
        OpKind::MulPt
        | OpKind::MulCt
        | OpKind::Rotate { .. }
        | OpKind::FastRotate { .. }
        | OpKind::PrecomputeRot
        | OpKind::Bootstrap
        | OpKind::LinearTransform { .. } => Some(Type::Ct),
        OpKind::Const(_) => Some(Type::Pt),
        OpKind::LoadKey { index } | OpKind::AssumeKey { index } => Some(Type::RotKey(*index)),
        OpKind::UseKey => operands.first().copied().filter(|t| matches!(t, Type::RotKey(_))),
        _ => None,
    }
}

/// Checks SSA form, typing, key-index agreement, clear discipline and key
/// availability. Returns every violation found.
pub fn verify(m: &Module) -> Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let module_diag = |message: String| Diagnostic { rule: Rule::Module, op: "module".into(), message };
    if let Err(msg) = m.params.validate() {
        diags.push(module_diag(msg));
    }
    match m.funcs.iter().filter(|f| f.name == "main").count() {
        1 => {}
        0 => diags.push(module_diag("no entry function `@main`".into())),
        n => diags.push(module_diag(format!("{n} functions named `@main`"))),
    }
    let mut names = BTreeSet::new();
    for f in &m.funcs {
        if !names.insert(f.name.as_str()) {
            diags.push(module_diag(format!("function `@{}` defined twice", f.name)));
        }
        let mut v = Verifier {
            m,
            f,
            diags: &mut diags,
            defined: vec![false; f.values.len()],
            visible: vec![false; f.values.len()],
            cleared: BTreeSet::new(),
            def_kind: vec![None; f.values.len()],
            path: Vec::new(),
        };
        v.func();
        let mut avail: BTreeSet<u32> = f
            .args
            .iter()
            .filter_map(|&a| match f.values.get(a.index()).map(|i| i.ty) {
                Some(Type::RotKey(i)) => Some(i),
                _ => None,
            })
            .collect();
        let mut unproven = Vec::new();
        availability(f, &f.body, &mut avail, &mut Some(&mut unproven), &mut Vec::new());
        for (path, index) in unproven {
            diags.push(Diagnostic {
                rule: Rule::UnprovenKeyAvailability,
                op: format!("@{}/kmrt.assume_key#{}", f.name, op_path(&path)),
                message: format!("no dominating load_key/assume_key of index {index} without an intervening clear"),
            });
        }
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

/// Forward "available key index" dataflow. Loops iterate to a fixpoint on
/// their entry state before diagnostics are reported.
fn availability(
    f: &Func,
    ops: &[Op],
    avail: &mut BTreeSet<u32>,
    report: &mut Option<&mut Vec<(Vec<usize>, u32)>>,
    path: &mut Vec<usize>,
) {
    for (pos, op) in ops.iter().enumerate() {
        path.push(pos);
        match &op.kind {
            OpKind::LoadKey { index } => {
                avail.insert(*index);
            }
            OpKind::AssumeKey { index } => {
                if !avail.contains(index) {
                    if let Some(r) = report.as_deref_mut() {
                        r.push((path.clone(), *index));
                    }
                }
                avail.insert(*index);
            }
            OpKind::ClearKey => {
                if let Some(Type::RotKey(i)) = op.operands.first().and_then(|v| f.values.get(v.index())).map(|i| i.ty) {
                    avail.remove(&i);
                }
            }
            OpKind::ForLoop(l) => {
                let trips = l.trip_count();
                if trips > 0 {
                    let mut entry = avail.clone();
                    loop {
                        let mut out = entry.clone();
                        availability(f, &l.body, &mut out, &mut None, path);
                        let next: BTreeSet<u32> =
                            if trips >= 2 { avail.intersection(&out).copied().collect() } else { avail.clone() };
                        if next == entry {
                            break;
                        }
                        entry = next;
                    }
                    availability(f, &l.body, &mut entry, report, path);
                    *avail = entry;
                }
            }
            _ => {}
        }
        path.pop();
    }
}

struct Verifier<'a> {
    m: &'a Module,
    f: &'a Func,
    diags: &'a mut Vec<Diagnostic>,
    defined: Vec<bool>,
    visible: Vec<bool>,
    cleared: BTreeSet<ValueId>,
    def_kind: Vec<Option<&'static str>>,
    path: Vec<usize>,
}

enum Terminator<'a> {
    Return,
    Yield(&'a [ValueId]),
}

impl<'a> Verifier<'a> {
    fn report(&mut self, rule: Rule, op: &Op, message: String) {
        let op = format!("@{}/{}#{}", self.f.name, op.name(), op_path(&self.path));
        self.diags.push(Diagnostic { rule, op, message });
    }

    fn name(&self, v: ValueId) -> String {
        format!("%{}", self.f.value_name(v))
    }

    fn ty(&self, v: ValueId) -> Option<Type> {
        self.f.values.get(v.index()).map(|i| i.ty)
    }

    fn define(&mut self, v: ValueId, op: Option<&Op>) -> bool {
        let Some(slot) = self.defined.get_mut(v.index()) else {
            if let Some(op) = op {
                self.report(Rule::UndefinedValue, op, format!("result id {} outside the value table", v.0));
            }
            return false;
        };
        if *slot {
            let msg = format!("{} defined more than once", self.name(v));
            match op {
                Some(op) => self.report(Rule::Ssa, op, msg),
                None => self.diags.push(Diagnostic { rule: Rule::Ssa, op: format!("@{}", self.f.name), message: msg }),
            }
            return false;
        }
        *slot = true;
        self.visible[v.index()] = true;
        if let Some(Type::RotKey(i)) = self.ty(v) {
            if i == 0 || i >= self.m.params.slots {
                let msg = format!("{} has key type rk<{i}> outside [1, {})", self.name(v), self.m.params.slots);
                match op {
                    Some(op) => self.report(Rule::NonCanonicalIndex, op, msg),
                    None => self.diags.push(Diagnostic {
                        rule: Rule::NonCanonicalIndex,
                        op: format!("@{}", self.f.name),
                        message: msg,
                    }),
                }
            }
        }
        true
    }

    fn func(&mut self) {
        let f = self.f;
        for &a in &f.args {
            self.define(a, None);
        }
        self.block(&f.body, Terminator::Return);
    }

    fn block(&mut self, ops: &'a [Op], term: Terminator<'_>) {
        let mut local_defs = Vec::new();
        for (pos, op) in ops.iter().enumerate() {
            self.path.push(pos);
            let is_last = pos + 1 == ops.len();
            match (&op.kind, &term) {
                (OpKind::Return, Terminator::Return) | (OpKind::Yield, Terminator::Yield(_)) if is_last => {}
                (OpKind::Return | OpKind::Yield, _) => {
                    self.report(Rule::Terminator, op, format!("`{}` is not the terminator of its block", op.name()))
                }
                _ => {}
            }
            self.op(op, &term);
            op.for_each_def(&mut |v| local_defs.push(v));
            self.path.pop();
        }
        match (ops.last().map(|o| &o.kind), &term) {
            (Some(OpKind::Return), Terminator::Return) | (Some(OpKind::Yield), Terminator::Yield(_)) => {}
            (_, Terminator::Return) => self.diags.push(Diagnostic {
                rule: Rule::Terminator,
                op: format!("@{}", self.f.name),
                message: "function body does not end in `return`".into(),
            }),
            (_, Terminator::Yield(_)) => self.diags.push(Diagnostic {
                rule: Rule::Terminator,
                op: format!("@{}/for_loop#{}", self.f.name, op_path(&self.path)),
                message: "loop body does not end in `yield`".into(),
            }),
        }
        for v in local_defs {
            if let Some(s) = self.visible.get_mut(v.index()) {
                *s = false;
            }
        }
    }

    fn check_use(&mut self, op: &Op, v: ValueId) -> Option<Type> {
        let visible = self.visible.get(v.index()).copied().unwrap_or(false);
        if !visible {
            let msg = if self.defined.get(v.index()).copied().unwrap_or(false) {
                format!("{} does not dominate this use", self.name(v))
            } else {
                format!("use of undefined value {}", self.name(v))
            };
            self.report(Rule::UndefinedValue, op, msg);
            return None;
        }
        self.ty(v)
    }

    fn check_index_expr(&mut self, op: &Op, e: &IndexExpr) {
        for v in e.vars() {
            if self.check_use(op, v).is_some_and(|t| t != Type::Index) {
                self.report(Rule::OperandType, op, format!("{} in index expression is not a loop index", self.name(v)));
            }
        }
    }

    fn expect_types(&mut self, op: &Op, types: &[Option<Type>], want: &[&[Type]]) -> bool {
        if types.len() != want.len() {
            self.report(Rule::OperandType, op, format!("expected {} operand(s), found {}", want.len(), types.len()));
            return false;
        }
        let mut ok = true;
        for (i, (t, w)) in types.iter().zip(want).enumerate() {
            if let Some(t) = t {
                if !w.contains(t) {
                    self.report(Rule::OperandType, op, format!("operand {i} has type {t}"));
                    ok = false;
                }
            }
        }
        ok
    }

    fn check_matrix(&mut self, op: &Op, name: &str) {
        if !self.m.matrices.contains_key(name) {
            self.report(Rule::UnknownSymbol, op, format!("unknown matrix @{name}"));
        }
    }

    fn check_key_index(&mut self, op: &Op, index: u32) {
        if index == 0 || index >= self.m.params.slots {
            self.report(Rule::NonCanonicalIndex, op, format!("key index {index} outside [1, {})", self.m.params.slots));
        }
    }

    fn op(&mut self, op: &'a Op, term: &Terminator<'_>) {
        let slots = self.m.params.slots;
        let mut types = Vec::with_capacity(op.operands.len());
        for &v in &op.operands {
            types.push(self.check_use(op, v));
            if self.cleared.contains(&v) {
                self.report(Rule::UseAfterClear, op, format!("{} used after it was cleared", self.name(v)));
            }
        }
        const CT: &[Type] = &[Type::Ct];
        const PT: &[Type] = &[Type::Pt];
        const DATA: &[Type] = &[Type::Ct, Type::Pt];
        match &op.kind {
            OpKind::Add => {
                self.expect_types(op, &types, &[DATA, DATA]);
            }
            OpKind::MulPt => {
                self.expect_types(op, &types, &[CT, PT]);
            }
            OpKind::MulCt => {
                self.expect_types(op, &types, &[CT, CT]);
            }
            OpKind::PrecomputeRot => {
                self.expect_types(op, &types, &[CT]);
            }
            OpKind::Rotate { index } | OpKind::FastRotate { index } => {
                self.check_index_expr(op, index);
                if let OpKind::FastRotate { .. } = op.kind {
                    if let Some(&src) = op.operands.first() {
                        if self.def_kind.get(src.index()).copied().flatten() != Some("ckks.precompute_rot") {
                            self.report(Rule::OperandType, op, format!("{} is not a precompute_rot result", self.name(src)));
                        }
                    }
                }
                if let Some(c) = index.as_const() {
                    if c < 0 || c >= i64::from(slots) {
                        self.report(Rule::NonCanonicalIndex, op, format!("rotation index {c} outside [0, {slots})"));
                    }
                }
                match types.len() {
                    1 => {
                        self.expect_types(op, &types, &[CT]);
                    }
                    2 => {
                        if let Some(t) = types[0] {
                            if t != Type::Ct {
                                self.report(Rule::OperandType, op, format!("operand 0 has type {t}"));
                            }
                        }
                        match (types[1], index.as_const()) {
                            (Some(Type::RotKey(k)), Some(i)) => {
                                if i64::from(k) != i || i == 0 {
                                    self.report(
                                        Rule::KeyIndexMismatch,
                                        op,
                                        format!("rotation by {i} uses a key of type rk<{k}>"),
                                    );
                                }
                            }
                            (Some(Type::RotKey(_)), None) => self.report(
                                Rule::DynamicKeyedRotation,
                                op,
                                "a keyed rotation needs a static index".into(),
                            ),
                            (Some(t), _) => self.report(Rule::OperandType, op, format!("key operand has type {t}")),
                            (None, _) => {}
                        }
                    }
                    n => self.report(Rule::OperandType, op, format!("expected 1 or 2 operands, found {n}")),
                }
            }
            OpKind::Bootstrap => {
                if types.is_empty() {
                    self.report(Rule::OperandType, op, "bootstrap needs a ciphertext operand".into());
                } else {
                    if let Some(t) = types[0].filter(|&t| t != Type::Ct) {
                        self.report(Rule::OperandType, op, format!("operand 0 has type {t}"));
                    }
                    for t in types[1..].iter().flatten() {
                        if !matches!(t, Type::RotKey(_)) {
                            self.report(Rule::OperandType, op, format!("bootstrap key operand has type {t}"));
                        }
                    }
                }
            }
            OpKind::LinearTransform { matrix } => {
                self.expect_types(op, &types, &[CT]);
                self.check_matrix(op, matrix);
            }
            OpKind::Const(c) => {
                self.expect_types(op, &types, &[]);
                if let Const::Diagonal { matrix, diag, shift } = c {
                    self.check_matrix(op, matrix);
                    self.check_index_expr(op, diag);
                    self.check_index_expr(op, shift);
                }
            }
            OpKind::LoadKey { index } | OpKind::AssumeKey { index } | OpKind::PrefetchKey { index } => {
                self.expect_types(op, &types, &[]);
                self.check_key_index(op, *index);
            }
            OpKind::ClearKey | OpKind::UseKey => {
                if types.len() != 1 {
                    self.report(Rule::OperandType, op, format!("expected 1 operand, found {}", types.len()));
                } else if let Some(t) = types[0].filter(|t| !matches!(t, Type::RotKey(_))) {
                    self.report(Rule::OperandType, op, format!("operand has type {t}, expected a rotation key"));
                }
            }
            OpKind::ClearCt => {
                self.expect_types(op, &types, &[DATA]);
            }
            OpKind::ForLoop(l) => {
                if l.step <= 0 {
                    self.report(Rule::LoopBounds, op, format!("non-positive step {}", l.step));
                }
                if let Some(w) = &l.mvm {
                    self.check_matrix(op, w);
                }
                if l.iter_args.len() != op.operands.len() || op.results.len() != op.operands.len() {
                    self.report(Rule::YieldMismatch, op, "loop-carried values, inits and results disagree in count".into());
                }
                for (i, (&arg, &init)) in l.iter_args.iter().zip(&op.operands).enumerate() {
                    if self.ty(arg) != self.ty(init) {
                        self.report(Rule::YieldMismatch, op, format!("carried value {i} changes type at loop entry"));
                    }
                }
                for (i, (&res, &init)) in op.results.iter().zip(&op.operands).enumerate() {
                    if self.ty(res) != self.ty(init) {
                        self.report(Rule::ResultType, op, format!("loop result {i} type differs from its init"));
                    }
                }
                self.define(l.iv, Some(op));
                if self.ty(l.iv) != Some(Type::Index) {
                    self.report(Rule::OperandType, op, "induction variable is not of type index".into());
                }
                for &a in &l.iter_args {
                    self.define(a, Some(op));
                }
                let before: BTreeSet<ValueId> = self.cleared.clone();
                self.block(&l.body, Terminator::Yield(&l.iter_args));
                if l.trip_count() > 1 {
                    let outer_cleared: Vec<ValueId> = self
                        .cleared
                        .difference(&before)
                        .copied()
                        .filter(|v| !defined_in(&l.body, *v) && !l.iter_args.contains(v))
                        .collect();
                    for v in outer_cleared {
                        self.report(
                            Rule::UseAfterClear,
                            op,
                            format!("{} is cleared inside a loop body that runs more than once", self.name(v)),
                        );
                    }
                }
                for &a in [l.iv].iter().chain(&l.iter_args) {
                    if let Some(s) = self.visible.get_mut(a.index()) {
                        *s = false;
                    }
                }
            }
            OpKind::Yield => {
                if let Terminator::Yield(args) = term {
                    let want: Vec<Option<Type>> = args.iter().map(|&a| self.ty(a)).collect();
                    if want != types {
                        self.report(Rule::YieldMismatch, op, "yielded values do not match the loop-carried types".into());
                    }
                }
            }
            OpKind::Return => {
                let want: Vec<Option<Type>> = self.f.ret.iter().map(|&t| Some(t)).collect();
                if want != types {
                    self.report(Rule::ReturnMismatch, op, "returned values do not match the function signature".into());
                }
            }
        }
        if let OpKind::ClearKey | OpKind::ClearCt = op.kind {
            if let Some(&v) = op.operands.first() {
                self.cleared.insert(v);
            }
        }
        if !matches!(op.kind, OpKind::ForLoop(_)) {
            let expected = infer_result_type(&op.kind, &types.iter().map(|t| t.unwrap_or(Type::Ct)).collect::<Vec<_>>());
            let n_results = usize::from(expected.is_some());
            if op.results.len() != n_results {
                self.report(Rule::ResultType, op, format!("expected {n_results} result(s), found {}", op.results.len()));
            }
            for &r in &op.results {
                if let (Some(want), Some(got)) = (expected, self.ty(r)) {
                    if want != got && types.iter().all(Option::is_some) {
                        self.report(Rule::ResultType, op, format!("result {} has type {got}, expected {want}", self.name(r)));
                    }
                }
            }
        }
        for &r in &op.results {
            if self.define(r, Some(op)) {
                self.def_kind[r.index()] = Some(op.name());
            }
        }
    }
}

fn defined_in(ops: &[Op], v: ValueId) -> bool {
    let mut found = false;
    for op in ops {
        op.for_each_def(&mut |d| found |= d == v);
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn rules(src: &str) -> Vec<Rule> {
        match verify(&parse_module(src).unwrap()) {
            Ok(()) => Vec::new(),
            Err(d) => d.into_iter().map(|d| d.rule).collect(),
        }
    }

    #[test]
    fn lowering_example_is_valid() {
        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %k5 = kmrt.load_key 5
  %a = ckks.rotate %v, %k5 {index = 5}
  kmrt.clear_key %k5
  %k3 = kmrt.load_key 3
  %b = ckks.rotate %a, %k3 {index = 3}
  kmrt.clear_key %k3
  return %b
}";
        assert_eq!(rules(src), vec![]);
    }

    #[test]
    fn key_index_mismatch() {
        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %k = kmrt.load_key 3
  %r = ckks.rotate %v, %k {index = 5}
  kmrt.clear_key %k
  return %r
}";
        assert_eq!(rules(src), vec![Rule::KeyIndexMismatch]);
    }

    #[test]
    fn use_after_clear() {
        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %k = kmrt.load_key 5
  kmrt.clear_key %k
  %r = ckks.rotate %v, %k {index = 5}
  return %r
}";
        let m = parse_module(src).unwrap();
        let d = verify(&m).unwrap_err();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].rule, Rule::UseAfterClear);
        assert!(d[0].to_string().starts_with("use-after-clear: @main/ckks.rotate#2"));
    }

    #[test]
    fn assume_key_needs_dominating_load() {
        let bad = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %k = kmrt.assume_key 7
  %r = ckks.rotate %v, %k {index = 7}
  return %r
}";
        assert_eq!(rules(bad), vec![Rule::UnprovenKeyAvailability]);

        let good = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %k = kmrt.load_key 7
  %r = for_loop %i = 0 to 4 step 1 iter(%a = %v) : ct {
    %kk = kmrt.assume_key 7
    %x = ckks.rotate %a, %kk {index = 7}
    yield %x
  }
  kmrt.clear_key %k
  return %r
}";
        assert_eq!(rules(good), vec![]);

        // the clear at the end of the first iteration kills availability for the next
        let cleared = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %k = kmrt.load_key 7
  %r = for_loop %i = 0 to 4 step 1 iter(%a = %v) : ct {
    %kk = kmrt.assume_key 7
    %x = ckks.rotate %a, %kk {index = 7}
    kmrt.clear_key %kk
    yield %x
  }
  return %r
}";
        assert_eq!(rules(cleared), vec![Rule::UnprovenKeyAvailability]);
    }

    #[test]
    fn structural_errors() {
        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %r = for_loop %i = 0 to 4 step 1 iter(%a = %v) : ct {
    %x = ckks.rotate %a {index = %i}
    yield %x
  }
  %bad = ckks.add %x, %r
  return %bad
}";
        assert!(parse_module(src).is_err(), "out-of-scope name is rejected at parse time");

        let src = "params { slots = 16 }
func @main(%v: ct) -> pt {
  return %v
}";
        assert_eq!(rules(src), vec![Rule::ReturnMismatch]);

        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %k = kmrt.load_key 3
  %r = for_loop %i = 0 to 4 step 1 iter(%a = %v) : ct {
    %x = ckks.rotate %a, %k {index = %i}
    yield %x
  }
  return %r
}";
        assert_eq!(rules(src), vec![Rule::DynamicKeyedRotation]);

        let src = "params { slots = 16 }
func @other(%v: ct) -> ct {
  return %v
}";
        assert_eq!(rules(src), vec![Rule::Module]);
    }

    #[test]
    fn clear_inside_loop_of_outer_value() {
        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %k = kmrt.load_key 2
  %r = for_loop %i = 0 to 2 step 1 iter(%a = %v) : ct {
    %x = ckks.rotate %a, %k {index = 2}
    kmrt.clear_key %k
    yield %x
  }
  return %r
}";
        assert!(rules(src).contains(&Rule::UseAfterClear));
    }
}
