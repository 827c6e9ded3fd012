use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use super::{dead_code_elim, map_main, rename_uses};
use crate::ir::{canonical_index, Const, Func, IndexExpr, Module, Op, OpKind, Type, ValueId};

/// Fully unrolls every loop, substituting induction variables into index
/// expressions. Rotations by 0 become their input, and products with
/// all-zero constant plaintexts are folded out of sums.
pub fn unroll_loops(m: &Module) -> Module {
    map_main(m, |m, f| {
        let body = core::mem::take(&mut f.body);
        let mut out = Vec::with_capacity(body.len());
        let mut cx = Expand { slots: m.params.slots, env: BTreeMap::new(), rename: BTreeMap::new() };
        cx.block(f, &body, false, &mut out);
        f.body = out;
        fold_zero_terms(m, f);
        dead_code_elim(f);
    })
}

struct Expand {
    slots: u32,
    env: BTreeMap<ValueId, i64>,
    rename: BTreeMap<ValueId, ValueId>,
}

impl Expand {
    fn map(&self, v: ValueId) -> ValueId {
        self.rename.get(&v).copied().unwrap_or(v)
    }

    fn subst_index(&self, e: &IndexExpr, canonical: bool) -> IndexExpr {
        let e = e.substitute(&self.env);
        match e.as_const() {
            Some(c) if canonical => IndexExpr::constant(i64::from(canonical_index(c, self.slots))),
            _ => e,
        }
    }

    /// Emits `ops` into `out`; returns the yielded values, if any.
    fn block(&mut self, f: &mut Func, ops: &[Op], fresh: bool, out: &mut Vec<Op>) -> Vec<ValueId> {
        for op in ops {
            match &op.kind {
                OpKind::ForLoop(l) => {
                    let mut carried: Vec<ValueId> = op.operands.iter().map(|&v| self.map(v)).collect();
                    for i in l.iterations() {
                        self.env.insert(l.iv, i);
                        for (&a, &c) in l.iter_args.iter().zip(&carried) {
                            self.rename.insert(a, c);
                        }
                        carried = self.block(f, &l.body, true, out);
                    }
                    self.env.remove(&l.iv);
                    for (&r, &c) in op.results.iter().zip(&carried) {
                        self.rename.insert(r, c);
                    }
                }
                OpKind::Yield => return op.operands.iter().map(|&v| self.map(v)).collect(),
                kind => {
                    let operands: Vec<ValueId> = op.operands.iter().map(|&v| self.map(v)).collect();
                    let kind = match kind {
                        OpKind::Rotate { index } => OpKind::Rotate { index: self.subst_index(index, true) },
                        OpKind::FastRotate { index } => OpKind::FastRotate { index: self.subst_index(index, true) },
                        OpKind::Const(Const::Diagonal { matrix, diag, shift }) => OpKind::Const(Const::Diagonal {
                            matrix: matrix.clone(),
                            diag: self.subst_index(diag, false),
                            shift: self.subst_index(shift, true),
                        }),
                        k => k.clone(),
                    };
                    let is_identity_rotation =
                        matches!(kind, OpKind::Rotate { .. }) && kind.rotation_index().and_then(IndexExpr::as_const) == Some(0);
                    if is_identity_rotation && operands.len() == 1 {
                        self.rename.insert(op.results[0], operands[0]);
                        continue;
                    }
                    let results = if fresh {
                        op.results
                            .iter()
                            .map(|&r| {
                                let n = f.new_value(f.ty(r));
                                self.rename.insert(r, n);
                                n
                            })
                            .collect()
                    } else {
                        op.results.clone()
                    };
                    out.push(Op::new(kind, operands, results));
                }
            }
        }
        Vec::new()
    }
}

/// Drops `a + z` terms where `z` is statically all-zero and keeping `a`
/// alone does not raise the sum's level.
fn fold_zero_terms(m: &Module, f: &mut Func) {
    let p = &m.params;
    let mut level: BTreeMap<ValueId, Option<u32>> = BTreeMap::new();
    for &a in &f.args {
        if f.ty(a) == Type::Ct {
            level.insert(a, Some(p.mult_depth));
        }
    }
    let mut zero: BTreeSet<ValueId> = BTreeSet::new();
    let mut rename: BTreeMap<ValueId, ValueId> = BTreeMap::new();
    let lv = |level: &BTreeMap<ValueId, Option<u32>>, v: ValueId| level.get(&v).copied().flatten();
    let mut kept = Vec::with_capacity(f.body.len());
    for mut op in core::mem::take(&mut f.body) {
        op.map_uses(&mut |v| super::resolve(&rename, v));
        let ct_levels: Vec<Option<u32>> =
            op.operands.iter().filter(|&&v| f.ty(v) == Type::Ct).map(|&v| lv(&level, v)).collect();
        let min_in: Option<u32> = ct_levels.iter().copied().try_fold(u32::MAX, |acc, l| l.map(|l| acc.min(l)));
        let is_zero = |v: &ValueId| zero.contains(v);
        let mut result_zero = false;
        match &op.kind {
            OpKind::Add => {
                let (a, b) = (op.operands[0], op.operands[1]);
                let r = op.results[0];
                let keep_other = |keep: ValueId, z: ValueId| {
                    f.ty(keep) == f.ty(r)
                        && match f.ty(keep) {
                            Type::Ct => match (lv(&level, keep), lv(&level, z)) {
                                (Some(lk), Some(lz)) => lk <= lz,
                                (Some(_), None) => f.ty(z) == Type::Pt,
                                _ => false,
                            },
                            _ => true,
                        }
                };
                if is_zero(&a) && is_zero(&b) {
                    result_zero = true;
                } else if is_zero(&b) && keep_other(a, b) {
                    rename.insert(r, a);
                    continue;
                } else if is_zero(&a) && keep_other(b, a) {
                    rename.insert(r, b);
                    continue;
                }
            }
            OpKind::MulPt | OpKind::MulCt => result_zero = op.operands.iter().any(is_zero),
            OpKind::Rotate { .. } | OpKind::FastRotate { .. } | OpKind::PrecomputeRot => {
                result_zero = op.operands.first().is_some_and(is_zero)
            }
            OpKind::Const(Const::Splat(0)) => result_zero = true,
            OpKind::Const(Const::Diagonal { matrix, diag, shift }) => {
                if let (Some(d), Some(_), Some(w)) = (diag.as_const(), shift.as_const(), m.matrices.get(matrix)) {
                    result_zero = d < 0 || w.diagonal(d as usize, p.slots as usize).iter().all(|&x| x == 0);
                }
            }
            _ => {}
        }
        let out_level = match &op.kind {
            OpKind::Add | OpKind::Rotate { .. } | OpKind::FastRotate { .. } | OpKind::PrecomputeRot => min_in,
            OpKind::MulPt | OpKind::MulCt | OpKind::LinearTransform { .. } => min_in.and_then(|l| l.checked_sub(1)),
            OpKind::Bootstrap => Some(p.refreshed_level()),
            _ => None,
        };
        for &r in &op.results {
            if f.ty(r) == Type::Ct {
                level.insert(r, out_level);
            }
            if result_zero {
                zero.insert(r);
            }
        }
        kept.push(op);
    }
    f.body = kept;
    rename_uses(&mut f.body, &rename);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{eval, Inputs};
    use crate::ir::{parse_module, verify};

    fn rotations(m: &Module) -> Vec<i64> {
        let mut v = Vec::new();
        m.main().unwrap().walk(&mut |op| {
            if let Some(e) = op.kind.rotation_index() {
                v.push(e.as_const().unwrap());
            }
        });
        v
    }

    #[test]
    fn unrolls_with_identity_elided() {
        let m = parse_module(
            "params { slots = 8 }
func @main(%v: ct) -> ct {
  %r = for_loop %i = 0 to 4 step 1 iter(%a = %v) : ct {
    %x = ckks.rotate %v {index = %i}
    %s = ckks.add %a, %x
    yield %s
  }
  return %r
}",
        )
        .unwrap();
        let u = unroll_loops(&m);
        assert!(!u.main().unwrap().has_loops());
        assert_eq!(rotations(&u), vec![1, 2, 3]);
        assert_eq!(crate::analysis::count_ops(u.main().unwrap(), |k| *k == OpKind::Add), 4);
        verify(&u).unwrap();
        let x = Inputs::from([("v".into(), (1..=8).collect())]);
        assert_eq!(eval(&u, &x).unwrap(), eval(&m, &x).unwrap());
    }

    #[test]
    fn empty_loop_disappears() {
        let m = parse_module(
            "params { slots = 8 }
func @main(%v: ct) -> ct {
  %r = for_loop %i = 0 to 3 step 1 iter(%a = %v) : ct {
    yield %a
  }
  return %r
}",
        )
        .unwrap();
        let u = unroll_loops(&m);
        assert_eq!(u.main().unwrap().body.len(), 1);
        verify(&u).unwrap();
    }

    #[test]
    fn zero_diagonals_fold_away() {
        // 2x2 identity padded into 8 slots: only diagonal 0 is nonzero
        let m = parse_module(
            "params { slots = 8 }
matrix @W [1, 0; 0, 1]
func @main(%v: ct) -> ct {
  %d0 = ckks.const {matrix = @W, diag = 0}
  %t = ckks.mul_pt %v, %d0
  %r = for_loop %i = 1 to 8 step 1 iter(%a = %t) : ct {
    %d = ckks.const {matrix = @W, diag = %i}
    %x = ckks.rotate %v {index = %i}
    %p = ckks.mul_pt %x, %d
    %s = ckks.add %a, %p
    yield %s
  }
  return %r
}",
        )
        .unwrap();
        let u = unroll_loops(&m);
        assert!(rotations(&u).is_empty());
        let x = Inputs::from([("v".into(), (1..=8).collect())]);
        assert_eq!(eval(&u, &x).unwrap(), eval(&m, &x).unwrap());
    }
}
