use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{map_main, rename_uses, PassError};
use crate::interp::{profile_levels, EvalError, Inputs, LevelProfile};
use crate::ir::{Func, Module, Op, OpKind, Type, ValueId};
use crate::runtime::CostModel;

/// Shares one `precompute_rot` among the static rotations of a ciphertext
/// within a block, when `C_pre + n·C_fast < n·C_rot` for the `n` rotations.
pub fn hoist_rotations(m: &Module, cm: &CostModel) -> Module {
    map_main(m, |_, f| {
        let body = core::mem::take(&mut f.body);
        f.body = hoist_block(f, body, cm);
    })
}

fn hoist_block(f: &mut Func, mut ops: Vec<Op>, cm: &CostModel) -> Vec<Op> {
    for op in &mut ops {
        if let OpKind::ForLoop(l) = &mut op.kind {
            let body = core::mem::take(&mut l.body);
            l.body = hoist_block(f, body, cm);
        }
    }
    let mut groups: BTreeMap<ValueId, Vec<usize>> = BTreeMap::new();
    for (pos, op) in ops.iter().enumerate() {
        if let OpKind::Rotate { index } = &op.kind {
            if index.as_const().is_some_and(|k| k != 0) {
                groups.entry(op.operands[0]).or_default().push(pos);
            }
        }
    }
    let mut insert_before: BTreeMap<usize, Op> = BTreeMap::new();
    for (v, positions) in groups {
        let n = positions.len() as u64;
        if cm.precompute_rot + n * cm.fast_rotate >= n * cm.rotate {
            continue;
        }
        let pre = f.new_value(Type::Ct);
        insert_before.insert(positions[0], Op::new(OpKind::PrecomputeRot, vec![v], vec![pre]));
        for pos in positions {
            let op = &mut ops[pos];
            if let OpKind::Rotate { index } = &op.kind {
                op.kind = OpKind::FastRotate { index: index.clone() };
                op.operands[0] = pre;
            }
        }
    }
    let mut out = Vec::with_capacity(ops.len() + insert_before.len());
    for (pos, op) in ops.into_iter().enumerate() {
        if let Some(pre) = insert_before.remove(&pos) {
            out.push(pre);
        }
        out.push(op);
    }
    out
}

/// Deduplicates pure plaintext ops and drops unused ones. Ciphertext and
/// key-management ops are left alone.
pub fn cse(m: &Module) -> Module {
    map_main(m, |_, f| {
        let mut rename = BTreeMap::new();
        let body = core::mem::take(&mut f.body);
        f.body = cse_block(f, body, &mut BTreeMap::new(), &mut rename);
        rename_uses(&mut f.body, &rename);
        loop {
            let mut used = BTreeSet::new();
            for op in &f.body {
                op.for_each_use(&mut |v| {
                    used.insert(v);
                });
            }
            if !drop_unused_plaintext(f, &used) {
                break;
            }
        }
    })
}

fn is_plaintext_pure(f: &Func, op: &Op) -> bool {
    op.kind.is_pure() && !op.results.is_empty() && op.results.iter().all(|&r| f.ty(r) == Type::Pt)
}

fn cse_block(
    f: &Func,
    ops: Vec<Op>,
    seen: &mut BTreeMap<String, ValueId>,
    rename: &mut BTreeMap<ValueId, ValueId>,
) -> Vec<Op> {
    let mut out = Vec::with_capacity(ops.len());
    for mut op in ops {
        op.map_uses(&mut |v| super::resolve(rename, v));
        if let OpKind::ForLoop(l) = &mut op.kind {
            let body = core::mem::take(&mut l.body);
            let mut inner = seen.clone();
            l.body = cse_block(f, body, &mut inner, rename);
            out.push(op);
            continue;
        }
        if is_plaintext_pure(f, &op) && op.results.len() == 1 {
            let key = format!("{:?}|{:?}", op.kind, op.operands);
            if let Some(&prev) = seen.get(&key) {
                rename.insert(op.results[0], prev);
                continue;
            }
            seen.insert(key, op.results[0]);
        }
        out.push(op);
    }
    out
}

fn drop_unused_plaintext(f: &mut Func, used: &BTreeSet<ValueId>) -> bool {
    fn go(f: &Func, ops: &mut Vec<Op>, used: &BTreeSet<ValueId>) -> bool {
        let before = ops.len();
        ops.retain(|op| !(is_plaintext_pure(f, op) && op.results.iter().all(|r| !used.contains(r))));
        let mut changed = before != ops.len();
        for op in ops.iter_mut() {
            if let OpKind::ForLoop(l) = &mut op.kind {
                changed |= go(f, &mut l.body, used);
            }
        }
        changed
    }
    let mut body = core::mem::take(&mut f.body);
    let changed = go(f, &mut body, used);
    f.body = body;
    changed
}

/// Ends every ciphertext/plaintext value with a `clear_ct` right after its
/// last use in the top-level op order, except values the function returns.
/// Uses inside a loop count at the loop's position.
pub fn insert_clear_ops(m: &Module) -> Module {
    map_main(m, |_, f| {
        let returned: BTreeSet<ValueId> = f.returned().iter().copied().collect();
        let mut already: BTreeSet<ValueId> = BTreeSet::new();
        // position after which the value dies; None = before the first op
        let mut last: BTreeMap<ValueId, Option<usize>> = BTreeMap::new();
        for &a in &f.args {
            if f.ty(a).is_data() {
                last.insert(a, None);
            }
        }
        for (pos, op) in f.body.iter().enumerate() {
            if op.kind == OpKind::ClearCt {
                already.extend(op.operands.iter().copied());
            }
            op.for_each_use(&mut |v| {
                if let Some(l) = last.get_mut(&v) {
                    *l = Some(pos);
                }
            });
            for &r in &op.results {
                if f.ty(r).is_data() {
                    last.insert(r, Some(pos));
                }
            }
        }
        let mut at: BTreeMap<Option<usize>, Vec<ValueId>> = BTreeMap::new();
        for (v, pos) in last {
            if !returned.contains(&v) && !already.contains(&v) {
                at.entry(pos).or_default().push(v);
            }
        }
        let clear = |v: ValueId| Op::new(OpKind::ClearCt, vec![v], vec![]);
        let mut out = Vec::with_capacity(f.body.len() * 2);
        out.extend(at.remove(&None).unwrap_or_default().into_iter().map(clear));
        for (pos, op) in core::mem::take(&mut f.body).into_iter().enumerate() {
            let is_return = op.kind == OpKind::Return;
            let dying = at.remove(&Some(pos)).unwrap_or_default();
            if is_return {
                out.extend(dying.into_iter().map(clear));
                out.push(op);
            } else {
                out.push(op);
                out.extend(dying.into_iter().map(clear));
            }
        }
        f.body = out;
    })
}

#[derive(Clone, Debug)]
pub struct BootstrapRemoval {
    pub module: Module,
    /// Paths (in the input module) of deleted bootstraps.
    pub removed: Vec<Vec<usize>>,
    /// Candidates whose deletion exhausted depth downstream.
    pub rolled_back: Vec<Vec<usize>>,
    /// Bootstraps still present.
    pub kept: usize,
}

/// Deletes every bootstrap whose profiled output level is no higher than
/// its input level (in every execution of it). Each deletion is checked by
/// re-profiling on `inputs` and undone if depth runs out.
pub fn bootstrap_removal(m: &Module, prof: &LevelProfile, inputs: &Inputs) -> Result<BootstrapRemoval, PassError> {
    let mut verdict: BTreeMap<Vec<usize>, bool> = BTreeMap::new();
    for r in prof.bootstraps() {
        let useless = r.out_levels.iter().zip(&r.in_levels).all(|(o, i)| o <= i);
        let e = verdict.entry(r.path.clone()).or_insert(true);
        *e &= useless;
    }
    let candidates: Vec<Vec<usize>> = verdict.into_iter().filter(|(_, u)| *u).map(|(p, _)| p).collect();
    let mut cur = m.clone();
    let mut removed = Vec::new();
    let mut rolled_back = Vec::new();
    // back to front, so earlier paths stay valid
    for path in candidates.into_iter().rev() {
        let mut trial = cur.clone();
        let Some(f) = trial.main_mut() else { break };
        if !remove_bootstrap(&mut f.body, &path) {
            continue;
        }
        match profile_levels(&trial, inputs) {
            Ok(_) => {
                cur = trial;
                removed.push(path);
            }
            Err(EvalError::DepthExhausted { .. }) => rolled_back.push(path),
            Err(e) => return Err(e.into()),
        }
    }
    removed.reverse();
    rolled_back.reverse();
    cur.compact();
    let mut kept = 0;
    if let Some(f) = cur.main() {
        f.walk(&mut |op| kept += usize::from(op.kind == OpKind::Bootstrap));
    }
    Ok(BootstrapRemoval { module: cur, removed, rolled_back, kept })
}

fn remove_bootstrap(ops: &mut Vec<Op>, path: &[usize]) -> bool {
    let Some((&pos, rest)) = path.split_first() else { return false };
    if !rest.is_empty() {
        return match ops.get_mut(pos).map(|o| &mut o.kind) {
            Some(OpKind::ForLoop(l)) => remove_bootstrap(&mut l.body, rest),
            _ => false,
        };
    }
    if ops.get(pos).map(|o| &o.kind) != Some(&OpKind::Bootstrap) {
        return false;
    }
    let op = ops.remove(pos);
    let map = BTreeMap::from([(op.results[0], op.operands[0])]);
    rename_uses(ops, &map);
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::count_ops;
    use crate::interp::{eval, ones_inputs};
    use crate::ir::{parse_module, verify};

    #[test]
    fn hoisting_follows_cost_inequality() {
        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %a = ckks.rotate %v {index = 1}
  %b = ckks.rotate %v {index = 2}
  %c = ckks.rotate %v {index = 3}
  %s = ckks.add %a, %b
  %t = ckks.add %s, %c
  %u = ckks.rotate %t {index = 5}
  return %u
}";
        let m = parse_module(src).unwrap();
        let h = hoist_rotations(&m, &CostModel::default());
        verify(&h).unwrap();
        let f = h.main().unwrap();
        assert_eq!(count_ops(f, |k| *k == OpKind::PrecomputeRot), 1);
        assert_eq!(count_ops(f, |k| matches!(k, OpKind::FastRotate { .. })), 3);
        // %t feeds one rotation: 60 + 50 >= 100, left alone
        assert_eq!(count_ops(f, |k| matches!(k, OpKind::Rotate { .. })), 1);
        let x = ones_inputs(&m);
        assert_eq!(eval(&h, &x).unwrap(), eval(&m, &x).unwrap());
        let none = parse_module("params { slots = 16 }\nfunc @main(%v: ct) -> ct {\n  return %v\n}").unwrap();
        assert_eq!(hoist_rotations(&none, &CostModel::default()), none);
    }

    #[test]
    fn cse_dedupes_plaintexts_only() {
        let src = "params { slots = 16 }
matrix @W [1, 2; 3, 4]
func @main(%v: ct) -> ct {
  %c1 = ckks.const {matrix = @W, diag = 1}
  %c2 = ckks.const {matrix = @W, diag = 1}
  %dead = ckks.const {value = 7}
  %k1 = kmrt.load_key 2
  %a = ckks.rotate %v, %k1 {index = 2}
  kmrt.clear_key %k1
  %k2 = kmrt.load_key 2
  %b = ckks.rotate %v, %k2 {index = 2}
  kmrt.clear_key %k2
  %x = ckks.mul_pt %a, %c1
  %y = ckks.mul_pt %b, %c2
  %s = ckks.add %x, %y
  return %s
}";
        let m = parse_module(src).unwrap();
        let c = cse(&m);
        verify(&c).unwrap();
        let f = c.main().unwrap();
        assert_eq!(count_ops(f, |k| matches!(k, OpKind::Const(_))), 1);
        assert_eq!(count_ops(f, |k| matches!(k, OpKind::LoadKey { .. })), 2);
        assert_eq!(count_ops(f, |k| matches!(k, OpKind::Rotate { .. })), 2);
        let x = ones_inputs(&m);
        assert_eq!(eval(&c, &x).unwrap(), eval(&m, &x).unwrap());
    }

    #[test]
    fn clears_follow_last_use() {
        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %a = ckks.add %v, %v
  %b = ckks.add %a, %v
  %c = ckks.add %b, %a
  return %c
}";
        let m = insert_clear_ops(&parse_module(src).unwrap());
        verify(&m).unwrap();
        let kinds: Vec<String> = m.main().unwrap().body.iter().map(|o| {
            let f = m.main().unwrap();
            match o.kind {
                OpKind::ClearCt => format!("clear %{}", f.value_name(o.operands[0])),
                _ => String::from(o.name()),
            }
        }).collect();
        assert_eq!(
            kinds,
            ["ckks.add", "ckks.add", "clear %v", "ckks.add", "clear %a", "clear %b", "return"]
        );
        // idempotent
        assert_eq!(insert_clear_ops(&m), m);
    }

    #[test]
    fn removal_rule() {
        let mut src = String::from("params { slots = 4, mult_depth = 30, d_boot = 14 }\nfunc @main(%x: ct) -> ct {\n");
        // bootstrap at level 20 (useless), then at level 5 (useful)
        let mut prev = String::from("%x");
        for i in 0..10 {
            src.push_str(&format!("  %a{i} = ckks.mul_ct {prev}, {prev}\n"));
            prev = format!("%a{i}");
        }
        src.push_str(&format!("  %b0 = ckks.bootstrap {prev}\n"));
        prev = String::from("%b0");
        for i in 0..11 {
            src.push_str(&format!("  %c{i} = ckks.mul_ct {prev}, {prev}\n"));
            prev = format!("%c{i}");
        }
        src.push_str(&format!("  %b1 = ckks.bootstrap {prev}\n  return %b1\n}}\n"));
        let m = parse_module(&src).unwrap();
        let x = ones_inputs(&m);
        let prof = profile_levels(&m, &x).unwrap();
        let r = bootstrap_removal(&m, &prof, &x).unwrap();
        assert_eq!(r.removed, vec![vec![10]]);
        assert_eq!(r.kept, 1);
        verify(&r.module).unwrap();
        assert_eq!(eval(&r.module, &x).unwrap()[0].slots(), eval(&m, &x).unwrap()[0].slots());

        let plain = parse_module("params { slots = 4 }\nfunc @main(%x: ct) -> ct {\n  return %x\n}").unwrap();
        let prof = profile_levels(&plain, &x).unwrap();
        assert_eq!(bootstrap_removal(&plain, &prof, &x).unwrap().module, plain);
    }
}
