use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use super::{map_main, try_map_main, PassError};
use crate::analysis::{bootstrap_key_indices, rotation_index_set};
use crate::ir::{op_path, Func, IndexExpr, Module, Op, OpKind, Type, ValueId};

/// Keeps every key of the module's index set resident for the whole run:
/// one prologue of loads, one epilogue of clears.
pub fn resident_baseline(m: &Module) -> Module {
    resident_with(m, &rotation_index_set(m))
}

fn resident_with(m: &Module, set: &BTreeSet<u32>) -> Module {
    map_main(m, |_, f| {
        let mut keys = BTreeMap::new();
        let mut prologue = Vec::with_capacity(set.len());
        for &i in set {
            let k = f.new_value(Type::RotKey(i));
            keys.insert(i, k);
            prologue.push(Op::new(OpKind::LoadKey { index: i }, vec![], vec![k]));
        }
        let body = core::mem::take(&mut f.body);
        let mut rename = BTreeMap::new();
        let mut body = strip_keys(body, &keys, &mut rename);
        let ret = match body.last() {
            Some(op) if op.kind == OpKind::Return => body.pop(),
            _ => None,
        };
        prologue.append(&mut body);
        for &k in keys.values() {
            prologue.push(Op::new(OpKind::ClearKey, vec![k], vec![]));
        }
        prologue.extend(ret);
        f.body = prologue;
    })
}

fn strip_keys(
    ops: Vec<Op>,
    keys: &BTreeMap<u32, ValueId>,
    rename: &mut BTreeMap<ValueId, ValueId>,
) -> Vec<Op> {
    let mut out = Vec::with_capacity(ops.len());
    for mut op in ops {
        match &mut op.kind {
            OpKind::LoadKey { index } | OpKind::AssumeKey { index } => {
                if let Some(&k) = keys.get(index) {
                    rename.insert(op.results[0], k);
                }
                continue;
            }
            OpKind::UseKey => {
                rename.insert(op.results[0], super::resolve(rename, op.operands[0]));
                continue;
            }
            OpKind::ClearKey | OpKind::PrefetchKey { .. } => continue,
            OpKind::ForLoop(l) => {
                let body = core::mem::take(&mut l.body);
                l.body = strip_keys(body, keys, rename);
            }
            _ => {}
        }
        op.map_uses(&mut |v| super::resolve(rename, v));
        if let Some(k) = op.kind.rotation_index().and_then(IndexExpr::as_const) {
            if op.operands.len() == 1 && k != 0 {
                if let Some(&key) = keys.get(&(k as u32)) {
                    op.operands.push(key);
                }
            }
        }
        out.push(op);
    }
    out
}

/// Rewrites every rotation by `k` into a chain of rotations by the set bits
/// of `k`, most significant first. Existing key operands are dropped.
/// Returns the module and the number of rotations added.
pub fn pow2_chain(m: &Module) -> Result<(Module, u64), PassError> {
    let mut added = 0;
    let out = try_map_main(m, |_, f| {
        let body = core::mem::take(&mut f.body);
        let mut path = Vec::new();
        f.body = chain_block(f, body, &mut path, &mut added)?;
        Ok(())
    })?;
    Ok((out, added))
}

fn chain_block(f: &mut Func, ops: Vec<Op>, path: &mut Vec<usize>, added: &mut u64) -> Result<Vec<Op>, PassError> {
    let mut out = Vec::with_capacity(ops.len());
    for (pos, mut op) in ops.into_iter().enumerate() {
        path.push(pos);
        if let OpKind::ForLoop(l) = &mut op.kind {
            let body = core::mem::take(&mut l.body);
            l.body = chain_block(f, body, path, added)?;
            out.push(op);
        } else if let Some(index) = op.kind.rotation_index() {
            let k = index
                .as_const()
                .ok_or_else(|| PassError::DynamicIndex(alloc::format!("{}#{}", op.name(), op_path(path))))?;
            let parts = pow2_parts(k as u32);
            if parts.len() <= 1 {
                op.operands.truncate(1);
                out.push(op);
            } else {
                *added += parts.len() as u64 - 1;
                let fast = matches!(op.kind, OpKind::FastRotate { .. });
                let mut cur = op.operands[0];
                let last = parts.len() - 1;
                for (i, &p) in parts.iter().enumerate() {
                    let index = IndexExpr::constant(i64::from(p));
                    let kind = if fast && i == 0 { OpKind::FastRotate { index } } else { OpKind::Rotate { index } };
                    let r = if i == last { op.results[0] } else { f.new_value(Type::Ct) };
                    out.push(Op::new(kind, vec![cur], vec![r]));
                    cur = r;
                }
            }
        } else {
            out.push(op);
        }
        path.pop();
    }
    Ok(out)
}

/// Set bits of `k`, most significant first.
pub(crate) fn pow2_parts(k: u32) -> Vec<u32> {
    (0..32).rev().map(|b| 1u32 << b).filter(|&p| k & p != 0).collect()
}

/// Powers-of-two chaining with every power below `slots` (plus the
/// bootstrap set, if the module bootstraps) resident for the whole run.
/// Returns the module and the number of rotations added by chaining.
pub fn pow2_baseline(m: &Module) -> Result<(Module, u64), PassError> {
    let (chained, added) = pow2_chain(m)?;
    let mut set: BTreeSet<u32> = (0..32).map(|b| 1u32 << b).take_while(|&p| p < m.params.slots).collect();
    let mut has_bootstrap = false;
    if let Some(f) = chained.main() {
        f.walk(&mut |op| has_bootstrap |= op.kind == OpKind::Bootstrap);
    }
    if has_bootstrap {
        set.extend(bootstrap_key_indices(&m.params));
    }
    Ok((resident_with(&chained, &set), added))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{count_ops, rotation_index_set};
    use crate::interp::{eval, ones_inputs, Inputs};
    use crate::ir::{parse_module, verify};
    use crate::passes::insert_key_mgmt;

    #[test]
    fn binary_expansion() {
        assert_eq!(pow2_parts(11), vec![8, 2, 1]);
        assert_eq!(pow2_parts(8), vec![8]);
    }

    const SRC: &str = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %a = ckks.rotate %v {index = 11}
  %b = ckks.rotate %a {index = 8}
  %c = ckks.add %a, %b
  return %c
}";

    #[test]
    fn chains_preserve_values() {
        let m = parse_module(SRC).unwrap();
        let (p, added) = pow2_baseline(&m).unwrap();
        verify(&p).unwrap();
        assert_eq!(added, 2);
        assert_eq!(count_ops(p.main().unwrap(), |k| matches!(k, OpKind::Rotate { .. })), 4);
        assert_eq!(rotation_index_set(&p), BTreeSet::from([1, 2, 4, 8]));
        let x = Inputs::from([("v".into(), (0..16).collect())]);
        assert_eq!(eval(&p, &x).unwrap(), eval(&m, &x).unwrap());
    }

    #[test]
    fn resident_rewires_managed_keys() {
        let m = insert_key_mgmt(&parse_module(SRC).unwrap()).unwrap();
        let r = resident_baseline(&m);
        verify(&r).unwrap();
        let body = &r.main().unwrap().body;
        assert!(matches!(body[0].kind, OpKind::LoadKey { index: 8 }));
        assert!(matches!(body[1].kind, OpKind::LoadKey { index: 11 }));
        assert_eq!(count_ops(r.main().unwrap(), |k| matches!(k, OpKind::LoadKey { .. })), 2);
        let n = body.len();
        assert_eq!(body[n - 1].kind, OpKind::Return);
        assert_eq!(body[n - 2].kind, OpKind::ClearKey);
        let x = ones_inputs(&m);
        assert_eq!(eval(&r, &x).unwrap(), eval(&m, &x).unwrap());

        let empty = parse_module("params { slots = 16 }\nfunc @main(%v: ct) -> ct {\n  return %v\n}").unwrap();
        assert_eq!(resident_baseline(&empty), empty);
    }
}
