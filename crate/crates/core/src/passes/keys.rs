use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::{map_main, rename_uses, try_map_main, PassError};
use crate::analysis::{bootstrap_key_indices, merge_candidates, merge_candidates_by};
use crate::ir::{op_path, Func, Module, Op, OpKind, Type};
use crate::runtime::CostModel;

/// How far apart a clear and the following same-index load may be and
/// still be merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeWindow {
    /// Ops strictly between the pair.
    Ops(u64),
    /// Cost-model time of the ops strictly between the pair.
    Time(u64),
}

impl Default for MergeWindow {
    fn default() -> Self {
        MergeWindow::Ops(64)
    }
}

impl fmt::Display for MergeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MergeWindow::Ops(w) => write!(f, "{w} ops"),
            MergeWindow::Time(w) => write!(f, "{w} time units"),
        }
    }
}

/// Brackets every rotation with its own `load_key` / `clear_key` pair and
/// wires the key into the rotation.
pub fn insert_key_mgmt(m: &Module) -> Result<Module, PassError> {
    try_map_main(m, |_, f| {
        let body = core::mem::take(&mut f.body);
        let mut path = Vec::new();
        f.body = bracket_block(f, body, &mut path)?;
        Ok(())
    })
}

fn bracket_block(f: &mut Func, ops: Vec<Op>, path: &mut Vec<usize>) -> Result<Vec<Op>, PassError> {
    let mut out = Vec::with_capacity(ops.len());
    for (pos, mut op) in ops.into_iter().enumerate() {
        path.push(pos);
        if let OpKind::ForLoop(l) = &mut op.kind {
            let body = core::mem::take(&mut l.body);
            l.body = bracket_block(f, body, path)?;
            out.push(op);
        } else if let (Some(index), 1) = (op.kind.rotation_index(), op.operands.len()) {
            let k = index.as_const().ok_or_else(|| PassError::DynamicIndex(alloc::format!("{}#{}", op.name(), op_path(path))))?;
            if k == 0 {
                out.push(op);
            } else {
                let k = k as u32;
                let key = f.new_value(Type::RotKey(k));
                out.push(Op::new(OpKind::LoadKey { index: k }, vec![], vec![key]));
                op.operands.push(key);
                out.push(op);
                out.push(Op::new(OpKind::ClearKey, vec![key], vec![]));
            }
        } else {
            out.push(op);
        }
        path.pop();
    }
    Ok(out)
}

/// Deletes same-index clear→load pairs within `window`, extending the
/// earlier key's live range to cover the later uses. Repeats until no
/// candidate is left. Returns the module and the number of merged pairs.
pub fn merge_rotation_keys(m: &Module, window: &MergeWindow, cm: &CostModel) -> (Module, usize) {
    let mut merged = 0;
    let out = map_main(m, |_, f| loop {
        let cands = match *window {
            MergeWindow::Ops(w) => merge_candidates(f, w),
            MergeWindow::Time(t) => merge_candidates_by(f, t, |op| cm.op_cost(&op.kind)),
        };
        if cands.is_empty() {
            break;
        }
        let mut drop = BTreeSet::new();
        let mut rename = BTreeMap::new();
        for c in &cands {
            let earlier = f.body[c.clear_pos].operands[0];
            let later = f.body[c.load_pos].results[0];
            rename.insert(later, earlier);
            drop.insert(c.clear_pos);
            drop.insert(c.load_pos);
        }
        merged += cands.len();
        let body = core::mem::take(&mut f.body);
        f.body = body.into_iter().enumerate().filter(|(i, _)| !drop.contains(i)).map(|(_, op)| op).collect();
        rename_uses(&mut f.body, &rename);
    });
    (out, merged)
}

/// Exposes the keys each bootstrap needs: loads of every bootstrap index
/// before it (ascending), passed as key operands, and clears after it.
pub fn bootstrap_key_mgmt(m: &Module) -> Module {
    let indices = bootstrap_key_indices(&m.params);
    map_main(m, |_, f| {
        let body = core::mem::take(&mut f.body);
        f.body = wrap_bootstraps(f, body, &indices);
    })
}

fn wrap_bootstraps(f: &mut Func, ops: Vec<Op>, indices: &BTreeSet<u32>) -> Vec<Op> {
    let mut out = Vec::with_capacity(ops.len());
    for mut op in ops {
        match &mut op.kind {
            OpKind::ForLoop(l) => {
                let body = core::mem::take(&mut l.body);
                l.body = wrap_bootstraps(f, body, indices);
                out.push(op);
            }
            OpKind::Bootstrap if op.operands.len() == 1 => {
                let keys: Vec<_> = indices
                    .iter()
                    .map(|&i| {
                        let k = f.new_value(Type::RotKey(i));
                        out.push(Op::new(OpKind::LoadKey { index: i }, vec![], vec![k]));
                        k
                    })
                    .collect();
                op.operands.extend(&keys);
                out.push(op);
                for k in keys {
                    out.push(Op::new(OpKind::ClearKey, vec![k], vec![]));
                }
            }
            _ => out.push(op),
        }
    }
    out
}

/// Replaces any existing prefetch prologue with one `prefetch_key` per
/// `load_key`, in program order.
pub fn place_prefetch_hints(m: &Module) -> Module {
    map_main(m, |_, f| {
        f.body.retain(|op| !matches!(op.kind, OpKind::PrefetchKey { .. }));
        let mut order = Vec::new();
        f.walk(&mut |op| {
            if let OpKind::LoadKey { index } = op.kind {
                order.push(index);
            }
        });
        let mut body: Vec<Op> =
            order.into_iter().map(|index| Op::new(OpKind::PrefetchKey { index }, vec![], vec![])).collect();
        body.append(&mut f.body);
        f.body = body;
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{clear_count, load_count};
    use crate::ir::{parse_module, print_module, verify};

    const TWO_ROTATES: &str = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %a = ckks.rotate %v {index = 5}
  %b = ckks.rotate %a {index = 3}
  return %b
}";

    #[test]
    fn lowering_shape() {
        let m = insert_key_mgmt(&parse_module(TWO_ROTATES).unwrap()).unwrap();
        verify(&m).unwrap();
        let text = print_module(&m);
        let ops: Vec<&str> = text.lines().skip(2).map(|l| l.trim()).collect();
        assert_eq!(
            ops,
            [
                "%1 = kmrt.load_key 5 : rk<5>",
                "%a = ckks.rotate %v, %1 {index = 5} : ct",
                "kmrt.clear_key %1",
                "%3 = kmrt.load_key 3 : rk<3>",
                "%b = ckks.rotate %a, %3 {index = 3} : ct",
                "kmrt.clear_key %3",
                "return %b",
                "}",
            ]
        );
    }

    #[test]
    fn merge_golden() {
        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %a = ckks.rotate %v {index = 4}
  %b = ckks.add %a, %a
  %c = ckks.rotate %b {index = 4}
  return %c
}";
        let m = insert_key_mgmt(&parse_module(src).unwrap()).unwrap();
        assert_eq!((load_count(m.main().unwrap()), clear_count(m.main().unwrap())), (2, 2));
        let (merged, n) = merge_rotation_keys(&m, &MergeWindow::default(), &CostModel::default());
        assert_eq!(n, 1);
        verify(&merged).unwrap();
        assert_eq!((load_count(merged.main().unwrap()), clear_count(merged.main().unwrap())), (1, 1));
        // distinct indices are left alone
        let m = insert_key_mgmt(&parse_module(TWO_ROTATES).unwrap()).unwrap();
        let (same, n) = merge_rotation_keys(&m, &MergeWindow::default(), &CostModel::default());
        assert_eq!((same, n), (m, 0));
    }

    #[test]
    fn bootstrap_wrapping_and_merge() {
        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %a = ckks.bootstrap %v
  %b = ckks.bootstrap %a
  return %b
}";
        let m = bootstrap_key_mgmt(&parse_module(src).unwrap());
        verify(&m).unwrap();
        assert_eq!(load_count(m.main().unwrap()), 14);
        let (merged, n) = merge_rotation_keys(&m, &MergeWindow::default(), &CostModel::default());
        assert_eq!(n, 7);
        assert_eq!((load_count(merged.main().unwrap()), clear_count(merged.main().unwrap())), (7, 7));
        verify(&merged).unwrap();
    }

    #[test]
    fn prefetch_prologue() {
        let m = place_prefetch_hints(&insert_key_mgmt(&parse_module(TWO_ROTATES).unwrap()).unwrap());
        let prologue: Vec<_> = m.main().unwrap().body.iter().take(2).map(|op| op.kind.clone()).collect();
        assert_eq!(prologue, vec![OpKind::PrefetchKey { index: 5 }, OpKind::PrefetchKey { index: 3 }]);
        // idempotent
        assert_eq!(place_prefetch_hints(&m), m);
        let none = parse_module("params { slots = 16 }\nfunc @main(%v: ct) -> ct {\n  return %v\n}").unwrap();
        assert_eq!(place_prefetch_hints(&none), none);
    }
}
