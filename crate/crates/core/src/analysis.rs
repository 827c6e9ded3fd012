//! Dataflow over verified functions: key live ranges, clear→load merge
//! candidates and key-index inventories.
//!
//! Positions are indices into the top-level op list of a function. A loop
//! occupies a single position; uses inside its body count at that position.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::ir::{canonical_index, CryptoParams, Func, Module, Op, OpKind, Type, ValueId};

/// Live range of one rotation-key value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyRange {
    pub value: ValueId,
    pub index: u32,
    pub def: usize,
    pub last_use: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyLiveness {
    pub values: Vec<KeyRange>,
    /// Disjoint, sorted closed intervals per key index. Overlapping ranges
    /// of distinct values with the same index are coalesced.
    pub intervals: BTreeMap<u32, Vec<(usize, usize)>>,
}

impl KeyLiveness {
    /// Whether `index` is live at position `pos`.
    pub fn covers(&self, index: u32, pos: usize) -> bool {
        self.intervals.get(&index).is_some_and(|iv| iv.iter().any(|&(a, b)| a <= pos && pos <= b))
    }
}

fn key_index(f: &Func, v: ValueId) -> Option<u32> {
    match f.values.get(v.index())?.ty {
        Type::RotKey(i) => Some(i),
        _ => None,
    }
}

pub fn key_liveness(f: &Func) -> KeyLiveness {
    let mut def: BTreeMap<ValueId, usize> = BTreeMap::new();
    let mut last: BTreeMap<ValueId, usize> = BTreeMap::new();
    for &a in &f.args {
        if key_index(f, a).is_some() {
            def.insert(a, 0);
            last.insert(a, 0);
        }
    }
    for (pos, op) in f.body.iter().enumerate() {
        op.for_each_use(&mut |v| {
            if let Some(l) = last.get_mut(&v) {
                *l = pos;
            }
        });
        op.for_each_def(&mut |v| {
            if key_index(f, v).is_some() {
                def.insert(v, pos);
                last.insert(v, pos);
            }
        });
    }
    let mut values: Vec<KeyRange> = def
        .iter()
        .map(|(&v, &d)| KeyRange { value: v, index: key_index(f, v).unwrap_or(0), def: d, last_use: last[&v] })
        .collect();
    values.sort_by_key(|r| (r.def, r.value));
    let mut intervals: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for r in &values {
        intervals.entry(r.index).or_default().push((r.def, r.last_use));
    }
    for list in intervals.values_mut() {
        list.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(list.len());
        for &(a, b) in list.iter() {
            match merged.last_mut() {
                Some(prev) if a <= prev.1 => prev.1 = prev.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        *list = merged;
    }
    KeyLiveness { values, intervals }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeCandidate {
    pub index: u32,
    pub clear_pos: usize,
    pub load_pos: usize,
    /// Distance under the metric used, e.g. ops strictly between the pair.
    pub distance: u64,
}

/// Same-index `clear_key` → next `load_key` pairs at most `window` ops apart.
pub fn merge_candidates(f: &Func, window: u64) -> Vec<MergeCandidate> {
    merge_candidates_by(f, window, |_| 1)
}

/// Like [`merge_candidates`], with the distance between a pair measured as
/// the sum of `weight` over the ops strictly between them.
pub fn merge_candidates_by(f: &Func, window: u64, weight: impl Fn(&Op) -> u64) -> Vec<MergeCandidate> {
    let ops = &f.body;
    let mut out = Vec::new();
    for (c, op) in ops.iter().enumerate() {
        if !matches!(op.kind, OpKind::ClearKey) {
            continue;
        }
        let Some(index) = op.operands.first().and_then(|&k| key_index(f, k)) else { continue };
        let mut distance = 0u64;
        for (p, next) in ops.iter().enumerate().skip(c + 1) {
            match &next.kind {
                OpKind::LoadKey { index: i } if *i == index => {
                    if distance <= window {
                        out.push(MergeCandidate { index, clear_pos: c, load_pos: p, distance });
                    }
                    break;
                }
                OpKind::ClearKey if next.operands.first().and_then(|&k| key_index(f, k)) == Some(index) => break,
                _ => {}
            }
            distance = distance.saturating_add(weight(next));
            if distance > window {
                break;
            }
        }
    }
    out
}

/// Default bootstrap rotation set: canonical `±2^i` for `2^i < slots`,
/// unless the parameters carry an explicit set.
pub fn bootstrap_key_indices(p: &CryptoParams) -> BTreeSet<u32> {
    if let Some(keys) = &p.boot_keys {
        return keys.clone();
    }
    let mut set = BTreeSet::new();
    let mut pow = 1i64;
    while pow < i64::from(p.slots) {
        set.insert(canonical_index(pow, p.slots));
        set.insert(canonical_index(-pow, p.slots));
        pow *= 2;
    }
    set.remove(&0);
    set
}

/// Keygen manifest: every key index the module can ask for.
///
/// Covers static and loop-enumerated rotation indices, the bootstrap set
/// when any bootstrap is present, and indices named by key-management ops.
pub fn rotation_index_set(m: &Module) -> BTreeSet<u32> {
    let mut set = BTreeSet::new();
    let mut has_bootstrap = false;
    for f in &m.funcs {
        collect_indices(&f.body, m.params.slots, &mut BTreeMap::new(), &mut set, &mut has_bootstrap);
    }
    if has_bootstrap {
        set.extend(bootstrap_key_indices(&m.params));
    }
    set.remove(&0);
    set
}

fn collect_indices(
    ops: &[Op],
    slots: u32,
    env: &mut BTreeMap<ValueId, i64>,
    set: &mut BTreeSet<u32>,
    has_bootstrap: &mut bool,
) {
    for op in ops {
        match &op.kind {
            OpKind::Rotate { index } | OpKind::FastRotate { index } => {
                if let Some(i) = index.substitute(env).as_const() {
                    set.insert(canonical_index(i, slots));
                }
            }
            OpKind::LoadKey { index } | OpKind::PrefetchKey { index } | OpKind::AssumeKey { index } => {
                set.insert(*index);
            }
            OpKind::Bootstrap => *has_bootstrap = true,
            OpKind::ForLoop(l) => {
                let dynamic = l.body.iter().any(|o| o.kind.rotation_index().is_some_and(|e| e.vars().next().is_some()) || o.as_loop().is_some());
                if dynamic {
                    for i in l.iterations() {
                        env.insert(l.iv, i);
                        collect_indices(&l.body, slots, env, set, has_bootstrap);
                    }
                    env.remove(&l.iv);
                } else if l.trip_count() > 0 {
                    collect_indices(&l.body, slots, env, set, has_bootstrap);
                }
            }
            _ => {}
        }
    }
}

/// Longest run of rotations along any def-use path, over every value
/// computed by `f`. Loops are followed through their carried values.
pub fn rotation_chain_depth(f: &Func) -> u32 {
    let mut depth = alloc::vec![0u32; f.values.len()];
    let mut max = 0;
    chain_block(&f.body, &mut depth, &mut max);
    max
}

fn chain_block(ops: &[Op], depth: &mut [u32], max: &mut u32) -> Vec<u32> {
    for op in ops {
        let inputs = op.operands.iter().map(|v| depth[v.index()]).max().unwrap_or(0);
        match &op.kind {
            OpKind::ForLoop(l) => {
                for (&a, &init) in l.iter_args.iter().zip(&op.operands) {
                    depth[a.index()] = depth[init.index()];
                }
                let mut out: Vec<u32> = l.iter_args.iter().map(|a| depth[a.index()]).collect();
                for _ in 0..l.trip_count() {
                    out = chain_block(&l.body, depth, max);
                    let mut changed = false;
                    for (&a, &d) in l.iter_args.iter().zip(&out) {
                        if d > depth[a.index()] {
                            depth[a.index()] = d;
                            changed = true;
                        }
                    }
                    if !changed {
                        break;
                    }
                }
                for (&r, &d) in op.results.iter().zip(&out) {
                    depth[r.index()] = d;
                }
            }
            OpKind::Yield => return op.operands.iter().map(|v| depth[v.index()]).collect(),
            kind => {
                let d = if kind.is_rotation() && !is_zero_rotation(kind) { inputs + 1 } else { inputs };
                for &r in &op.results {
                    depth[r.index()] = d;
                }
                *max = (*max).max(d);
            }
        }
    }
    Vec::new()
}

fn is_zero_rotation(kind: &OpKind) -> bool {
    kind.rotation_index().and_then(|e| e.as_const()) == Some(0)
}

/// Number of ops (recursively, loops counted once) matching `pred`.
pub fn count_ops(f: &Func, pred: impl Fn(&OpKind) -> bool) -> usize {
    let mut n = 0;
    f.walk(&mut |op| n += usize::from(pred(&op.kind)));
    n
}

pub fn load_count(f: &Func) -> usize {
    count_ops(f, |k| matches!(k, OpKind::LoadKey { .. }))
}

pub fn clear_count(f: &Func) -> usize {
    count_ops(f, |k| matches!(k, OpKind::ClearKey))
}
