//! Discrete-event model of key loading and op execution.
//!
//! Two agents share simulated time: the executor runs ops in program order
//! and the loader (balanced mode only) works through the prefetch queue.
//! The loader is advanced lazily up to the executor's clock, so events are
//! produced in causal order; at equal times loader events come first unless
//! caused by the executor event at that time.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use crate::analysis::{bootstrap_key_indices, rotation_index_set};
use crate::interp::{eval_with, EvalError, Inputs, Observer, Step, Value};
use crate::ir::{CryptoParams, Module, OpKind, Type};

/// Bytes of one rotation key at `(ring_dim_log2, mult_depth)`:
/// 130 MB at `(16, 30)`, linear in ring dimension and in `depth + 1`.
pub fn key_size_bytes(p: &CryptoParams) -> u64 {
    // rounded at 2^16 so that doubling the ring is exact
    let at16 = 130_000_000u128 * u128::from(p.mult_depth + 1) / 31;
    let scaled = if p.ring_dim_log2 >= 16 { at16 << (p.ring_dim_log2 - 16) } else { at16 >> (16 - p.ring_dim_log2) };
    scaled as u64
}

/// Bytes of a ciphertext at `level`: two polynomials of `2^ring_dim_log2`
/// coefficients with one 8-byte limb per remaining level.
pub fn ct_size_bytes(p: &CryptoParams, level: u32) -> u64 {
    2 * (1u64 << p.ring_dim_log2) * u64::from(level + 1) * 8
}

/// Time units per op and key-load bandwidth.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CostModel {
    pub add: u64,
    pub mul_pt: u64,
    pub mul_ct: u64,
    pub rotate: u64,
    pub precompute_rot: u64,
    pub fast_rotate: u64,
    pub bootstrap: u64,
    /// Bytes transferred per time unit while loading a key.
    pub load_bandwidth: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            add: 1,
            mul_pt: 10,
            mul_ct: 15,
            rotate: 100,
            precompute_rot: 60,
            fast_rotate: 50,
            bootstrap: 10_000,
            // 2 GB per 1000 time units
            load_bandwidth: 2_000_000,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.load_bandwidth == 0 {
            return Err("load_bandwidth must be positive");
        }
        if self.fast_rotate > self.rotate {
            return Err("fast_rotate must not cost more than rotate");
        }
        Ok(())
    }

    /// Execution time of one op; key management and bookkeeping are free.
    pub fn op_cost(&self, kind: &OpKind) -> u64 {
        match kind {
            OpKind::Add => self.add,
            OpKind::MulPt => self.mul_pt,
            OpKind::MulCt => self.mul_ct,
            OpKind::Rotate { index } if index.as_const() == Some(0) => 0,
            OpKind::Rotate { .. } => self.rotate,
            OpKind::PrecomputeRot => self.precompute_rot,
            OpKind::FastRotate { .. } => self.fast_rotate,
            OpKind::Bootstrap => self.bootstrap,
            _ => 0,
        }
    }

    /// Time to bring one key of `bytes` into memory.
    pub fn load_time(&self, bytes: u64) -> u64 {
        bytes.div_ceil(self.load_bandwidth.max(1))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    /// Loads block the executor; prefetch hints are ignored.
    #[default]
    LowMemory,
    /// A loader agent works through prefetch hints alongside execution.
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuntimeConfig {
    pub mode: Mode,
    /// Maximum prefetched keys (loading or resident) in balanced mode;
    /// `None` is unbounded.
    pub budget: Option<u64>,
    pub cost: CostModel,
    /// Let a `load_key` the loader has not reached load the key itself.
    /// Without this, such a load waits for the loader and may deadlock.
    pub demand_loads: bool,
    /// Indices available on disk; defaults to the module's index set.
    pub manifest: Option<BTreeSet<u32>>,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self { mode: Mode::LowMemory, budget: None, cost: CostModel::default(), demand_loads: true, manifest: None }
    }
}

impl RuntimeConfig {
    pub fn low_memory() -> Self {
        Self::default()
    }

    pub fn balanced(budget: Option<u64>) -> Self {
        Self { mode: Mode::Balanced, budget, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EventKind {
    LoadStart,
    LoadDone,
    Clear,
    OpExec,
    Prefetch,
    CtAlloc,
    CtFree,
    BudgetWarning,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Agent {
    Executor,
    Loader,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Event {
    pub t: u64,
    pub kind: EventKind,
    pub agent: Agent,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub index: Option<u32>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub op: Option<String>,
    /// Start time of an `op_exec` (`t` is its completion).
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub start: Option<u64>,
    /// Bytes allocated or freed.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub bytes: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MemSample {
    pub t: u64,
    pub key_bytes: u64,
    pub ct_bytes: u64,
}

/// Events in time order plus one memory sample after each event.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExecTrace {
    pub events: Vec<Event>,
    pub samples: Vec<MemSample>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Peak {
    pub key: u64,
    pub ct: u64,
    pub total: u64,
}

pub fn peak_memory(t: &ExecTrace) -> Peak {
    t.samples.iter().fold(Peak::default(), |p, s| Peak {
        key: p.key.max(s.key_bytes),
        ct: p.ct.max(s.ct_bytes),
        total: p.total.max(s.key_bytes + s.ct_bytes),
    })
}

pub fn makespan(t: &ExecTrace) -> u64 {
    t.events.iter().map(|e| e.t).max().unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("missing key: index {index} is not in the key manifest ({op})")]
    MissingKey { index: u32, op: String },
    #[error("key not loaded: rotation key {index} is not resident at {op}")]
    KeyNotLoaded { index: u32, op: String },
    #[error("deadlock at {op}: waiting for key {index}, loader blocked")]
    Deadlock { index: u32, op: String },
    #[error("balanced mode needs a budget of at least 1")]
    ZeroBudget,
    #[error("invalid cost model: {0}")]
    CostModel(&'static str),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Index of the conjugation key in traces.
pub const CONJ_INDEX: u32 = 0;

struct KeyEntry {
    ready: u64,
    refs: u32,
    claimed: bool,
}

struct Sim<'m> {
    mode: Mode,
    budget: u64,
    demand_loads: bool,
    cost: &'m CostModel,
    params: &'m CryptoParams,
    key_bytes: u64,
    load_time: u64,
    on_disk: BTreeSet<u32>,
    memory: BTreeMap<u32, KeyEntry>,
    queue: VecDeque<u32>,
    loader_t: u64,
    now: u64,
    live_cts: BTreeMap<u32, u64>,
    events: Vec<Event>,
}

/// Runs `@main` under the simulated key store. Outputs are those of
/// [`crate::interp::eval`]; the trace records every load, clear and op.
///
/// Ciphertext memory is tracked per SSA value; values redefined by loop
/// iterations replace their previous allocation.
pub fn execute(m: &Module, inputs: &Inputs, cfg: &RuntimeConfig) -> Result<(Vec<Value>, ExecTrace), RuntimeError> {
    cfg.cost.validate().map_err(RuntimeError::CostModel)?;
    if cfg.mode == Mode::Balanced && cfg.budget == Some(0) {
        return Err(RuntimeError::ZeroBudget);
    }
    let key_bytes = key_size_bytes(&m.params);
    let mut sim = Sim {
        mode: cfg.mode,
        budget: cfg.budget.unwrap_or(u64::MAX),
        demand_loads: cfg.demand_loads,
        cost: &cfg.cost,
        params: &m.params,
        key_bytes,
        load_time: cfg.cost.load_time(key_bytes),
        on_disk: cfg.manifest.clone().unwrap_or_else(|| rotation_index_set(m)),
        memory: BTreeMap::new(),
        queue: VecDeque::new(),
        loader_t: 0,
        now: 0,
        live_cts: BTreeMap::new(),
        events: Vec::new(),
    };
    if let Some(f) = m.main() {
        let mut boots = false;
        f.walk(&mut |op| boots |= op.kind == OpKind::Bootstrap);
        if m.params.conj_key && boots {
            sim.memory.insert(CONJ_INDEX, KeyEntry { ready: 0, refs: 1, claimed: true });
            sim.push(Agent::Executor, EventKind::LoadStart, 0, Some(CONJ_INDEX), Some(key_bytes));
            sim.push(Agent::Executor, EventKind::LoadDone, 0, Some(CONJ_INDEX), None);
        }
        for &a in &f.args {
            if f.ty(a) == Type::Ct {
                sim.alloc_ct(a.0, m.params.mult_depth, None);
            }
        }
    }
    let outputs = eval_with(m, inputs, &mut sim)?;
    let trace = sim.finish();
    Ok((outputs, trace))
}

impl Sim<'_> {
    fn push(&mut self, agent: Agent, kind: EventKind, t: u64, index: Option<u32>, bytes: Option<u64>) {
        self.events.push(Event { t, kind, agent, index, op: None, start: None, bytes });
    }

    fn alloc_ct(&mut self, v: u32, level: u32, op: Option<String>) {
        let bytes = ct_size_bytes(self.params, level);
        if let Some(old) = self.live_cts.insert(v, bytes) {
            self.free_ct_bytes(old, op.clone());
        }
        self.events.push(Event {
            t: self.now,
            kind: EventKind::CtAlloc,
            agent: Agent::Executor,
            index: None,
            op,
            start: None,
            bytes: Some(bytes),
        });
    }

    fn free_ct_bytes(&mut self, bytes: u64, op: Option<String>) {
        self.events.push(Event {
            t: self.now,
            kind: EventKind::CtFree,
            agent: Agent::Executor,
            index: None,
            op,
            start: None,
            bytes: Some(bytes),
        });
    }

    /// Keys counted against the budget.
    fn budgeted(&self) -> u64 {
        self.memory.keys().filter(|&&i| i != CONJ_INDEX).count() as u64
    }

    /// Starts the next queued load if the loader may do so by `until`.
    fn loader_step(&mut self, until: u64) -> bool {
        let Some(&head) = self.queue.front() else {
            return false;
        };
        if self.loader_t > until {
            return false;
        }
        if self.memory.contains_key(&head) || self.budgeted() >= self.budget {
            // blocked: only an executor clear can release it
            self.loader_t = self.loader_t.max(until.min(self.now));
            return false;
        }
        if !self.on_disk.contains(&head) {
            // hint for a key that does not exist; the load_key reports it
            self.queue.pop_front();
            return true;
        }
        self.queue.pop_front();
        let start = self.loader_t;
        let ready = start + self.load_time;
        self.memory.insert(head, KeyEntry { ready, refs: 0, claimed: false });
        self.push(Agent::Loader, EventKind::LoadStart, start, Some(head), Some(self.key_bytes));
        self.push(Agent::Loader, EventKind::LoadDone, ready, Some(head), None);
        self.loader_t = ready;
        true
    }

    fn advance_loader(&mut self, until: u64) {
        if self.mode == Mode::Balanced {
            while self.loader_step(until) {}
        }
    }

    fn drop_hint(&mut self, index: u32) {
        if let Some(p) = self.queue.iter().position(|&i| i == index) {
            self.queue.remove(p);
        }
    }

    fn load_key(&mut self, index: u32, op: &str) -> Result<(), RuntimeError> {
        if !self.on_disk.contains(&index) {
            return Err(RuntimeError::MissingKey { index, op: op.into() });
        }
        if let Some(e) = self.memory.get_mut(&index) {
            if e.claimed {
                e.refs += 1;
                let ready = e.ready;
                self.drop_hint(index);
                self.now = self.now.max(ready);
                return Ok(());
            }
            e.claimed = true;
            e.refs = 1;
            let ready = e.ready;
            self.advance_loader(ready);
            self.now = self.now.max(ready);
            return Ok(());
        }
        if self.mode == Mode::Balanced && !self.demand_loads && self.queue.contains(&index) {
            while !self.memory.contains_key(&index) {
                if !self.loader_step(u64::MAX) {
                    return Err(RuntimeError::Deadlock { index, op: op.into() });
                }
            }
            return self.load_key(index, op);
        }
        if self.mode == Mode::Balanced && !self.demand_loads {
            return Err(RuntimeError::Deadlock { index, op: op.into() });
        }
        self.drop_hint(index);
        if self.mode == Mode::Balanced && self.budgeted() >= self.budget {
            self.events.push(Event {
                t: self.now,
                kind: EventKind::BudgetWarning,
                agent: Agent::Executor,
                index: Some(index),
                op: Some(op.into()),
                start: None,
                bytes: None,
            });
        }
        let ready = self.now + self.load_time;
        self.memory.insert(index, KeyEntry { ready, refs: 1, claimed: true });
        self.push(Agent::Executor, EventKind::LoadStart, self.now, Some(index), Some(self.key_bytes));
        self.push(Agent::Executor, EventKind::LoadDone, ready, Some(index), None);
        self.advance_loader(ready);
        self.now = ready;
        Ok(())
    }

    fn clear_key(&mut self, index: u32) {
        let freed = match self.memory.get_mut(&index) {
            Some(e) if e.refs > 1 => {
                e.refs -= 1;
                0
            }
            Some(_) => {
                self.memory.remove(&index);
                self.key_bytes
            }
            None => 0,
        };
        self.push(Agent::Executor, EventKind::Clear, self.now, Some(index), Some(freed));
        if freed > 0 && self.mode == Mode::Balanced {
            self.loader_t = self.loader_t.max(self.now);
            self.advance_loader(self.now);
        }
    }

    fn require(&self, index: u32, op: &str) -> Result<(), RuntimeError> {
        match self.memory.get(&index) {
            Some(e) if e.ready <= self.now => Ok(()),
            _ => Err(RuntimeError::KeyNotLoaded { index, op: op.into() }),
        }
    }

    fn finish(self) -> ExecTrace {
        let mut events = self.events;
        // stable: equal times keep generation order
        events.sort_by_key(|e| e.t);
        let (mut key, mut ct) = (0u64, 0u64);
        let samples = events
            .iter()
            .map(|e| {
                let b = e.bytes.unwrap_or(0);
                match e.kind {
                    EventKind::LoadStart => key += b,
                    EventKind::Clear => key -= b,
                    EventKind::CtAlloc => ct += b,
                    EventKind::CtFree => ct -= b,
                    _ => {}
                }
                MemSample { t: e.t, key_bytes: key, ct_bytes: ct }
            })
            .collect();
        ExecTrace { events, samples }
    }
}

impl Observer for Sim<'_> {
    type Error = RuntimeError;

    fn before(&mut self, step: &Step<'_>) -> Result<(), RuntimeError> {
        self.advance_loader(self.now);
        match &step.op.kind {
            OpKind::LoadKey { index } => self.load_key(*index, &step.label())?,
            OpKind::PrefetchKey { index } if self.mode == Mode::Balanced => {
                self.push(Agent::Executor, EventKind::Prefetch, self.now, Some(*index), None);
                if self.queue.is_empty() {
                    self.loader_t = self.loader_t.max(self.now);
                }
                self.queue.push_back(*index);
                self.advance_loader(self.now);
            }
            OpKind::ClearKey => {
                if let Some(Value::Key(i)) = step.operands.first() {
                    self.clear_key(*i);
                }
            }
            OpKind::Rotate { .. } | OpKind::FastRotate { .. } => {
                if let Some(k) = step.rotation.filter(|&k| k != 0) {
                    self.require(k, &step.label())?;
                }
            }
            OpKind::Bootstrap => {
                let keys: Vec<u32> = step
                    .operands
                    .iter()
                    .filter_map(|v| if let Value::Key(i) = v { Some(*i) } else { None })
                    .collect();
                let label = step.label();
                if keys.is_empty() {
                    for i in bootstrap_key_indices(self.params) {
                        self.require(i, &label)?;
                    }
                } else {
                    for i in keys {
                        self.require(i, &label)?;
                    }
                }
                if self.params.conj_key {
                    self.require(CONJ_INDEX, &label)?;
                }
            }
            OpKind::ClearCt => {
                if let Some(bytes) = step.op.operands.first().and_then(|v| self.live_cts.remove(&v.0)) {
                    self.free_ct_bytes(bytes, Some(step.label()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn after(&mut self, step: &Step<'_>, results: &[Value]) -> Result<(), RuntimeError> {
        let kind = &step.op.kind;
        if kind.is_kmrt() || matches!(kind, OpKind::ClearCt | OpKind::Yield | OpKind::Return) {
            return Ok(());
        }
        let start = self.now;
        let end = start + self.cost.op_cost(kind);
        self.advance_loader(end);
        self.now = end;
        let label = step.label();
        self.events.push(Event {
            t: end,
            kind: EventKind::OpExec,
            agent: Agent::Executor,
            index: step.rotation,
            op: Some(label.clone()),
            start: Some(start),
            bytes: None,
        });
        for (r, v) in step.op.results.iter().zip(results) {
            if let Value::Ct(c) = v {
                self.alloc_ct(r.0, c.level, Some(label.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_sizes() {
        let p = CryptoParams::default();
        assert_eq!(key_size_bytes(&p), 130_000_000);
        let p17 = CryptoParams { ring_dim_log2: 17, ..p.clone() };
        assert_eq!(key_size_bytes(&p17), 2 * key_size_bytes(&p));
        let d40 = CryptoParams { mult_depth: 40, ..p.clone() };
        assert_eq!(key_size_bytes(&CryptoParams { ring_dim_log2: 17, ..d40.clone() }), 2 * key_size_bytes(&d40));
        // 117 resident keys ≈ 15.2 GB
        assert_eq!(117 * key_size_bytes(&p), 15_210_000_000);
    }

    #[test]
    fn default_costs() {
        let cm = CostModel::default();
        assert!(cm.validate().is_ok());
        assert_eq!(cm.load_time(130_000_000), 65);
        assert_eq!(cm.op_cost(&OpKind::LoadKey { index: 3 }), 0);
    }

    use crate::interp::eval;
    use crate::ir::parse_module;
    use crate::passes::{run_pipeline, PipelineConfig};
    use proptest::prelude::*;

    const KEY: u64 = 130_000_000;

    fn three_keys() -> Module {
        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  %a = ckks.rotate %v {index = 1}
  %b = ckks.rotate %a {index = 2}
  %c = ckks.rotate %b {index = 3}
  return %c
}";
        run_pipeline(&parse_module(src).unwrap(), &PipelineConfig::default()).unwrap().module
    }

    fn input() -> Inputs {
        Inputs::from([("v".into(), (0..16).collect())])
    }

    #[test]
    fn empty_trace() {
        let t = ExecTrace::default();
        assert_eq!(peak_memory(&t), Peak::default());
        assert_eq!(makespan(&t), 0);
    }

    #[test]
    fn low_memory_holds_one_key() {
        let m = three_keys();
        let (out, t) = execute(&m, &input(), &RuntimeConfig::low_memory()).unwrap();
        assert_eq!(out, eval(&m, &input()).unwrap());
        assert_eq!(peak_memory(&t).key, KEY);
        // three blocking loads of 65 plus three rotations of 100
        assert_eq!(makespan(&t), 3 * 65 + 3 * 100);
        assert_eq!(t.samples.len(), t.events.len());
        assert_eq!(t.samples.last().unwrap().key_bytes, 0);
    }

    #[test]
    fn balanced_overlaps_loads() {
        let m = three_keys();
        let (_, low) = execute(&m, &input(), &RuntimeConfig::low_memory()).unwrap();
        let (out, bal) = execute(&m, &input(), &RuntimeConfig::balanced(Some(2))).unwrap();
        assert_eq!(out, eval(&m, &input()).unwrap());
        assert_eq!(peak_memory(&bal).key, 2 * KEY);
        assert!(makespan(&bal) <= makespan(&low));
        // only the first load is exposed
        assert_eq!(makespan(&bal), 65 + 3 * 100);
        assert!(bal.events.iter().all(|e| e.kind != EventKind::BudgetWarning));
    }

    #[test]
    fn op_costs_add_up() {
        let src = "params { slots = 4 }
func @main(%v: ct, %p: pt) -> ct {
  %a = ckks.add %v, %v
  %b = ckks.mul_pt %a, %p
  return %b
}";
        let m = parse_module(src).unwrap();
        let x = Inputs::from([("v".into(), vec![1, 2]), ("p".into(), vec![3])]);
        let (_, t) = execute(&m, &x, &RuntimeConfig::low_memory()).unwrap();
        assert_eq!(makespan(&t), 11);
        assert_eq!(peak_memory(&t).key, 0);
        // input, a and b live at the end: nothing was cleared
        let ct = ct_size_bytes(&m.params, 30);
        assert_eq!(t.samples.last().unwrap().ct_bytes, 2 * ct + ct_size_bytes(&m.params, 29));
    }

    #[test]
    fn uncleared_load_stays_resident() {
        let m = parse_module("params { slots = 8 }\nfunc @main(%v: ct) -> ct {\n  %k = kmrt.load_key 3 : rk<3>\n  return %v\n}")
            .unwrap();
        let (_, t) = execute(&m, &Inputs::from([("v".into(), vec![])]), &RuntimeConfig::low_memory()).unwrap();
        assert_eq!(peak_memory(&t).key, KEY);
        assert_eq!(t.samples.last().unwrap().key_bytes, KEY);
    }

    #[test]
    fn errors() {
        let m = three_keys();
        let none = RuntimeConfig { manifest: Some(BTreeSet::new()), ..RuntimeConfig::low_memory() };
        assert!(matches!(execute(&m, &input(), &none), Err(RuntimeError::MissingKey { index: 1, .. })));
        assert_eq!(execute(&m, &input(), &RuntimeConfig::balanced(Some(0))).unwrap_err(), RuntimeError::ZeroBudget);

        let raw = parse_module("params { slots = 16 }\nfunc @main(%v: ct) -> ct {\n  %a = ckks.rotate %v {index = 1}\n  return %a\n}")
            .unwrap();
        assert!(matches!(
            execute(&raw, &input(), &RuntimeConfig::low_memory()),
            Err(RuntimeError::KeyNotLoaded { index: 1, .. })
        ));
    }

    #[test]
    fn strict_loader_deadlocks() {
        // the hint order disagrees with the load order and the budget is 1
        let src = "params { slots = 16 }
func @main(%v: ct) -> ct {
  kmrt.prefetch_key 5
  kmrt.prefetch_key 3
  %k3 = kmrt.load_key 3 : rk<3>
  %a = ckks.rotate %v, %k3 {index = 3}
  kmrt.clear_key %k3
  %k5 = kmrt.load_key 5 : rk<5>
  %b = ckks.rotate %a, %k5 {index = 5}
  kmrt.clear_key %k5
  return %b
}";
        let m = parse_module(src).unwrap();
        let strict = RuntimeConfig { demand_loads: false, ..RuntimeConfig::balanced(Some(1)) };
        assert!(matches!(execute(&m, &input(), &strict), Err(RuntimeError::Deadlock { index: 3, .. })));
        // with demand loads the same program completes, over budget by one
        let (out, t) = execute(&m, &input(), &RuntimeConfig::balanced(Some(1))).unwrap();
        assert_eq!(out, eval(&m, &input()).unwrap());
        assert!(t.events.iter().any(|e| e.kind == EventKind::BudgetWarning));
        assert_eq!(peak_memory(&t).key, 2 * KEY);
    }

    #[test]
    fn conjugation_key_is_loaded_for_bootstraps() {
        let src = "params { slots = 8, conj_key = 1 }
func @main(%v: ct) -> ct {
  %a = ckks.bootstrap %v
  return %a
}";
        let m = run_pipeline(&parse_module(src).unwrap(), &PipelineConfig::keymem(false, false)).unwrap().module;
        let x = Inputs::from([("v".into(), vec![1])]);
        let (_, t) = execute(&m, &x, &RuntimeConfig::balanced(Some(2))).unwrap();
        assert_eq!(t.events[0].index, Some(CONJ_INDEX));
        // five bootstrap keys {1, 2, 4, 6, 7} live together, plus conjugation
        assert_eq!(peak_memory(&t).key, 6 * KEY);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn modes_agree_and_balanced_is_faster(rots in prop::collection::vec(0u32..16, 0..12), budget in 1u64..5) {
            let mut src = String::from("params { slots = 16 }\nfunc @main(%v0: ct) -> ct {\n");
            for (i, k) in rots.iter().enumerate() {
                src += &alloc::format!("  %v{} = ckks.rotate %v{} {{index = {}}}\n", i + 1, i, k);
            }
            src += &alloc::format!("  return %v{}\n}}", rots.len());
            let m = run_pipeline(&parse_module(&src).unwrap(), &PipelineConfig::default()).unwrap().module;
            let x = Inputs::from([("v0".into(), (0..16).collect())]);
            let want = eval(&m, &x).unwrap();
            let (lo, tl) = execute(&m, &x, &RuntimeConfig::low_memory()).unwrap();
            let (ba, tb) = execute(&m, &x, &RuntimeConfig::balanced(Some(budget))).unwrap();
            let (un, tu) = execute(&m, &x, &RuntimeConfig::balanced(None)).unwrap();
            prop_assert_eq!(&lo, &want);
            prop_assert_eq!(&ba, &want);
            prop_assert_eq!(&un, &want);
            prop_assert!(makespan(&tb) <= makespan(&tl));
            prop_assert!(makespan(&tu) <= makespan(&tb));
            for t in [&tl, &tb, &tu] {
                // conservation and full release
                let last = t.samples.last().map_or(0, |s| s.key_bytes);
                prop_assert_eq!(last, 0);
                prop_assert!(t.samples.iter().all(|s| s.key_bytes % KEY == 0));
                prop_assert!(t.events.windows(2).all(|w| w[0].t <= w[1].t));
            }
            // over budget only through flagged demand loads
            let warned = tb.events.iter().any(|e| e.kind == EventKind::BudgetWarning);
            prop_assert!(warned || peak_memory(&tb).key <= budget * KEY);
            prop_assert!(peak_memory(&tb).key <= budget * KEY + peak_memory(&tl).key);
        }
    }
}
