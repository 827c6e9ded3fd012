//! Module-to-module rewrites and the pass manager.
//!
//! Every pass preserves `interp::eval` results exactly (bootstrap removal
//! may raise levels) and leaves the module verifiable.

mod baseline;
mod keys;
mod lower;
mod opt;
mod unroll;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

use crate::interp::{EvalError, Inputs};
use crate::ir::{verify, Diagnostic, Func, Module, Op, OpKind, ValueId};
use crate::runtime::CostModel;

pub use baseline::{pow2_baseline, pow2_chain, resident_baseline};
pub use keys::{bootstrap_key_mgmt, insert_key_mgmt, merge_rotation_keys, place_prefetch_hints, MergeWindow};
pub use lower::{bsgs_decompose, bsgs_giant_step, lower_linear_transform};
pub use opt::{bootstrap_removal, cse, hoist_rotations, insert_clear_ops, BootstrapRemoval};
pub use unroll::unroll_loops;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PassError {
    #[error("matrix @{0} is not square")]
    NonSquare(String),
    #[error("matrix @{matrix} is {rows}x{rows}, larger than {slots} slots")]
    Oversized { matrix: String, rows: usize, slots: u32 },
    #[error("{0}: rotation index is not static; unroll loops first")]
    DynamicIndex(String),
    #[error("{0}")]
    Eval(#[from] EvalError),
    #[error("module does not verify after `{pass}`: {}", .diagnostics.first().map(|d| format!("{d}")).unwrap_or_default())]
    Verify { pass: &'static str, diagnostics: Vec<Diagnostic> },
    #[error("invalid pipeline: {0}")]
    Order(String),
    #[error("unknown pass `{0}`")]
    UnknownPass(String),
}

/// One pipeline stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pass {
    LowerLinearTransform,
    BsgsDecompose,
    UnrollLoops,
    InsertKeyMgmt,
    MergeRotationKeys,
    HoistRotations,
    BootstrapRemoval,
    BootstrapKeyMgmt,
    Cse,
    InsertClearOps,
    PlacePrefetchHints,
    Pow2Chain,
    ResidentKeys,
}

impl Pass {
    pub const ALL: [Pass; 13] = [
        Pass::LowerLinearTransform,
        Pass::BsgsDecompose,
        Pass::UnrollLoops,
        Pass::InsertKeyMgmt,
        Pass::MergeRotationKeys,
        Pass::HoistRotations,
        Pass::BootstrapRemoval,
        Pass::BootstrapKeyMgmt,
        Pass::Cse,
        Pass::InsertClearOps,
        Pass::PlacePrefetchHints,
        Pass::Pow2Chain,
        Pass::ResidentKeys,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Pass::LowerLinearTransform => "lower-linear-transform",
            Pass::BsgsDecompose => "bsgs",
            Pass::UnrollLoops => "unroll",
            Pass::InsertKeyMgmt => "insert-key-mgmt",
            Pass::MergeRotationKeys => "merge-rotation-keys",
            Pass::HoistRotations => "hoist-rotations",
            Pass::BootstrapRemoval => "bootstrap-removal",
            Pass::BootstrapKeyMgmt => "bootstrap-key-mgmt",
            Pass::Cse => "cse",
            Pass::InsertClearOps => "insert-clear-ops",
            Pass::PlacePrefetchHints => "prefetch-hints",
            Pass::Pow2Chain => "pow2-chain",
            Pass::ResidentKeys => "resident-keys",
        }
    }
}

impl core::str::FromStr for Pass {
    type Err = PassError;

    fn from_str(s: &str) -> Result<Self, PassError> {
        Pass::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| PassError::UnknownPass(s.into()))
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineConfig {
    pub passes: Vec<Pass>,
    pub window: MergeWindow,
    pub cost_model: CostModel,
    /// Inputs used to profile levels for bootstrap removal; all-ones when
    /// absent.
    pub profile_inputs: Option<Inputs>,
    /// Run the verifier after every pass.
    pub verify_each: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::keymem(true, true)
    }
}

impl PipelineConfig {
    fn with_passes(passes: Vec<Pass>) -> Self {
        Self {
            passes,
            window: MergeWindow::default(),
            cost_model: CostModel::default(),
            profile_inputs: None,
            verify_each: true,
        }
    }

    /// The full key-management pipeline.
    pub fn keymem(bsgs: bool, remove_bootstraps: bool) -> Self {
        use Pass::*;
        let mut passes = vec![LowerLinearTransform];
        if bsgs {
            passes.push(BsgsDecompose);
        }
        passes.extend([UnrollLoops, InsertKeyMgmt, MergeRotationKeys, HoistRotations]);
        if remove_bootstraps {
            passes.push(BootstrapRemoval);
        }
        passes.extend([BootstrapKeyMgmt, MergeRotationKeys, Cse, InsertClearOps, PlacePrefetchHints]);
        Self::with_passes(passes)
    }

    /// Shared front end only: lowering, optional BSGS, unrolling, bootstrap
    /// removal and cleartext cleanup. No key management.
    pub fn frontend(bsgs: bool, remove_bootstraps: bool) -> Self {
        use Pass::*;
        let mut passes = vec![LowerLinearTransform];
        if bsgs {
            passes.push(BsgsDecompose);
        }
        passes.push(UnrollLoops);
        if remove_bootstraps {
            passes.push(BootstrapRemoval);
        }
        passes.push(Cse);
        Self::with_passes(passes)
    }

    pub fn custom(passes: Vec<Pass>) -> Self {
        Self::with_passes(passes)
    }

    /// Rejects orders that break pass preconditions.
    pub fn validate(&self) -> Result<(), PassError> {
        let pos = |p: &Pass| self.passes.iter().position(|q| q == p);
        let last = |p: &Pass| self.passes.iter().rposition(|q| q == p);
        if let (Some(merge), Some(ins)) = (pos(&Pass::MergeRotationKeys), pos(&Pass::InsertKeyMgmt)) {
            if merge < ins {
                return Err(PassError::Order("merge-rotation-keys must follow insert-key-mgmt".into()));
            }
        }
        if let (Some(bsgs), Some(lower)) = (pos(&Pass::BsgsDecompose), pos(&Pass::LowerLinearTransform)) {
            if bsgs < lower {
                return Err(PassError::Order("bsgs must follow lower-linear-transform".into()));
            }
        }
        if let (Some(ins), Some(unroll)) = (pos(&Pass::InsertKeyMgmt), pos(&Pass::UnrollLoops)) {
            if ins < unroll {
                return Err(PassError::Order("insert-key-mgmt must follow unroll".into()));
            }
        }
        if let Some(p) = last(&Pass::PlacePrefetchHints) {
            if p + 1 != self.passes.len() {
                return Err(PassError::Order("prefetch-hints must be the last pass".into()));
            }
        }
        Ok(())
    }
}

/// What a pass did, for diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PassReport {
    pub pass: &'static str,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub module: Module,
    pub reports: Vec<PassReport>,
}

pub fn run_pipeline(m: &Module, cfg: &PipelineConfig) -> Result<PipelineOutput, PassError> {
    run_pipeline_observed(m, cfg, |_, _| {})
}

/// Runs `cfg` on `m`, calling `after_pass` with each intermediate module.
pub fn run_pipeline_observed(
    m: &Module,
    cfg: &PipelineConfig,
    mut after_pass: impl FnMut(&Pass, &Module),
) -> Result<PipelineOutput, PassError> {
    cfg.validate()?;
    let mut cur = m.clone();
    let mut reports = Vec::with_capacity(cfg.passes.len());
    for pass in &cfg.passes {
        let mut report = PassReport { pass: pass.name(), notes: Vec::new() };
        cur = run_pass(&cur, pass, cfg, &mut report.notes)?;
        if cfg.verify_each {
            verify(&cur).map_err(|diagnostics| PassError::Verify { pass: pass.name(), diagnostics })?;
        }
        after_pass(pass, &cur);
        reports.push(report);
    }
    Ok(PipelineOutput { module: cur, reports })
}

fn run_pass(m: &Module, pass: &Pass, cfg: &PipelineConfig, notes: &mut Vec<String>) -> Result<Module, PassError> {
    Ok(match pass {
        Pass::LowerLinearTransform => lower_linear_transform(m)?,
        Pass::BsgsDecompose => {
            let (out, n) = bsgs_decompose(m);
            if n == 0 {
                notes.push("no diagonal matrix-vector loop found; nothing to decompose".into());
            }
            out
        }
        Pass::UnrollLoops => unroll_loops(m),
        Pass::InsertKeyMgmt => insert_key_mgmt(m)?,
        Pass::MergeRotationKeys => {
            let (out, n) = merge_rotation_keys(m, &cfg.window, &cfg.cost_model);
            notes.push(format!("{n} clear/load pairs merged"));
            out
        }
        Pass::HoistRotations => hoist_rotations(m, &cfg.cost_model),
        Pass::BootstrapRemoval => {
            let inputs = cfg.profile_inputs.clone().unwrap_or_else(|| crate::interp::ones_inputs(m));
            let prof = crate::interp::profile_levels(m, &inputs)?;
            let r = bootstrap_removal(m, &prof, &inputs)?;
            notes.push(format!("{} bootstrap(s) removed, {} kept", r.removed.len(), r.kept));
            for p in &r.rolled_back {
                notes.push(format!("removal of bootstrap at {} rolled back: depth exhausted", crate::ir::op_path(p)));
            }
            r.module
        }
        Pass::BootstrapKeyMgmt => bootstrap_key_mgmt(m),
        Pass::Cse => cse(m),
        Pass::InsertClearOps => insert_clear_ops(m),
        Pass::PlacePrefetchHints => place_prefetch_hints(m),
        Pass::Pow2Chain => {
            let (out, added) = pow2_chain(m)?;
            notes.push(format!("{added} rotations added by chaining"));
            out
        }
        Pass::ResidentKeys => resident_baseline(m),
    })
}

/// Follows a rename chain to its end.
pub(crate) fn resolve(map: &BTreeMap<ValueId, ValueId>, mut v: ValueId) -> ValueId {
    while let Some(&n) = map.get(&v) {
        if n == v {
            break;
        }
        v = n;
    }
    v
}

pub(crate) fn rename_uses(ops: &mut [Op], map: &BTreeMap<ValueId, ValueId>) {
    if map.is_empty() {
        return;
    }
    for op in ops {
        op.map_uses(&mut |v| resolve(map, v));
    }
}

/// Removes pure ops whose results are never read, to a fixpoint.
pub(crate) fn dead_code_elim(f: &mut Func) {
    loop {
        let mut used = BTreeSet::new();
        for op in &f.body {
            op.for_each_use(&mut |v| {
                used.insert(v);
            });
        }
        if !remove_unused(&mut f.body, &used) {
            break;
        }
    }
}

fn remove_unused(ops: &mut Vec<Op>, used: &BTreeSet<ValueId>) -> bool {
    let before = ops.len();
    ops.retain(|op| !(op.kind.is_pure() && !op.results.is_empty() && op.results.iter().all(|r| !used.contains(r))));
    let mut changed = ops.len() != before;
    for op in ops.iter_mut() {
        if let OpKind::ForLoop(l) = &mut op.kind {
            changed |= remove_unused(&mut l.body, used);
        }
    }
    changed
}

/// Applies `f` to the entry function, then compacts value numbering.
pub(crate) fn map_main(m: &Module, f: impl FnOnce(&Module, &mut Func)) -> Module {
    let mut out = m.clone();
    if let Some(pos) = out.funcs.iter().position(|g| g.name == "main") {
        let mut func = out.funcs[pos].clone();
        f(m, &mut func);
        func.compact();
        out.funcs[pos] = func;
    }
    out
}

pub(crate) fn try_map_main(m: &Module, f: impl FnOnce(&Module, &mut Func) -> Result<(), PassError>) -> Result<Module, PassError> {
    let mut out = m.clone();
    if let Some(pos) = out.funcs.iter().position(|g| g.name == "main") {
        let mut func = out.funcs[pos].clone();
        f(m, &mut func)?;
        func.compact();
        out.funcs[pos] = func;
    }
    Ok(out)
}
