use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{map_main, try_map_main, PassError};
use crate::ir::{Const, ForLoop, Func, IndexExpr, Matrix, Module, Op, OpKind, Type, ValueId};

fn emit(f: &mut Func, out: &mut Vec<Op>, kind: OpKind, operands: Vec<ValueId>, ty: Type) -> ValueId {
    let r = f.new_value(ty);
    out.push(Op::new(kind, operands, vec![r]));
    r
}

fn diag_const(matrix: &str, diag: IndexExpr, shift: IndexExpr) -> OpKind {
    OpKind::Const(Const::Diagonal { matrix: String::from(matrix), diag, shift })
}

/// Emits `Σ_{i=lo}^{hi-1} diag(base + i) ⊙ rotate(v, i)` accumulated onto
/// `init` as a loop, returning the loop op and binding its result to `result`.
#[allow(clippy::too_many_arguments)]
fn diagonal_loop(
    f: &mut Func,
    matrix: &str,
    v: ValueId,
    init: ValueId,
    result: ValueId,
    hi: i64,
    diag_base: &IndexExpr,
    shift: &IndexExpr,
    mvm: bool,
) -> Op {
    let iv = f.new_value(Type::Index);
    let acc = f.new_value(Type::Ct);
    let mut body = Vec::new();
    let d = emit(f, &mut body, diag_const(matrix, diag_base.clone().plus(&IndexExpr::var(iv)), shift.clone()), vec![], Type::Pt);
    let x = emit(f, &mut body, OpKind::Rotate { index: IndexExpr::var(iv) }, vec![v], Type::Ct);
    let p = emit(f, &mut body, OpKind::MulPt, vec![x, d], Type::Ct);
    let s = emit(f, &mut body, OpKind::Add, vec![acc, p], Type::Ct);
    body.push(Op::new(OpKind::Yield, vec![s], vec![]));
    let l = ForLoop {
        iv,
        lo: 1,
        hi,
        step: 1,
        iter_args: vec![acc],
        body,
        mvm: mvm.then(|| String::from(matrix)),
    };
    Op::new(OpKind::ForLoop(l), vec![init], vec![result])
}

/// Replaces each `linear_transform @W` by the diagonal method:
/// `Σ_{i<N} diag_i(W) ⊙ rotate(v, i)` with `N = slots`, as a loop tagged
/// with the matrix. Matrices with a single nonzero diagonal lower to one
/// plaintext product.
pub fn lower_linear_transform(m: &Module) -> Result<Module, PassError> {
    try_map_main(m, |m, f| {
        let body = core::mem::take(&mut f.body);
        f.body = lower_block(m, f, body)?;
        Ok(())
    })
}

fn lower_block(m: &Module, f: &mut Func, ops: Vec<Op>) -> Result<Vec<Op>, PassError> {
    let n = m.params.slots as usize;
    let mut out = Vec::with_capacity(ops.len());
    for mut op in ops {
        match &mut op.kind {
            OpKind::LinearTransform { matrix } => {
                let matrix = matrix.clone();
                let w: &Matrix = m.matrices.get(&matrix).ok_or_else(|| PassError::NonSquare(matrix.clone()))?;
                if !w.is_square() {
                    return Err(PassError::NonSquare(matrix));
                }
                if w.rows > n {
                    return Err(PassError::Oversized { matrix, rows: w.rows, slots: m.params.slots });
                }
                let v = op.operands[0];
                let result = op.results[0];
                let d0 = emit(f, &mut out, diag_const(&matrix, 0.into(), 0.into()), vec![], Type::Pt);
                let only_main = (1..n).all(|d| w.diagonal(d, n).iter().all(|&x| x == 0));
                if only_main {
                    out.push(Op::new(OpKind::MulPt, vec![v, d0], vec![result]));
                } else {
                    let t0 = emit(f, &mut out, OpKind::MulPt, vec![v, d0], Type::Ct);
                    let lp = diagonal_loop(f, &matrix, v, t0, result, n as i64, &0.into(), &0.into(), true);
                    out.push(lp);
                }
            }
            OpKind::ForLoop(l) => {
                let body = core::mem::take(&mut l.body);
                l.body = lower_block(m, f, body)?;
                out.push(op);
            }
            _ => out.push(op),
        }
    }
    Ok(out)
}

/// Baby-step count `g = ⌈√N⌉`.
pub fn bsgs_giant_step(n: u32) -> u32 {
    let mut g = 1u32;
    while g * g < n {
        g += 1;
    }
    g
}

/// Tiles every diagonal matrix-vector loop into baby steps `1..g` and giant
/// steps `j·g`, with diagonals pre-rotated by `−j·g` at compile time:
///
/// `W·v = Σ_j rotate(Σ_i rotate(diag_{jg+i}, −jg) ⊙ rotate(v, i), jg)`
///
/// Returns the rewritten module and the number of loops decomposed.
pub fn bsgs_decompose(m: &Module) -> (Module, usize) {
    let mut count = 0;
    let out = map_main(m, |_, f| {
        let body = core::mem::take(&mut f.body);
        f.body = bsgs_block(f, body, &mut count);
    });
    (out, count)
}

fn bsgs_block(f: &mut Func, ops: Vec<Op>, count: &mut usize) -> Vec<Op> {
    let mut out = Vec::with_capacity(ops.len());
    for mut op in ops {
        let pattern = match &op.kind {
            OpKind::ForLoop(l) => l.mvm.clone().and_then(|w| {
                let v = l.body.iter().find(|o| matches!(o.kind, OpKind::Rotate { .. }))?.operands.first().copied()?;
                (l.lo == 1 && l.step == 1 && op.operands.len() == 1).then_some((w, v, l.hi))
            }),
            _ => None,
        };
        if let Some((matrix, v, n)) = pattern {
            *count += 1;
            let t0 = op.operands[0];
            let result = op.results[0];
            let g = i64::from(bsgs_giant_step(n as u32));
            let giants = (n + g - 1) / g;
            // giant step 0 needs no outer rotation
            let inner0 = f.new_value(Type::Ct);
            out.push(diagonal_loop(f, &matrix, v, t0, inner0, g, &0.into(), &0.into(), false));

            let j = f.new_value(Type::Index);
            let acc = f.new_value(Type::Ct);
            let jg = IndexExpr::scaled(j, g);
            let shift = IndexExpr::scaled(j, -g);
            let mut body = Vec::new();
            let d0 = emit(f, &mut body, diag_const(&matrix, jg.clone(), shift.clone()), vec![], Type::Pt);
            let b0 = emit(f, &mut body, OpKind::MulPt, vec![v, d0], Type::Ct);
            let inner = f.new_value(Type::Ct);
            body.push(diagonal_loop(f, &matrix, v, b0, inner, g, &jg, &shift, false));
            let y = emit(f, &mut body, OpKind::Rotate { index: jg }, vec![inner], Type::Ct);
            let s = emit(f, &mut body, OpKind::Add, vec![acc, y], Type::Ct);
            body.push(Op::new(OpKind::Yield, vec![s], vec![]));
            let giant = ForLoop { iv: j, lo: 1, hi: giants, step: 1, iter_args: vec![acc], body, mvm: None };
            out.push(Op::new(OpKind::ForLoop(giant), vec![inner0], vec![result]));
            continue;
        }
        if let OpKind::ForLoop(l) = &mut op.kind {
            let body = core::mem::take(&mut l.body);
            l.body = bsgs_block(f, body, count);
        }
        out.push(op);
    }
    out
}
