use alloc::collections::BTreeSet;
use alloc::string::String;
use core::fmt::Write;

use super::{Const, Func, IndexExpr, Module, Op, OpKind, ValueId};

/// Renders a module in the textual `.kmir` format.
pub fn print_module(m: &Module) -> String {
    let mut out = String::new();
    let p = &m.params;
    let _ = write!(
        out,
        "params {{ ring_dim_log2 = {}, mult_depth = {}, slots = {}, d_boot = {}, conj_key = {}",
        p.ring_dim_log2, p.mult_depth, p.slots, p.d_boot, u8::from(p.conj_key)
    );
    if let Some(keys) = &p.boot_keys {
        out.push_str(", boot_keys = [");
        for (i, k) in keys.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{k}");
        }
        out.push(']');
    }
    out.push_str(" }\n");
    for (name, w) in &m.matrices {
        let _ = write!(out, "matrix @{name} [");
        for r in 0..w.rows {
            if r > 0 {
                out.push_str("; ");
            }
            for c in 0..w.cols {
                if c > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "{}", w.get(r, c));
            }
        }
        out.push_str("]\n");
    }
    for f in &m.funcs {
        Printer::new(f).func(&mut out);
    }
    out
}

struct Printer<'a> {
    f: &'a Func,
    /// Values whose source name is shadowed by an earlier value of the same
    /// name; printed by id instead.
    anonymous: BTreeSet<ValueId>,
}

impl<'a> Printer<'a> {
    fn new(f: &'a Func) -> Self {
        let mut seen = BTreeSet::new();
        let mut anonymous = BTreeSet::new();
        for (i, info) in f.values.iter().enumerate() {
            if let Some(n) = &info.name {
                if !seen.insert(n.as_str()) {
                    anonymous.insert(ValueId(i as u32));
                }
            }
        }
        Self { f, anonymous }
    }

    fn val(&self, out: &mut String, v: ValueId) {
        out.push('%');
        match self.f.values.get(v.index()).and_then(|i| i.name.as_ref()) {
            Some(n) if !self.anonymous.contains(&v) => out.push_str(n),
            _ => {
                let _ = write!(out, "{}", v.0);
            }
        }
    }

    fn vals(&self, out: &mut String, vs: &[ValueId]) {
        for (i, &v) in vs.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            self.val(out, v);
        }
    }

    fn expr(&self, out: &mut String, e: &IndexExpr) {
        let mut first = true;
        for &(v, c) in &e.terms {
            let neg = c < 0;
            let mag = c.unsigned_abs();
            if first {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            if mag != 1 {
                let _ = write!(out, "{mag}*");
            }
            self.val(out, v);
            first = false;
        }
        if first {
            let _ = write!(out, "{}", e.constant);
        } else if e.constant != 0 {
            let sign = if e.constant < 0 { " - " } else { " + " };
            let _ = write!(out, "{sign}{}", e.constant.unsigned_abs());
        }
    }

    fn func(&self, out: &mut String) {
        let f = self.f;
        let _ = write!(out, "func @{}(", f.name);
        for (i, &a) in f.args.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            self.val(out, a);
            let _ = write!(out, ": {}", f.ty(a));
        }
        out.push_str(") -> ");
        if f.ret.len() == 1 {
            let _ = write!(out, "{}", f.ret[0]);
        } else {
            out.push('(');
            for (i, t) in f.ret.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "{t}");
            }
            out.push(')');
        }
        out.push_str(" {\n");
        for op in &f.body {
            self.op(out, op, 1);
        }
        out.push_str("}\n");
    }

    fn result_types(&self, out: &mut String, results: &[ValueId]) {
        if results.is_empty() {
            return;
        }
        out.push_str(" : ");
        for (i, &r) in results.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{}", self.f.ty(r));
        }
    }

    fn op(&self, out: &mut String, op: &Op, depth: usize) {
        for _ in 0..depth {
            out.push_str("  ");
        }
        if !op.results.is_empty() {
            self.vals(out, &op.results);
            out.push_str(" = ");
        }
        out.push_str(op.name());
        match &op.kind {
            OpKind::LoadKey { index } | OpKind::PrefetchKey { index } | OpKind::AssumeKey { index } => {
                let _ = write!(out, " {index}");
            }
            OpKind::ForLoop(l) => {
                out.push(' ');
                self.val(out, l.iv);
                let _ = write!(out, " = {} to {} step {}", l.lo, l.hi, l.step);
                if !l.iter_args.is_empty() {
                    out.push_str(" iter(");
                    for (i, (&a, &init)) in l.iter_args.iter().zip(&op.operands).enumerate() {
                        if i > 0 {
                            out.push_str(", ");
                        }
                        self.val(out, a);
                        out.push_str(" = ");
                        self.val(out, init);
                    }
                    out.push(')');
                }
                if let Some(w) = &l.mvm {
                    let _ = write!(out, " {{mvm = @{w}}}");
                }
                self.result_types(out, &op.results);
                out.push_str(" {\n");
                for inner in &l.body {
                    self.op(out, inner, depth + 1);
                }
                for _ in 0..depth {
                    out.push_str("  ");
                }
                out.push_str("}\n");
                return;
            }
            _ => {
                if !op.operands.is_empty() {
                    out.push(' ');
                    self.vals(out, &op.operands);
                }
            }
        }
        match &op.kind {
            OpKind::Rotate { index } | OpKind::FastRotate { index } => {
                out.push_str(" {index = ");
                self.expr(out, index);
                out.push('}');
            }
            OpKind::LinearTransform { matrix } => {
                let _ = write!(out, " {{matrix = @{matrix}}}");
            }
            OpKind::Const(Const::Splat(v)) => {
                let _ = write!(out, " {{value = {v}}}");
            }
            OpKind::Const(Const::Diagonal { matrix, diag, shift }) => {
                let _ = write!(out, " {{matrix = @{matrix}, diag = ");
                self.expr(out, diag);
                out.push_str(", shift = ");
                self.expr(out, shift);
                out.push('}');
            }
            _ => {}
        }
        self.result_types(out, &op.results);
        out.push('\n');
    }
}
