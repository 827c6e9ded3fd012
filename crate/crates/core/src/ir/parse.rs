use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use super::verify::infer_result_type;
use super::{canonical_index, Const, CryptoParams, ForLoop, Func, IndexExpr, Matrix, Module, Op, OpKind, Type, ValueId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("malformed type: {0}")]
    MalformedType(String),
    #[error("invalid params: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Value(String),
    Symbol(String),
    Ident(String),
    Number(String),
    Punct(char),
    Arrow,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Value(v) => format!("`%{v}`"),
            Tok::Symbol(s) => format!("`@{s}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(n) => format!("`{n}`"),
            Tok::Punct(c) => format!("`{c}`"),
            Tok::Arrow => "`->`".to_string(),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

struct Lexed {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Lexed>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let is_name = |c: char| c.is_ascii_alphanumeric() || c == '_' || c == '.';
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let take = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => take(1, &mut i, &mut col),
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '%' | '@' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && is_name(chars[j]) {
                    j += 1;
                }
                if j == start {
                    return Err(ParseError {
                        line,
                        col,
                        kind: ParseErrorKind::Syntax(format!("expected a name after `{c}`")),
                    });
                }
                let name: String = chars[start..j].iter().collect();
                out.push(Lexed { tok: if c == '%' { Tok::Value(name) } else { Tok::Symbol(name) }, line: l0, col: c0 });
                take(j - i, &mut i, &mut col);
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push(Lexed { tok: Tok::Arrow, line: l0, col: c0 });
                take(2, &mut i, &mut col);
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                    j += 1;
                }
                out.push(Lexed { tok: Tok::Number(chars[i..j].iter().collect()), line: l0, col: c0 });
                take(j - i, &mut i, &mut col);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && is_name(chars[j]) {
                    j += 1;
                }
                out.push(Lexed { tok: Tok::Ident(chars[i..j].iter().collect()), line: l0, col: c0 });
                take(j - i, &mut i, &mut col);
            }
            '=' | ',' | ':' | '{' | '}' | '(' | ')' | '[' | ']' | ';' | '<' | '>' | '*' | '+' | '-' => {
                out.push(Lexed { tok: Tok::Punct(c), line: l0, col: c0 });
                take(1, &mut i, &mut col);
            }
            other => {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::Syntax(format!("unexpected character `{other}`")),
                })
            }
        }
    }
    out.push(Lexed { tok: Tok::Eof, line, col });
    Ok(out)
}

/// Parses a module from its textual form.
///
/// Static rotation and key indices are canonicalized modulo `slots` of the
/// module's `params` block (or the default parameters when it is absent).
pub fn parse_module(src: &str) -> Result<Module, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, module: Module::default() };
    p.module()?;
    Ok(p.module)
}

#[derive(Default)]
struct Attrs {
    entries: Vec<(String, AttrValue, usize, usize)>,
}

enum AttrValue {
    Expr(IndexExpr),
    Symbol(String),
}

struct Parser {
    toks: Vec<Lexed>,
    pos: usize,
    module: Module,
}

struct FuncCtx {
    func: Func,
    scopes: Vec<BTreeMap<String, ValueId>>,
}

impl FuncCtx {
    fn lookup(&self, name: &str) -> Option<ValueId> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err<T>(&self, kind: ParseErrorKind) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError { line, col, kind })
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        self.err(ParseErrorKind::Syntax(msg.into()))
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Punct(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.syntax(format!("expected `{c}`, found {}", self.peek().describe()))
        }
    }

    fn expect_ident(&mut self, word: &str) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == word => {
                self.bump();
                Ok(())
            }
            t => self.syntax(format!("expected `{word}`, found {}", t.describe())),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.syntax(format!("expected identifier, found {}", t.describe())),
        }
    }

    fn symbol(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Symbol(s) => {
                self.bump();
                Ok(s)
            }
            t => self.syntax(format!("expected `@symbol`, found {}", t.describe())),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        let neg = self.eat('-');
        match self.peek().clone() {
            Tok::Number(n) if !n.contains('.') => {
                let v: i64 = match n.parse() {
                    Ok(v) => v,
                    Err(_) => return self.syntax(format!("integer `{n}` out of range")),
                };
                self.bump();
                Ok(if neg { -v } else { v })
            }
            t => self.syntax(format!("expected integer, found {}", t.describe())),
        }
    }

    /// Decimal literal that must denote an integer (`3`, `-2.0`).
    fn integral_decimal(&mut self) -> Result<i64, ParseError> {
        let neg = self.eat('-');
        let n = match self.peek().clone() {
            Tok::Number(n) => n,
            t => return self.syntax(format!("expected number, found {}", t.describe())),
        };
        let (whole, frac) = match n.split_once('.') {
            Some((w, f)) => (w, f),
            None => (n.as_str(), ""),
        };
        if frac.contains('.') || !frac.chars().all(|c| c == '0') || whole.is_empty() {
            return self.syntax(format!("matrix entry `{n}` is not an integer"));
        }
        let v: i64 = match whole.parse() {
            Ok(v) => v,
            Err(_) => return self.syntax(format!("matrix entry `{n}` out of range")),
        };
        self.bump();
        Ok(if neg { -v } else { v })
    }

    fn module(&mut self) -> Result<(), ParseError> {
        if matches!(self.peek(), Tok::Ident(s) if s == "params") {
            self.params()?;
        }
        loop {
            match self.peek().clone() {
                Tok::Ident(s) if s == "matrix" => self.matrix()?,
                Tok::Ident(s) if s == "func" => self.func()?,
                Tok::Eof => break,
                t => return self.syntax(format!("expected `matrix` or `func`, found {}", t.describe())),
            }
        }
        Ok(())
    }

    fn params(&mut self) -> Result<(), ParseError> {
        self.expect_ident("params")?;
        self.expect('{')?;
        let mut p = CryptoParams::default();
        let start = self.here();
        loop {
            let key = self.ident()?;
            self.expect('=')?;
            let num = |me: &mut Self| -> Result<u32, ParseError> {
                let v = me.int()?;
                u32::try_from(v).or_else(|_| me.syntax(format!("`{key}` must be a non-negative integer")))
            };
            match key.as_str() {
                "ring_dim_log2" => p.ring_dim_log2 = num(self)?,
                "mult_depth" => p.mult_depth = num(self)?,
                "slots" => p.slots = num(self)?,
                "d_boot" => p.d_boot = num(self)?,
                "conj_key" => p.conj_key = num(self)? != 0,
                "boot_keys" => {
                    self.expect('[')?;
                    let mut keys = BTreeSet::new();
                    if !self.eat(']') {
                        loop {
                            keys.insert(num(self)?);
                            if self.eat(']') {
                                break;
                            }
                            self.expect(',')?;
                        }
                    }
                    p.boot_keys = Some(keys);
                }
                _ => return self.syntax(format!("unknown parameter `{key}`")),
            }
            if self.eat('}') {
                break;
            }
            self.expect(',')?;
        }
        if let Err(msg) = p.validate() {
            return Err(ParseError { line: start.0, col: start.1, kind: ParseErrorKind::InvalidParams(msg) });
        }
        if let Some(keys) = p.boot_keys.take() {
            p.boot_keys = Some(keys.into_iter().map(|k| canonical_index(i64::from(k), p.slots)).collect());
        }
        self.module.params = p;
        Ok(())
    }

    fn matrix(&mut self) -> Result<(), ParseError> {
        self.expect_ident("matrix")?;
        let name = self.symbol()?;
        if self.module.matrices.contains_key(&name) {
            return self.syntax(format!("matrix `@{name}` defined twice"));
        }
        self.expect('[')?;
        let mut rows: Vec<Vec<i64>> = vec![Vec::new()];
        loop {
            rows.last_mut().unwrap().push(self.integral_decimal()?);
            if self.eat(']') {
                break;
            }
            if self.eat(';') {
                rows.push(Vec::new());
            } else {
                self.expect(',')?;
            }
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return self.syntax(format!("matrix `@{name}` has ragged rows"));
        }
        let n = rows.len();
        self.module.matrices.insert(name, Matrix::new(n, cols, rows.concat()));
        Ok(())
    }

    fn ty(&mut self) -> Result<Type, ParseError> {
        let (line, col) = self.here();
        let bad = |msg: String| Err(ParseError { line, col, kind: ParseErrorKind::MalformedType(msg) });
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                match s.as_str() {
                    "ct" => Ok(Type::Ct),
                    "pt" => Ok(Type::Pt),
                    "index" => Ok(Type::Index),
                    "rk" => {
                        if !self.eat('<') {
                            return bad("expected `<` after `rk`".into());
                        }
                        let i = match self.int() {
                            Ok(i) => i,
                            Err(_) => return bad("rotation key index must be an integer".into()),
                        };
                        if !self.eat('>') {
                            return bad("expected `>` closing `rk<..>`".into());
                        }
                        Ok(Type::RotKey(canonical_index(i, self.module.params.slots)))
                    }
                    other => bad(format!("unknown type `{other}`")),
                }
            }
            t => bad(format!("expected a type, found {}", t.describe())),
        }
    }

    fn func(&mut self) -> Result<(), ParseError> {
        self.expect_ident("func")?;
        let name = self.symbol()?;
        if self.module.funcs.iter().any(|f| f.name == name) {
            return self.syntax(format!("function `@{name}` defined twice"));
        }
        let mut ctx = FuncCtx { func: Func::new(name), scopes: vec![BTreeMap::new()] };
        self.expect('(')?;
        if !self.eat(')') {
            loop {
                let v = self.define_name(&mut ctx)?;
                self.expect(':')?;
                let ty = self.ty()?;
                let id = self.new_value(&mut ctx, &v, ty);
                ctx.func.args.push(id);
                self.bind(&mut ctx, v, id)?;
                if self.eat(')') {
                    break;
                }
                self.expect(',')?;
            }
        }
        if *self.peek() != Tok::Arrow {
            return self.syntax(format!("expected `->`, found {}", self.peek().describe()));
        }
        self.bump();
        if self.eat('(') {
            if !self.eat(')') {
                loop {
                    let t = self.ty()?;
                    ctx.func.ret.push(t);
                    if self.eat(')') {
                        break;
                    }
                    self.expect(',')?;
                }
            }
        } else {
            let t = self.ty()?;
            ctx.func.ret.push(t);
        }
        self.expect('{')?;
        ctx.func.body = self.block(&mut ctx)?;
        self.module.funcs.push(ctx.func);
        Ok(())
    }

    fn define_name(&mut self, _ctx: &mut FuncCtx) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Value(v) => {
                self.bump();
                Ok(v)
            }
            t => self.syntax(format!("expected `%value`, found {}", t.describe())),
        }
    }

    fn new_value(&self, ctx: &mut FuncCtx, name: &str, ty: Type) -> ValueId {
        let id = ctx.func.new_value(ty);
        if !name.chars().all(|c| c.is_ascii_digit()) {
            ctx.func.values[id.index()].name = Some(name.into());
        }
        id
    }

    fn bind(&self, ctx: &mut FuncCtx, name: String, id: ValueId) -> Result<(), ParseError> {
        if ctx.lookup(&name).is_some() {
            return self.syntax(format!("value `%{name}` defined twice"));
        }
        ctx.scopes.last_mut().unwrap().insert(name, id);
        Ok(())
    }

    fn use_value(&mut self, ctx: &FuncCtx) -> Result<ValueId, ParseError> {
        match self.peek().clone() {
            Tok::Value(v) => match ctx.lookup(&v) {
                Some(id) => {
                    self.bump();
                    Ok(id)
                }
                None => self.err(ParseErrorKind::UnknownSymbol(format!("%{v}"))),
            },
            t => self.syntax(format!("expected `%value`, found {}", t.describe())),
        }
    }

    /// Ops up to and including the closing `}`.
    fn block(&mut self, ctx: &mut FuncCtx) -> Result<Vec<Op>, ParseError> {
        let mut ops = Vec::new();
        while !self.eat('}') {
            if *self.peek() == Tok::Eof {
                return self.syntax("unexpected end of input inside block");
            }
            ops.push(self.op(ctx)?);
        }
        Ok(ops)
    }

    fn op(&mut self, ctx: &mut FuncCtx) -> Result<Op, ParseError> {
        let mut result_names = Vec::new();
        if matches!(self.peek(), Tok::Value(_)) {
            loop {
                result_names.push((self.define_name(ctx)?, self.here()));
                if self.eat('=') {
                    break;
                }
                self.expect(',')?;
            }
        }
        let opcode_pos = self.here();
        let opcode = self.ident()?;
        if opcode == "for_loop" {
            return self.for_loop(ctx, result_names);
        }
        let slots = self.module.params.slots;
        let mut operands = Vec::new();
        let mut static_index = None;
        match opcode.as_str() {
            "kmrt.load_key" | "kmrt.prefetch_key" | "kmrt.assume_key" => {
                static_index = Some(canonical_index(self.int()?, slots));
            }
            _ => {
                if matches!(self.peek(), Tok::Value(_)) {
                    loop {
                        operands.push(self.use_value(ctx)?);
                        if !self.eat(',') {
                            break;
                        }
                    }
                }
            }
        }
        let attrs = if *self.peek() == Tok::Punct('{') { self.attrs(ctx)? } else { Attrs::default() };
        let kind = self.build_kind(&opcode, opcode_pos, static_index, attrs)?;
        let mut annotated = Vec::new();
        if self.eat(':') {
            loop {
                annotated.push(self.ty()?);
                if !self.eat(',') {
                    break;
                }
            }
        }
        let expected_results = match &kind {
            OpKind::ClearKey | OpKind::ClearCt | OpKind::PrefetchKey { .. } | OpKind::Yield | OpKind::Return => 0,
            _ => 1,
        };
        if result_names.len() != expected_results {
            return Err(ParseError {
                line: opcode_pos.0,
                col: opcode_pos.1,
                kind: ParseErrorKind::Syntax(format!(
                    "`{opcode}` defines {expected_results} result(s), found {}",
                    result_names.len()
                )),
            });
        }
        let operand_types: Vec<Type> = operands.iter().map(|&v| ctx.func.ty(v)).collect();
        let mut results = Vec::new();
        for (i, (name, pos)) in result_names.into_iter().enumerate() {
            let ty = match annotated.get(i) {
                Some(&t) => t,
                None => match infer_result_type(&kind, &operand_types) {
                    Some(t) => t,
                    None => {
                        return Err(ParseError {
                            line: pos.0,
                            col: pos.1,
                            kind: ParseErrorKind::MalformedType(format!(
                                "cannot infer the type of `%{name}`; annotate it"
                            )),
                        })
                    }
                },
            };
            let id = self.new_value(ctx, &name, ty);
            self.bind(ctx, name, id)?;
            results.push(id);
        }
        Ok(Op::new(kind, operands, results))
    }

    fn for_loop(&mut self, ctx: &mut FuncCtx, result_names: Vec<(String, (usize, usize))>) -> Result<Op, ParseError> {
        // Results are allocated first (textual order) but only become visible
        // after the body.
        let mut results = Vec::new();
        for (name, _) in &result_names {
            // type patched once the annotation is read
            results.push(self.new_value(ctx, name, Type::Ct));
        }
        let iv_name = self.define_name(ctx)?;
        let iv = self.new_value(ctx, &iv_name, Type::Index);
        self.expect('=')?;
        let lo = self.int()?;
        self.expect_ident("to")?;
        let hi = self.int()?;
        self.expect_ident("step")?;
        let step = self.int()?;
        if step <= 0 {
            return self.syntax("loop step must be positive");
        }
        let mut iter_args = Vec::new();
        let mut inits = Vec::new();
        let mut arg_names = Vec::new();
        if matches!(self.peek(), Tok::Ident(s) if s == "iter") {
            self.bump();
            self.expect('(')?;
            loop {
                let name = self.define_name(ctx)?;
                self.expect('=')?;
                let init = self.use_value(ctx)?;
                let id = self.new_value(ctx, &name, ctx.func.ty(init));
                iter_args.push(id);
                inits.push(init);
                arg_names.push(name);
                if self.eat(')') {
                    break;
                }
                self.expect(',')?;
            }
        }
        let mut mvm = None;
        if *self.peek() == Tok::Punct('{') && matches!(self.toks[self.pos + 1].tok, Tok::Ident(ref s) if s == "mvm") {
            self.bump();
            self.expect_ident("mvm")?;
            self.expect('=')?;
            let w = self.symbol()?;
            if !self.module.matrices.contains_key(&w) {
                return self.err(ParseErrorKind::UnknownSymbol(format!("@{w}")));
            }
            mvm = Some(w);
            self.expect('}')?;
        }
        let mut types = Vec::new();
        if self.eat(':') {
            loop {
                types.push(self.ty()?);
                if !self.eat(',') {
                    break;
                }
            }
        }
        if results.len() != iter_args.len() {
            return self.syntax(format!(
                "for_loop carries {} value(s) but defines {} result(s)",
                iter_args.len(),
                results.len()
            ));
        }
        for (i, &r) in results.iter().enumerate() {
            let ty = types.get(i).copied().unwrap_or_else(|| ctx.func.ty(inits[i]));
            ctx.func.values[r.index()].ty = ty;
        }
        self.expect('{')?;
        ctx.scopes.push(BTreeMap::new());
        self.bind(ctx, iv_name, iv)?;
        for (name, &id) in arg_names.into_iter().zip(&iter_args) {
            self.bind(ctx, name, id)?;
        }
        let body = self.block(ctx)?;
        ctx.scopes.pop();
        for ((name, _), &id) in result_names.into_iter().zip(&results) {
            self.bind(ctx, name, id)?;
        }
        let l = ForLoop { iv, lo, hi, step, iter_args, body, mvm };
        Ok(Op::new(OpKind::ForLoop(l), inits, results))
    }

    fn attrs(&mut self, ctx: &FuncCtx) -> Result<Attrs, ParseError> {
        self.expect('{')?;
        let mut attrs = Attrs::default();
        if self.eat('}') {
            return Ok(attrs);
        }
        loop {
            let (line, col) = self.here();
            let key = self.ident()?;
            self.expect('=')?;
            let value = match self.peek() {
                Tok::Symbol(_) => AttrValue::Symbol(self.symbol()?),
                _ => AttrValue::Expr(self.expr(ctx)?),
            };
            attrs.entries.push((key, value, line, col));
            if self.eat('}') {
                break;
            }
            self.expect(',')?;
        }
        Ok(attrs)
    }

    /// `term (("+" | "-") term)*` with `term ::= INT | %iv | INT "*" %iv | %iv "*" INT`.
    fn expr(&mut self, ctx: &FuncCtx) -> Result<IndexExpr, ParseError> {
        let mut e = IndexExpr::default();
        let mut sign = if self.eat('-') { -1 } else { 1 };
        loop {
            let term = match self.peek().clone() {
                Tok::Number(_) => {
                    let c = self.int()?;
                    if self.eat('*') {
                        let v = self.use_value(ctx)?;
                        IndexExpr::scaled(v, c)
                    } else {
                        IndexExpr::constant(c)
                    }
                }
                Tok::Value(_) => {
                    let v = self.use_value(ctx)?;
                    if self.eat('*') {
                        IndexExpr::scaled(v, self.int()?)
                    } else {
                        IndexExpr::var(v)
                    }
                }
                t => return self.syntax(format!("expected index expression, found {}", t.describe())),
            };
            e = e.plus(&if sign < 0 { term.negate() } else { term });
            if self.eat('+') {
                sign = 1;
            } else if self.eat('-') {
                sign = -1;
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn build_kind(
        &self,
        opcode: &str,
        pos: (usize, usize),
        static_index: Option<u32>,
        attrs: Attrs,
    ) -> Result<OpKind, ParseError> {
        let slots = self.module.params.slots;
        let at = |kind: ParseErrorKind| ParseError { line: pos.0, col: pos.1, kind };
        let mut map: BTreeMap<String, AttrValue> = BTreeMap::new();
        for (k, v, line, col) in attrs.entries {
            if map.contains_key(&k) {
                return Err(ParseError { line, col, kind: ParseErrorKind::Syntax(format!("duplicate attribute `{k}`")) });
            }
            map.insert(k, v);
        }
        let expr = |map: &mut BTreeMap<String, AttrValue>, key: &str| -> Result<IndexExpr, ParseError> {
            match map.remove(key) {
                Some(AttrValue::Expr(e)) => Ok(e),
                Some(AttrValue::Symbol(_)) => Err(at(ParseErrorKind::Syntax(format!("attribute `{key}` must be an integer expression")))),
                None => Err(at(ParseErrorKind::Syntax(format!("`{opcode}` requires attribute `{key}`")))),
            }
        };
        let canon = |e: IndexExpr| match e.as_const() {
            Some(c) => IndexExpr::constant(i64::from(canonical_index(c, slots))),
            None => e,
        };
        let kind = match opcode {
            "ckks.add" => OpKind::Add,
            "ckks.mul_pt" => OpKind::MulPt,
            "ckks.mul_ct" => OpKind::MulCt,
            "ckks.rotate" => OpKind::Rotate { index: canon(expr(&mut map, "index")?) },
            "ckks.fast_rotate" => OpKind::FastRotate { index: canon(expr(&mut map, "index")?) },
            "ckks.precompute_rot" => OpKind::PrecomputeRot,
            "ckks.bootstrap" => OpKind::Bootstrap,
            "ckks.clear_ct" => OpKind::ClearCt,
            "ckks.linear_transform" | "ckks.const" => {
                let matrix = match map.remove("matrix") {
                    Some(AttrValue::Symbol(s)) => {
                        if !self.module.matrices.contains_key(&s) {
                            return Err(at(ParseErrorKind::UnknownSymbol(format!("@{s}"))));
                        }
                        Some(s)
                    }
                    Some(AttrValue::Expr(_)) => return Err(at(ParseErrorKind::Syntax("`matrix` must be a `@symbol`".into()))),
                    None => None,
                };
                if opcode == "ckks.linear_transform" {
                    match matrix {
                        Some(matrix) => OpKind::LinearTransform { matrix },
                        None => return Err(at(ParseErrorKind::Syntax("`ckks.linear_transform` requires `matrix`".into()))),
                    }
                } else if let Some(matrix) = matrix {
                    let diag = expr(&mut map, "diag")?;
                    let shift = if map.contains_key("shift") { canon(expr(&mut map, "shift")?) } else { IndexExpr::constant(0) };
                    OpKind::Const(Const::Diagonal { matrix, diag, shift })
                } else {
                    match expr(&mut map, "value")?.as_const() {
                        Some(v) => OpKind::Const(Const::Splat(v)),
                        None => return Err(at(ParseErrorKind::Syntax("`value` must be a constant".into()))),
                    }
                }
            }
            "kmrt.load_key" => OpKind::LoadKey { index: static_index.unwrap() },
            "kmrt.prefetch_key" => OpKind::PrefetchKey { index: static_index.unwrap() },
            "kmrt.assume_key" => OpKind::AssumeKey { index: static_index.unwrap() },
            "kmrt.clear_key" => OpKind::ClearKey,
            "kmrt.use_key" => OpKind::UseKey,
            "yield" => OpKind::Yield,
            "return" => OpKind::Return,
            other => return Err(at(ParseErrorKind::Syntax(format!("unknown opcode `{other}`")))),
        };
        if let Some(k) = map.keys().next() {
            return Err(at(ParseErrorKind::Syntax(format!("unexpected attribute `{k}` on `{opcode}`"))));
        }
        Ok(kind)
    }
}
