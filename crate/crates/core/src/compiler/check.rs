//! Name resolution and type checking. Rewrites the module in place: names
//! get ids, expressions get types, and integer operands of float
//! operations are wrapped in `ToFloat`.

use std::collections::{HashMap, HashSet};

use crate::diag::{Diagnostics, Loc};
use crate::isa::Word;

use super::ast::*;

pub const INTRINSICS: &[&str] = &["rz", "rol"];

pub fn check(m: &mut Module) -> Result<(), Diagnostics> {
    let mut c = Checker {
        diags: Diagnostics::new(),
        vars: Vec::new(),
        scopes: vec![HashMap::new()],
        funcs: HashMap::new(),
        funcs_sig: Vec::new(),
    };
    for (i, f) in m.functions.iter().enumerate() {
        if INTRINSICS.contains(&f.name.as_str()) {
            c.diags.error(f.loc, format!("`{}` is a built-in statement and cannot be redefined", f.name));
        } else if c.funcs.insert(f.name.clone(), i).is_some() {
            c.diags.error(f.loc, format!("function `{}` defined twice", f.name));
        }
    }
    let sigs: Vec<(Option<Ty>, Vec<VarTy>)> =
        m.functions.iter().map(|f| (f.ret, f.params.iter().map(|p| p.ty).collect())).collect();
    c.funcs_sig = sigs;
    match m.functions.iter().find(|f| f.name == "main") {
        None => c.diags.error(Loc::new(1, 1), "no `main` function"),
        Some(f) if !f.params.is_empty() => c.diags.error(f.loc, "`main` takes no parameters"),
        _ => {}
    }

    for g in &mut m.globals {
        c.global(g);
    }
    for (fid, f) in m.functions.iter_mut().enumerate() {
        c.function(fid, f);
    }
    if c.diags.has_errors() {
        return Err(c.diags);
    }
    m.vars = c.vars;
    mark_constants(m);
    Ok(())
}

struct Checker {
    diags: Diagnostics,
    vars: Vec<VarInfo>,
    scopes: Vec<HashMap<String, VarId>>,
    funcs: HashMap<String, FuncId>,
    funcs_sig: Vec<(Option<Ty>, Vec<VarTy>)>,
}

fn unify(a: Ty, b: Ty) -> Ty {
    match (a, b) {
        (Ty::Float, _) | (_, Ty::Float) => Ty::Float,
        (Ty::Unsigned, _) | (_, Ty::Unsigned) => Ty::Unsigned,
        _ => Ty::Int,
    }
}

/// Evaluates a constant integer expression (literals and arithmetic only).
pub fn const_eval(e: &Expr) -> Option<Word> {
    use crate::isa::{xor_function, Opcode};
    Some(match &e.kind {
        ExprKind::Int(v) | ExprKind::Float(v) => *v,
        ExprKind::ToFloat(x) => const_eval(x)? << 16,
        ExprKind::Unary(UnOp::Neg, x) => const_eval(x)?.wrapping_neg(),
        ExprKind::Unary(UnOp::Not, x) => !const_eval(x)?,
        ExprKind::Binary(op, a, b) => {
            let (x, y) = (const_eval(a)?, const_eval(b)?);
            let fl = if e.ty == Ty::Float || a.ty == Ty::Float { 16 } else { 0 };
            match op {
                BinOp::Add => x.wrapping_add(y),
                BinOp::Sub => x.wrapping_sub(y),
                BinOp::Mul => xor_function(Opcode::Xmulk, x, y, fl),
                BinOp::Div => xor_function(Opcode::Xdivk, x, y, fl),
                BinOp::Rem => xor_function(Opcode::Xrem, x, y, 0),
                BinOp::Shl => crate::isa::shl(x, y),
                BinOp::Shr => crate::isa::shr(x, y),
                BinOp::And => x & y,
                BinOp::Or => x | y,
                BinOp::Xor => x ^ y,
                BinOp::Eq => (x == y) as Word,
                BinOp::Ne => (x != y) as Word,
                BinOp::Lt | BinOp::Gt | BinOp::Le | BinOp::Ge => {
                    let (l, r) = if matches!(op, BinOp::Lt | BinOp::Ge) { (x, y) } else { (y, x) };
                    let lt = if unify(a.ty, b.ty) == Ty::Unsigned { l < r } else { (l as i32) < (r as i32) };
                    (lt ^ matches!(op, BinOp::Ge | BinOp::Le)) as Word
                }
                BinOp::Had | BinOp::Phase => return None,
            }
        }
        _ => return None,
    })
}

impl Checker {
    fn lookup(&self, name: &str) -> Option<VarId> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn declare(&mut self, name: &mut Name, ty: VarTy, kind: VarKind, loc: Loc, in_loop: bool) {
        let scope = self.scopes.last_mut().unwrap();
        if scope.contains_key(&name.text) {
            self.diags.error(loc, format!("`{}` is already declared in this scope", name.text));
        }
        let id = self.vars.len();
        self.vars.push(VarInfo { name: name.text.clone(), ty, kind, loc, constant: None, in_loop });
        scope.insert(name.text.clone(), id);
        name.id = id;
    }

    fn global(&mut self, g: &mut GlobalDecl) {
        let ty = self.fix_array_len(g.ty, g.init.as_ref(), g.loc);
        g.ty = ty;
        match &mut g.init {
            Some(Init::Expr(e)) => {
                self.expr_scalar(e);
                self.coerce(e, ty.elem());
                if ty.is_array() {
                    self.diags.error(g.loc, "array initializer must be a `{...}` list");
                } else if const_eval(e).is_none() {
                    self.diags.error(e.loc, "global initializer must be a constant expression");
                }
            }
            Some(Init::List(items)) => {
                for e in items.iter_mut() {
                    self.expr_scalar(e);
                    self.coerce(e, ty.elem());
                    if const_eval(e).is_none() {
                        self.diags.error(e.loc, "global initializer must be a constant expression");
                    }
                }
            }
            None => {}
        }
        self.declare(&mut g.name, ty, VarKind::Global, g.loc, false);
    }

    fn fix_array_len(&mut self, ty: VarTy, init: Option<&Init>, loc: Loc) -> VarTy {
        match (ty, init) {
            (VarTy::Array(t, None), Some(Init::List(items))) if !items.is_empty() => {
                VarTy::Array(t, Some(items.len() as u32))
            }
            (VarTy::Array(t, None), _) => {
                self.diags.error(loc, "array declaration needs a length");
                VarTy::Array(t, Some(1))
            }
            (VarTy::Array(t, Some(n)), Some(Init::List(items))) => {
                if items.len() > n as usize {
                    self.diags.error(loc, format!("{} initializers for array of length {n}", items.len()));
                }
                VarTy::Array(t, Some(n))
            }
            (VarTy::Scalar(_), Some(Init::List(_))) => {
                self.diags.error(loc, "scalar cannot have a list initializer");
                ty
            }
            _ => ty,
        }
    }

    fn function(&mut self, fid: FuncId, f: &mut Function) {
        self.scopes.push(HashMap::new());
        for (i, p) in f.params.iter_mut().enumerate() {
            self.declare(&mut p.name, p.ty, VarKind::Param(fid, i), p.loc, false);
        }
        let n = f.body.len();
        for (i, s) in f.body.iter_mut().enumerate() {
            if let StmtKind::Return(_) = s.kind {
                if i + 1 != n {
                    self.diags.error(s.loc, "`return` must be the last statement of a function");
                }
            }
        }
        self.block(fid, f.ret, &mut f.body, false, true);
        self.scopes.pop();
    }

    fn block(&mut self, fid: FuncId, ret: Option<Ty>, body: &mut [Stmt], in_loop: bool, top: bool) {
        if !top {
            self.scopes.push(HashMap::new());
        }
        for s in body.iter_mut() {
            self.stmt(fid, ret, s, in_loop, top);
        }
        if !top {
            self.scopes.pop();
        }
    }

    fn stmt(&mut self, fid: FuncId, ret: Option<Ty>, s: &mut Stmt, in_loop: bool, top: bool) {
        let loc = s.loc;
        // Intrinsic statements look like calls.
        if let StmtKind::Call(Expr { kind: ExprKind::Call(name, args), .. }) = &s.kind {
            if INTRINSICS.contains(&name.text.as_str()) {
                if let Some(k) = self.intrinsic(&name.text, args.clone(), loc) {
                    s.kind = k;
                }
                return;
            }
        }
        match &mut s.kind {
            StmtKind::Decl(name, ty, init) => {
                let vty = self.fix_array_len(*ty, init.as_ref(), loc);
                *ty = vty;
                match init {
                    Some(Init::Expr(e)) => {
                        if vty.is_array() {
                            self.diags.error(loc, "array initializer must be a `{...}` list");
                        }
                        self.expr_quantum_ok(e);
                        self.coerce(e, vty.elem());
                    }
                    Some(Init::List(items)) => {
                        for e in items.iter_mut() {
                            self.expr_scalar(e);
                            self.coerce(e, vty.elem());
                        }
                    }
                    None => {}
                }
                self.declare(name, vty, VarKind::Local(fid), loc, in_loop);
            }
            StmtKind::Assign(lv, op, e) => {
                let target = self.lvalue(lv, loc);
                match op {
                    AssignOp::Had | AssignOp::Phase => {
                        self.expr_scalar(e);
                        if target == Some(Ty::Float) {
                            self.diags.error(loc, "quantum operators need an integer target");
                        }
                        if e.ty == Ty::Float {
                            self.diags.error(e.loc, "bit count must be an integer");
                        }
                    }
                    _ => {
                        if *op == AssignOp::Set {
                            self.expr_quantum_ok(e);
                        } else {
                            self.expr_scalar(e);
                        }
                        if let Some(t) = target {
                            if *op == AssignOp::Rem && t == Ty::Float {
                                self.diags.error(loc, "`%` is not defined on float");
                            }
                            self.coerce(e, t);
                        }
                    }
                }
            }
            StmtKind::If(c, a, b) => {
                self.condition(c);
                self.block(fid, ret, a, in_loop, false);
                self.block(fid, ret, b, in_loop, false);
            }
            StmtKind::DoWhile(body, c) => {
                // As in C, the condition cannot see the body's declarations.
                self.block(fid, ret, body, true, false);
                self.condition(c);
            }
            StmtKind::Print(e) => self.expr_scalar(e),
            StmtKind::Return(e) => {
                if !top {
                    self.diags.error(loc, "`return` must be the last statement of a function");
                }
                match (e, ret) {
                    (Some(e), Some(t)) => {
                        self.expr_scalar(e);
                        self.coerce(e, t);
                    }
                    (Some(e), None) => {
                        self.expr_scalar(e);
                        self.diags.error(loc, "`void` function cannot return a value");
                    }
                    _ => {}
                }
            }
            StmtKind::Call(e) => {
                self.call(e, true);
            }
            StmtKind::Rz(..) | StmtKind::Rol(..) => {}
        }
    }

    fn intrinsic(&mut self, name: &str, mut args: Vec<Expr>, loc: Loc) -> Option<StmtKind> {
        let want = if name == "rz" { 3 } else { 2 };
        if args.len() != want {
            self.diags.error(loc, format!("`{name}` takes {want} arguments"));
            return None;
        }
        let ExprKind::Var(mut target) = args[0].kind.clone() else {
            self.diags.error(args[0].loc, format!("first argument of `{name}` must be a variable"));
            return None;
        };
        match self.lookup(&target.text) {
            Some(id)
                if self.vars[id].ty == VarTy::Scalar(Ty::Int) || self.vars[id].ty == VarTy::Scalar(Ty::Unsigned) =>
            {
                target.id = id
            }
            Some(_) => {
                self.diags.error(args[0].loc, format!("`{name}` needs an integer scalar variable"));
                return None;
            }
            None => {
                self.diags.error(args[0].loc, format!("unknown identifier `{}`", target.text));
                return None;
            }
        }
        let mut consts = Vec::new();
        for a in args.iter_mut().skip(1) {
            self.expr_scalar(a);
            match const_eval(a) {
                Some(v) => consts.push(v as i32),
                None => {
                    self.diags.error(a.loc, format!("arguments of `{name}` must be constants"));
                    return None;
                }
            }
        }
        if name == "rz" {
            let (bit, k) = (consts[0], consts[1]);
            if !(0..32).contains(&bit) {
                self.diags.error(args[1].loc, "bit index must be in 0..31");
                return None;
            }
            if k == 0 || !(-32..=32).contains(&k) {
                self.diags.error(args[2].loc, "rotation order must be nonzero and in -32..32");
                return None;
            }
            Some(StmtKind::Rz(target, bit as u8, k))
        } else {
            Some(StmtKind::Rol(target, consts[0] as u32 % 32))
        }
    }

    fn condition(&mut self, c: &mut Expr) {
        self.expr_scalar(c);
        if c.ty == Ty::Float {
            self.diags.error(c.loc, "condition must have integer type");
        }
    }

    /// Resolves an assignment target; returns its element type.
    fn lvalue(&mut self, lv: &mut LValue, loc: Loc) -> Option<Ty> {
        match lv {
            LValue::Var(n) => {
                let id = self.resolve(n, loc)?;
                match self.vars[id].ty {
                    VarTy::Scalar(t) => Some(t),
                    VarTy::Array(..) => {
                        self.diags.error(loc, format!("cannot assign to array `{}`", n.text));
                        None
                    }
                }
            }
            LValue::Index(n, idx) => {
                self.index_expr(idx);
                let id = self.resolve(n, loc)?;
                match self.vars[id].ty {
                    VarTy::Array(t, _) => Some(t),
                    VarTy::Scalar(_) => {
                        self.diags.error(loc, format!("`{}` is not an array", n.text));
                        None
                    }
                }
            }
        }
    }

    fn resolve(&mut self, n: &mut Name, loc: Loc) -> Option<VarId> {
        match self.lookup(&n.text) {
            Some(id) => {
                n.id = id;
                Some(id)
            }
            None => {
                self.diags.error(loc, format!("unknown identifier `{}`", n.text));
                None
            }
        }
    }

    fn index_expr(&mut self, idx: &mut Expr) {
        self.expr_scalar(idx);
        if idx.ty == Ty::Float {
            self.diags.error(idx.loc, "array index must be an integer");
        }
    }

    fn coerce(&mut self, e: &mut Expr, to: Ty) {
        match (e.ty, to) {
            (Ty::Float, Ty::Float) => {}
            (Ty::Float, _) => self.diags.error(e.loc, format!("cannot convert float to {to}")),
            (_, Ty::Float) => {
                let loc = e.loc;
                let inner = std::mem::replace(e, Expr::new(ExprKind::Int(0), loc));
                *e = Expr { kind: ExprKind::ToFloat(Box::new(inner)), ty: Ty::Float, loc };
            }
            // int and unsigned int share the bit pattern
            _ => {}
        }
    }

    /// Like `expr_scalar` but admits a top-level `@`/`#`, whose placement the
    /// lowering pass validates.
    fn expr_quantum_ok(&mut self, e: &mut Expr) {
        if let ExprKind::Binary(op, a, b) = &mut e.kind {
            if op.is_quantum() {
                self.expr_scalar(a);
                self.expr_scalar(b);
                if a.ty == Ty::Float || b.ty == Ty::Float {
                    self.diags.error(e.loc, format!("`{}` needs integer operands", op.symbol()));
                }
                e.ty = a.ty;
                return;
            }
        }
        self.expr_scalar(e);
    }

    fn expr_scalar(&mut self, e: &mut Expr) {
        let loc = e.loc;
        match &mut e.kind {
            ExprKind::Int(_) => e.ty = Ty::Int,
            ExprKind::Float(_) => e.ty = Ty::Float,
            ExprKind::ToFloat(_) => e.ty = Ty::Float,
            ExprKind::Var(n) => {
                if let Some(id) = self.resolve(n, loc) {
                    match self.vars[id].ty {
                        VarTy::Scalar(t) => e.ty = t,
                        VarTy::Array(..) => {
                            self.diags.error(loc, format!("array `{}` used as a value", n.text));
                        }
                    }
                }
            }
            ExprKind::Index(n, idx) => {
                self.index_expr(idx);
                if let Some(id) = self.resolve(n, loc) {
                    match self.vars[id].ty {
                        VarTy::Array(t, _) => e.ty = t,
                        VarTy::Scalar(_) => self.diags.error(loc, format!("`{}` is not an array", n.text)),
                    }
                }
            }
            ExprKind::Unary(op, x) => {
                self.expr_scalar(x);
                if *op == UnOp::Not && x.ty == Ty::Float {
                    self.diags.error(loc, "`~` is not defined on float");
                }
                e.ty = x.ty;
            }
            ExprKind::Binary(op, a, b) => {
                let op = *op;
                self.expr_scalar(a);
                self.expr_scalar(b);
                e.ty = match op {
                    BinOp::Had | BinOp::Phase => {
                        self.diags.error(
                            loc,
                            format!(
                                "`{}` is only allowed as the whole right-hand side of an initializer or assignment",
                                op.symbol()
                            ),
                        );
                        a.ty
                    }
                    BinOp::Shl | BinOp::Shr => {
                        if a.ty == Ty::Float || b.ty == Ty::Float {
                            self.diags.error(loc, "shifts are not defined on float");
                        }
                        a.ty
                    }
                    BinOp::Rem | BinOp::And | BinOp::Or | BinOp::Xor => {
                        if a.ty == Ty::Float || b.ty == Ty::Float {
                            self.diags.error(loc, format!("`{}` is not defined on float", op.symbol()));
                        }
                        unify(a.ty, b.ty)
                    }
                    _ => {
                        let t = unify(a.ty, b.ty);
                        self.coerce(a, t);
                        self.coerce(b, t);
                        if op.is_comparison() {
                            Ty::Int
                        } else {
                            t
                        }
                    }
                };
            }
            ExprKind::Call(..) => {
                if let Some(t) = self.call(e, false) {
                    e.ty = t;
                }
            }
        }
    }

    /// Checks a call; returns its value type.
    fn call(&mut self, e: &mut Expr, statement: bool) -> Option<Ty> {
        let loc = e.loc;
        let ExprKind::Call(name, args) = &mut e.kind else { unreachable!() };
        if INTRINSICS.contains(&name.text.as_str()) {
            self.diags.error(loc, format!("`{}` can only be used as a statement", name.text));
            return None;
        }
        let Some(&fid) = self.funcs.get(&name.text) else {
            self.diags.error(loc, format!("unknown function `{}`", name.text));
            for a in args.iter_mut() {
                self.expr_scalar(a);
            }
            return None;
        };
        name.id = fid;
        let (ret, params) = self.funcs_sig[fid].clone();
        if args.len() != params.len() {
            self.diags.error(loc, format!("`{}` expects {} arguments, got {}", name.text, params.len(), args.len()));
        }
        for (a, p) in args.iter_mut().zip(params.iter()) {
            match p {
                VarTy::Array(t, _) => {
                    let ok = match &mut a.kind {
                        ExprKind::Var(n) => match self.lookup(&n.text) {
                            Some(id) if self.vars[id].ty.is_array() && self.vars[id].ty.elem() == *t => {
                                n.id = id;
                                true
                            }
                            _ => false,
                        },
                        _ => false,
                    };
                    if !ok {
                        self.diags.error(a.loc, format!("expected an array of {t}"));
                    }
                }
                VarTy::Scalar(t) => {
                    self.expr_scalar(a);
                    self.coerce(a, *t);
                }
            }
        }
        let mut seen = HashSet::new();
        for a in args.iter() {
            if let ExprKind::Var(n) = &a.kind {
                if n.id != UNRESOLVED && !seen.insert(n.id) {
                    self.diags.error(a.loc, format!("`{}` is passed twice to the same call", n.text));
                }
            }
        }
        if ret.is_none() && !statement {
            self.diags.error(loc, format!("`{}` returns no value", name.text));
        }
        ret
    }
}

/// Finds locals whose only write is a literal initializer.
fn mark_constants(m: &mut Module) {
    let mut written: HashSet<VarId> = HashSet::new();
    let mut init: HashMap<VarId, Option<Word>> = HashMap::new();
    for f in &m.functions {
        walk_stmts(&f.body, &mut |s| match &s.kind {
            StmtKind::Decl(n, VarTy::Scalar(_), i) => {
                let v = match i {
                    Some(Init::Expr(e)) => const_eval(e),
                    None => Some(0),
                    _ => None,
                };
                init.insert(n.id, v);
            }
            StmtKind::Assign(lv, _, _) => {
                written.insert(lv.name().id);
            }
            StmtKind::Rz(n, ..) | StmtKind::Rol(n, _) => {
                written.insert(n.id);
            }
            _ => {}
        });
        let mut mark_args = |e: &Expr| {
            e.walk(&mut |x| {
                if let ExprKind::Call(_, args) = &x.kind {
                    for a in args {
                        if let ExprKind::Var(n) = &a.kind {
                            written.insert(n.id);
                        }
                    }
                }
            })
        };
        walk_stmts(&f.body, &mut |s| s.exprs().into_iter().for_each(&mut mark_args));
    }
    for (id, v) in init {
        if !written.contains(&id) {
            m.vars[id].constant = v;
        }
    }
}
