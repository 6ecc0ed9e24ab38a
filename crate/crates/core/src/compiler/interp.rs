//! Direct evaluation of a checked module. Arithmetic goes through the same
//! functions as the machine, so results agree bit for bit.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::diag::Loc;
use crate::isa::{shl, shr, xor_function, Opcode, Word};

use super::ast::*;
use super::check::const_eval;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpError {
    #[error("{0}: quantum operation `{1}` has no classical meaning")]
    Quantum(Loc, &'static str),
    #[error("{loc}: index {index} out of bounds for `{name}` of length {len}")]
    OutOfBounds { loc: Loc, name: String, index: Word, len: usize },
    #[error("{0}: recursion unsupported")]
    Recursion(Loc),
    #[error("{0}: unknown input `{1}`")]
    UnknownInput(Loc, String),
    #[error("step limit exceeded")]
    StepLimit,
}

#[derive(Debug, Clone)]
enum Store {
    Scalar(Word),
    Array(Vec<Word>),
    /// An array parameter refers to another variable's storage.
    Ref(VarId),
}

struct Interp<'m> {
    m: &'m Module,
    store: Vec<Store>,
    locals: Vec<Vec<VarId>>,
    active: Vec<bool>,
    printed: Vec<Word>,
    steps: u64,
    max_steps: u64,
}

pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

/// Runs `main`, returning the printed values in order.
pub fn interpret_reference(m: &Module) -> Result<Vec<Word>, InterpError> {
    interpret_with(m, &BTreeMap::new(), DEFAULT_MAX_STEPS)
}

/// Like `interpret_reference`, with global scalars overridden by `inputs`.
pub fn interpret_with(m: &Module, inputs: &BTreeMap<String, Word>, max_steps: u64) -> Result<Vec<Word>, InterpError> {
    let mut store: Vec<Store> = m
        .vars
        .iter()
        .map(|v| match v.ty {
            VarTy::Scalar(_) => Store::Scalar(0),
            VarTy::Array(_, Some(n)) => Store::Array(vec![0; n as usize]),
            VarTy::Array(_, None) => Store::Ref(UNRESOLVED),
        })
        .collect();
    for g in &m.globals {
        match (&g.init, &mut store[g.name.id]) {
            (Some(Init::Expr(e)), Store::Scalar(s)) => *s = const_eval(e).unwrap_or(0),
            (Some(Init::List(items)), Store::Array(a)) => {
                for (slot, e) in a.iter_mut().zip(items) {
                    *slot = const_eval(e).unwrap_or(0);
                }
            }
            _ => {}
        }
    }
    for (name, v) in inputs {
        let g = m
            .globals
            .iter()
            .find(|g| &g.name.text == name && !g.ty.is_array())
            .ok_or_else(|| InterpError::UnknownInput(Loc::default(), name.clone()))?;
        store[g.name.id] = Store::Scalar(*v);
    }
    let mut locals = vec![Vec::new(); m.functions.len()];
    for (id, v) in m.vars.iter().enumerate() {
        if let VarKind::Local(f) = v.kind {
            locals[f].push(id);
        }
    }
    let mut it =
        Interp { m, store, locals, active: vec![false; m.functions.len()], printed: Vec::new(), steps: 0, max_steps };
    let main = m.function("main").expect("checked module has main");
    it.call(main, &[], Loc::default())?;
    Ok(it.printed)
}

enum Flow {
    Next,
    Return(Word),
}

impl Interp<'_> {
    fn tick(&mut self) -> Result<(), InterpError> {
        self.steps += 1;
        if self.steps > self.max_steps {
            Err(InterpError::StepLimit)
        } else {
            Ok(())
        }
    }

    fn resolve(&self, mut id: VarId) -> VarId {
        while let Store::Ref(t) = self.store[id] {
            id = t;
        }
        id
    }

    fn scalar(&self, id: VarId) -> Word {
        match self.store[id] {
            Store::Scalar(v) => v,
            _ => unreachable!("scalar variable"),
        }
    }

    fn set_scalar(&mut self, id: VarId, v: Word) {
        self.store[id] = Store::Scalar(v);
    }

    fn slot(&mut self, name: &Name, index: Word, loc: Loc) -> Result<&mut Word, InterpError> {
        let id = self.resolve(name.id);
        match &mut self.store[id] {
            Store::Array(a) => {
                let len = a.len();
                a.get_mut(index as usize).ok_or(InterpError::OutOfBounds { loc, name: name.text.clone(), index, len })
            }
            _ => unreachable!("array variable"),
        }
    }

    /// Calls `f` with argument values; returns the result and the final
    /// values of the scalar parameters (for copy-restore).
    fn call(&mut self, f: FuncId, args: &[ArgVal], loc: Loc) -> Result<(Word, Vec<Word>), InterpError> {
        if self.active[f] {
            return Err(InterpError::Recursion(loc));
        }
        self.active[f] = true;
        let func = &self.m.functions[f];
        for id in self.locals[f].clone() {
            self.store[id] = match self.m.vars[id].ty {
                VarTy::Scalar(_) => Store::Scalar(0),
                VarTy::Array(_, n) => Store::Array(vec![0; n.unwrap_or(0) as usize]),
            };
        }
        for (p, a) in func.params.iter().zip(args) {
            self.store[p.name.id] = match a {
                ArgVal::Scalar(v) => Store::Scalar(*v),
                ArgVal::Array(id) => Store::Ref(*id),
            };
        }
        let ret = match self.block(&func.body)? {
            Flow::Return(v) => v,
            Flow::Next => 0,
        };
        let outs = func
            .params
            .iter()
            .map(|p| match self.store[p.name.id] {
                Store::Scalar(v) => v,
                _ => 0,
            })
            .collect();
        self.active[f] = false;
        Ok((ret, outs))
    }

    fn block(&mut self, body: &[Stmt]) -> Result<Flow, InterpError> {
        for s in body {
            if let Flow::Return(v) = self.stmt(s)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Next)
    }

    fn stmt(&mut self, s: &Stmt) -> Result<Flow, InterpError> {
        self.tick()?;
        match &s.kind {
            StmtKind::Decl(n, ty, init) => match (ty, init) {
                (VarTy::Scalar(_), Some(Init::Expr(e))) => {
                    let v = self.expr(e)?;
                    self.set_scalar(n.id, v);
                }
                (VarTy::Scalar(_), _) => self.set_scalar(n.id, 0),
                (VarTy::Array(_, len), init) => {
                    let mut a = vec![0; len.unwrap_or(0) as usize];
                    if let Some(Init::List(items)) = init {
                        for (slot, e) in a.iter_mut().zip(items) {
                            *slot = self.expr(e)?;
                        }
                    }
                    self.store[n.id] = Store::Array(a);
                }
            },
            StmtKind::Assign(lv, op, e) => {
                let ty = self.m.vars[lv.name().id].ty.elem();
                let fl = if ty == Ty::Float { 16 } else { 0 };
                if let AssignOp::Had | AssignOp::Phase = op {
                    return Err(InterpError::Quantum(s.loc, if *op == AssignOp::Had { "@=" } else { "#=" }));
                }
                if let ExprKind::Binary(BinOp::Had | BinOp::Phase, ..) = e.kind {
                    return Err(InterpError::Quantum(e.loc, "@/#"));
                }
                let rhs = self.expr(e)?;
                let old = self.read_lvalue(lv, s.loc)?;
                let new = match op {
                    AssignOp::Set => rhs,
                    AssignOp::Add => old.wrapping_add(rhs),
                    AssignOp::Sub => old.wrapping_sub(rhs),
                    AssignOp::Mul => xor_function(Opcode::Xmulk, old, rhs, fl),
                    AssignOp::Div => xor_function(Opcode::Xdivk, old, rhs, fl),
                    AssignOp::Rem => xor_function(Opcode::Xrem, old, rhs, 0),
                    AssignOp::Had | AssignOp::Phase => unreachable!(),
                };
                self.write_lvalue(lv, new, s.loc)?;
            }
            StmtKind::If(c, a, b) => {
                let branch = if self.expr(c)? != 0 { a } else { b };
                return self.block(branch);
            }
            StmtKind::DoWhile(body, c) => loop {
                if let Flow::Return(v) = self.block(body)? {
                    return Ok(Flow::Return(v));
                }
                if self.expr(c)? == 0 {
                    break;
                }
                self.tick()?;
            },
            StmtKind::Print(e) => {
                let v = self.expr(e)?;
                self.printed.push(v);
            }
            StmtKind::Return(e) => {
                let v = match e {
                    Some(e) => self.expr(e)?,
                    None => 0,
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::Call(e) => {
                self.expr(e)?;
            }
            StmtKind::Rz(..) => return Err(InterpError::Quantum(s.loc, "rz")),
            StmtKind::Rol(n, k) => {
                let v = self.scalar(n.id).rotate_left(*k);
                self.set_scalar(n.id, v);
            }
        }
        Ok(Flow::Next)
    }

    fn read_lvalue(&mut self, lv: &LValue, loc: Loc) -> Result<Word, InterpError> {
        match lv {
            LValue::Var(n) => Ok(self.scalar(n.id)),
            LValue::Index(n, i) => {
                let i = self.expr(i)?;
                Ok(*self.slot(n, i, loc)?)
            }
        }
    }

    fn write_lvalue(&mut self, lv: &LValue, v: Word, loc: Loc) -> Result<(), InterpError> {
        match lv {
            LValue::Var(n) => self.set_scalar(n.id, v),
            LValue::Index(n, i) => {
                let i = self.expr(i)?;
                *self.slot(n, i, loc)? = v;
            }
        }
        Ok(())
    }

    fn expr(&mut self, e: &Expr) -> Result<Word, InterpError> {
        Ok(match &e.kind {
            ExprKind::Int(v) | ExprKind::Float(v) => *v,
            ExprKind::Var(n) => self.scalar(n.id),
            ExprKind::Index(n, i) => {
                let i = self.expr(i)?;
                *self.slot(n, i, e.loc)?
            }
            ExprKind::ToFloat(x) => self.expr(x)? << 16,
            ExprKind::Unary(UnOp::Neg, x) => self.expr(x)?.wrapping_neg(),
            ExprKind::Unary(UnOp::Not, x) => !self.expr(x)?,
            ExprKind::Binary(op, a, b) => {
                let (x, y) = (self.expr(a)?, self.expr(b)?);
                binary(*op, e.ty, a.ty, b.ty, x, y).ok_or(InterpError::Quantum(e.loc, op.symbol()))?
            }
            ExprKind::Call(name, args) => {
                let mut vals = Vec::new();
                for a in args {
                    vals.push(match (&a.kind, self.m.vars.get(var_of(a)).map(|v| v.ty)) {
                        (ExprKind::Var(n), Some(VarTy::Array(..))) => ArgVal::Array(self.resolve(n.id)),
                        _ => ArgVal::Scalar(self.expr(a)?),
                    });
                }
                let (ret, outs) = self.call(name.id, &vals, e.loc)?;
                // Copy-restore: scalar variables passed directly get the
                // parameter's final value.
                for (a, out) in args.iter().zip(outs) {
                    if let ExprKind::Var(n) = &a.kind {
                        if !self.m.vars[n.id].ty.is_array() {
                            self.set_scalar(n.id, out);
                        }
                    }
                }
                ret
            }
        })
    }
}

enum ArgVal {
    Scalar(Word),
    Array(VarId),
}

fn var_of(e: &Expr) -> VarId {
    match &e.kind {
        ExprKind::Var(n) => n.id,
        _ => UNRESOLVED,
    }
}

/// Value of a classical binary operator, exactly as lowered.
pub fn binary(op: BinOp, ty: Ty, lt: Ty, rt: Ty, x: Word, y: Word) -> Option<Word> {
    let fl = if ty == Ty::Float { 16 } else { 0 };
    let unsigned = lt == Ty::Unsigned || rt == Ty::Unsigned;
    let lt_of = |l: Word, r: Word| {
        if unsigned {
            l < r
        } else {
            (l as i32) < (r as i32)
        }
    };
    Some(match op {
        BinOp::Add => x.wrapping_add(y),
        BinOp::Sub => x.wrapping_sub(y),
        BinOp::Mul => xor_function(Opcode::Xmulk, x, y, fl),
        BinOp::Div => xor_function(Opcode::Xdivk, x, y, fl),
        BinOp::Rem => xor_function(Opcode::Xrem, x, y, 0),
        BinOp::Shl => shl(x, y),
        BinOp::Shr => shr(x, y),
        BinOp::And => x & y,
        BinOp::Or => x | y,
        BinOp::Xor => x ^ y,
        BinOp::Eq => (x == y) as Word,
        BinOp::Ne => (x != y) as Word,
        BinOp::Lt => lt_of(x, y) as Word,
        BinOp::Gt => lt_of(y, x) as Word,
        BinOp::Le => !lt_of(y, x) as Word,
        BinOp::Ge => !lt_of(x, y) as Word,
        BinOp::Had | BinOp::Phase => return None,
    })
}
