//! Syntax tree. The parser fills in names; the checker resolves them to
//! ids and annotates every expression with its type.

use std::fmt;

use crate::diag::Loc;
use crate::isa::Word;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ty {
    Int,
    Unsigned,
    Float,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ty::Int => "int",
            Ty::Unsigned => "unsigned int",
            Ty::Float => "float",
        })
    }
}

/// Declared type of a variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarTy {
    Scalar(Ty),
    /// Element type and length; array parameters have no length.
    Array(Ty, Option<u32>),
}

impl VarTy {
    pub fn elem(self) -> Ty {
        match self {
            VarTy::Scalar(t) | VarTy::Array(t, _) => t,
        }
    }

    pub fn is_array(self) -> bool {
        matches!(self, VarTy::Array(..))
    }
}

pub type VarId = usize;
pub type FuncId = usize;

pub const UNRESOLVED: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Global,
    Local(FuncId),
    Param(FuncId, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarInfo {
    pub name: String,
    pub ty: VarTy,
    pub kind: VarKind,
    pub loc: Loc,
    /// Set for locals whose only write is a literal initializer.
    pub constant: Option<Word>,
    /// Declared inside a do-while body, so its home may be dirty on entry.
    pub in_loop: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Shl,
    Shr,
    And,
    Or,
    Xor,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    /// `a @ b`: Hadamard on the low `b` bits.
    Had,
    /// `a # b`: Z on the low `b` bits.
    Phase,
}

impl BinOp {
    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }

    pub fn is_quantum(self) -> bool {
        matches!(self, BinOp::Had | BinOp::Phase)
    }

    pub fn symbol(self) -> &'static str {
        use BinOp::*;
        match self {
            Add => "+",
            Sub => "-",
            Mul => "*",
            Div => "/",
            Rem => "%",
            Shl => "<<",
            Shr => ">>",
            And => "&",
            Or => "|",
            Xor => "^",
            Eq => "==",
            Ne => "!=",
            Lt => "<",
            Le => "<=",
            Gt => ">",
            Ge => ">=",
            Had => "@",
            Phase => "#",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Name {
    pub text: String,
    pub id: usize,
}

impl Name {
    pub fn new(text: impl Into<String>) -> Name {
        Name { text: text.into(), id: UNRESOLVED }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    /// Integer literal bit pattern.
    Int(Word),
    /// Float literal, already in Q16.16.
    Float(Word),
    Var(Name),
    Index(Name, Box<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Name, Vec<Expr>),
    /// Conversion of an integer to Q16.16, inserted by the checker.
    ToFloat(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub ty: Ty,
    pub loc: Loc,
}

impl Expr {
    pub fn new(kind: ExprKind, loc: Loc) -> Expr {
        Expr { kind, ty: Ty::Int, loc }
    }

    /// Visits this expression and all subexpressions, parents first.
    pub fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Index(_, i) => i.walk(f),
            ExprKind::Unary(_, e) | ExprKind::ToFloat(e) => e.walk(f),
            ExprKind::Binary(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            ExprKind::Call(_, args) => args.iter().for_each(|a| a.walk(f)),
            _ => {}
        }
    }

    /// Variables (scalars and arrays) read by this expression.
    pub fn reads(&self) -> Vec<VarId> {
        let mut v = Vec::new();
        self.walk(&mut |e| match &e.kind {
            ExprKind::Var(n) | ExprKind::Index(n, _) => v.push(n.id),
            ExprKind::Call(_, args) => {
                for a in args {
                    if let ExprKind::Var(n) = &a.kind {
                        v.push(n.id);
                    }
                }
            }
            _ => {}
        });
        v
    }

    pub fn has_call(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= matches!(e.kind, ExprKind::Call(..)));
        found
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Had,
    Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LValue {
    Var(Name),
    Index(Name, Box<Expr>),
}

impl LValue {
    pub fn name(&self) -> &Name {
        match self {
            LValue::Var(n) | LValue::Index(n, _) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Expr(Expr),
    List(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Decl(Name, VarTy, Option<Init>),
    Assign(LValue, AssignOp, Expr),
    If(Expr, Vec<Stmt>, Vec<Stmt>),
    DoWhile(Vec<Stmt>, Expr),
    Print(Expr),
    Return(Option<Expr>),
    /// A call whose value, if any, is discarded.
    Call(Expr),
    /// `rz(x, bit, k);` phase `e^(2 pi i / 2^k)` when bit `bit` of x is set.
    Rz(Name, u8, i32),
    /// `rol(x, k);` rotate left by a constant.
    Rol(Name, u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub loc: Loc,
}

impl Stmt {
    /// Expressions that appear directly in this statement (not in nested
    /// blocks).
    pub fn exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Decl(_, _, Some(Init::Expr(e))) => vec![e],
            StmtKind::Decl(_, _, Some(Init::List(items))) => items.iter().collect(),
            StmtKind::Assign(LValue::Index(_, i), _, e) => vec![i, e],
            StmtKind::Assign(_, _, e)
            | StmtKind::If(e, _, _)
            | StmtKind::DoWhile(_, e)
            | StmtKind::Print(e)
            | StmtKind::Call(e)
            | StmtKind::Return(Some(e)) => vec![e],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: Name,
    pub ty: VarTy,
    pub loc: Loc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Function {
    pub name: String,
    /// `None` for `void`.
    pub ret: Option<Ty>,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub loc: Loc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDecl {
    pub name: Name,
    pub ty: VarTy,
    pub init: Option<Init>,
    pub loc: Loc,
}

/// A parsed (and, after checking, typed) translation unit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Module {
    pub globals: Vec<GlobalDecl>,
    pub functions: Vec<Function>,
    /// Filled by the checker: every variable, indexed by `VarId`.
    pub vars: Vec<VarInfo>,
}

impl Module {
    pub fn function(&self, name: &str) -> Option<FuncId> {
        self.functions.iter().position(|f| f.name == name)
    }
}

/// Visits statements recursively, parents first.
pub fn walk_stmts<'a>(stmts: &'a [Stmt], f: &mut impl FnMut(&'a Stmt)) {
    for s in stmts {
        f(s);
        match &s.kind {
            StmtKind::If(_, a, b) => {
                walk_stmts(a, f);
                walk_stmts(b, f);
            }
            StmtKind::DoWhile(body, _) => walk_stmts(body, f),
            _ => {}
        }
    }
}
