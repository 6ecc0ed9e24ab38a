//! Lowering of a checked module to assembly text.
//!
//! Every variable gets a static home (an `$s` register, a stack word or a
//! data word). Expressions are XOR-computed into zeroed temporaries and
//! uncomputed by running the inverted sequence backwards; values that cannot
//! be uncomputed are swapped onto the garbage stack at `$grp`.

mod block;
mod call;
mod expr;
mod stmt;

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write;

use crate::diag::{Diagnostics, Loc};
use crate::isa::{Instruction, Opcode, Reg, Word};

use super::ast::*;
use super::check::const_eval;
use block::{Block, Pool};

pub use block::TEMPS;

/// Words reserved for the garbage stack unless overridden.
pub const GARBAGE_WORDS: u32 = 4096;

/// Where a variable lives. Array parameters live in a scalar home that holds
/// the base address of the caller's array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Home {
    Reg(Reg),
    Mem(u32),
    Array(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Options {
    pub garbage_words: u32,
}

impl Default for Options {
    fn default() -> Self {
        Options { garbage_words: GARBAGE_WORDS }
    }
}

/// Registers and labels of one lowered do-while loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopInfo {
    pub top: String,
    pub end: String,
    pub counter: Reg,
    pub active: Reg,
    pub tur1: Reg,
    pub tur2: Reg,
    pub cond: Reg,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IfInfo {
    /// Label of the first `caddi`.
    pub label: String,
    pub cond: Reg,
    pub then_len: usize,
    pub else_len: usize,
    /// False when an arm contains a loop, so cycle counts could not be matched.
    pub balanced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallInfo {
    pub callee: String,
    /// Label of the call site's `swap $ur, $tur`.
    pub c1: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuncInfo {
    pub name: String,
    /// Labels of the entry and return swaps (empty for `main`).
    pub entry: String,
    pub ret: String,
    /// Cycles from entry to return inclusive, when data-independent.
    pub cycles: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarHome {
    pub name: String,
    /// `None` for globals.
    pub function: Option<String>,
    pub home: Home,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub data: Vec<Word>,
    pub stack_base: u32,
    pub garbage_base: u32,
    pub mem_words: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lowered {
    pub asm: String,
    pub layout: Layout,
    pub loops: Vec<LoopInfo>,
    pub ifs: Vec<IfInfo>,
    pub calls: Vec<CallInfo>,
    pub functions: Vec<FuncInfo>,
    pub homes: Vec<VarHome>,
    pub warnings: Diagnostics,
}

impl Lowered {
    pub fn home(&self, function: Option<&str>, name: &str) -> Option<Home> {
        self.homes.iter().find(|h| h.name == name && h.function.as_deref() == function).map(|h| h.home)
    }
}

/// Aborts lowering of the current function; the diagnostic is already
/// recorded.
pub(super) struct Stop;

type L<T> = Result<T, Stop>;

pub fn lower(m: &Module, opts: &Options) -> Result<Lowered, Diagnostics> {
    let mut l = Lower::new(m);
    l.analyze_calls();
    if l.errors.has_errors() {
        return Err(l.errors);
    }
    let data = l.assign_homes();
    let order = l.callee_first_order();
    let mut bodies: Vec<Option<Block>> = vec![None; m.functions.len()];
    for fid in order {
        if let Ok(b) = l.function(fid) {
            l.func_cycles[fid] = b.cycles;
            bodies[fid] = Some(b);
        }
    }
    if l.errors.has_errors() {
        return Err(l.errors);
    }

    let garbage_base = l.stack_next;
    let mem_words = garbage_base + opts.garbage_words.max(1);
    let mut asm = String::new();
    writeln!(asm, ".mem {mem_words}").unwrap();
    writeln!(asm, ".stack {}", l.stack_base).unwrap();
    writeln!(asm, ".garbage {garbage_base}").unwrap();
    if !data.is_empty() {
        writeln!(asm, ".data").unwrap();
        for g in &m.globals {
            let Some(Home::Mem(a) | Home::Array(a)) = l.homes[g.name.id] else { continue };
            let n = match g.ty {
                VarTy::Array(_, Some(n)) => n,
                _ => 1,
            };
            let words = &data[a as usize..(a + n) as usize];
            writeln!(asm, "    # {} @ {a}", g.name.text).unwrap();
            if words.iter().all(|w| *w == 0) {
                writeln!(asm, "    .zero {n}").unwrap();
            } else {
                let list: Vec<String> = words.iter().map(|w| (*w as i32).to_string()).collect();
                writeln!(asm, "    .word {}", list.join(", ")).unwrap();
            }
        }
        writeln!(asm, ".text").unwrap();
    }
    let main = m.function("main").expect("checked");
    let mut emit = vec![main];
    emit.extend((0..m.functions.len()).filter(|f| *f != main));
    for fid in emit {
        writeln!(asm, "# function {}", m.functions[fid].name).unwrap();
        bodies[fid].take().expect("lowered").render(&mut asm);
    }

    let functions = m
        .functions
        .iter()
        .enumerate()
        .map(|(fid, f)| {
            let (entry, ret) = if fid == main { (String::new(), String::new()) } else { entry_labels(&f.name) };
            FuncInfo { name: f.name.clone(), entry, ret, cycles: l.func_cycles[fid] }
        })
        .collect();
    let homes = l
        .vars
        .iter()
        .zip(&l.homes)
        .filter(|(v, _)| !v.name.starts_with('<'))
        .filter_map(|(v, h)| {
            let function = match v.kind {
                VarKind::Global => None,
                VarKind::Local(f) | VarKind::Param(f, _) => Some(m.functions[f].name.clone()),
            };
            Some(VarHome { name: v.name.clone(), function, home: (*h)? })
        })
        .collect();
    Ok(Lowered {
        asm,
        layout: Layout { data, stack_base: l.stack_base, garbage_base, mem_words },
        loops: l.loops,
        ifs: l.ifs,
        calls: l.calls,
        functions,
        homes,
        warnings: l.warnings,
    })
}

fn entry_labels(name: &str) -> (String, String) {
    (format!("F_{name}"), format!("R_{name}"))
}

pub(super) struct Lower<'m> {
    m: &'m Module,
    /// The module's variables followed by hidden call-result locals.
    vars: Vec<VarInfo>,
    homes: Vec<Option<Home>>,
    pool: Pool,
    errors: Diagnostics,
    warnings: Diagnostics,
    labels: usize,
    stack_base: u32,
    stack_next: u32,
    func: FuncId,
    func_cycles: Vec<Option<u64>>,
    callees: Vec<BTreeSet<FuncId>>,
    param_written: Vec<Vec<bool>>,
    /// Globals each function touches, including through its callees.
    globals_used: Vec<HashSet<VarId>>,
    loops: Vec<LoopInfo>,
    ifs: Vec<IfInfo>,
    calls: Vec<CallInfo>,
}

impl<'m> Lower<'m> {
    fn new(m: &'m Module) -> Lower<'m> {
        let n = m.functions.len();
        Lower {
            m,
            vars: m.vars.clone(),
            homes: vec![None; m.vars.len()],
            pool: Pool::default(),
            errors: Diagnostics::new(),
            warnings: Diagnostics::new(),
            labels: 0,
            stack_base: 0,
            stack_next: 0,
            func: 0,
            func_cycles: vec![None; n],
            callees: vec![BTreeSet::new(); n],
            param_written: vec![Vec::new(); n],
            globals_used: vec![HashSet::new(); n],
            loops: Vec::new(),
            ifs: Vec::new(),
            calls: Vec::new(),
        }
    }

    fn error(&mut self, loc: Loc, msg: impl Into<String>) -> Stop {
        self.errors.error(loc, msg);
        Stop
    }

    fn label(&mut self, prefix: &str) -> String {
        self.labels += 1;
        format!("{prefix}{}", self.labels)
    }

    fn slot(&mut self, n: u32) -> u32 {
        let a = self.stack_next;
        self.stack_next += n;
        a
    }

    fn home(&self, id: VarId) -> Home {
        self.homes[id].expect("every variable has a home")
    }

    /// Value of an expression known at compile time, including locals that
    /// are only ever initialized with a literal.
    fn const_value(&self, e: &Expr) -> Option<Word> {
        const_eval(e).or_else(|| match &e.kind {
            ExprKind::Var(n) => self.vars[n.id].constant,
            _ => None,
        })
    }

    /// Call graph, recursion, parameter counts, parameter writes and global
    /// usage.
    fn analyze_calls(&mut self) {
        let m = self.m;
        for (fid, f) in m.functions.iter().enumerate() {
            if f.params.len() > 4 {
                self.errors
                    .error(f.loc, format!("`{}` has {} parameters; at most 4 are supported", f.name, f.params.len()));
            }
            let mut written = vec![false; f.params.len()];
            let param_index = |id: VarId| match self.vars[id].kind {
                VarKind::Param(_, i) => Some(i),
                _ => None,
            };
            let mut mark = |id: VarId| {
                if let Some(i) = param_index(id) {
                    written[i] = true;
                }
            };
            let mut globals = HashSet::new();
            let mut callees = BTreeSet::new();
            walk_stmts(&f.body, &mut |s| {
                match &s.kind {
                    StmtKind::Assign(lv, _, _) => mark(lv.name().id),
                    StmtKind::Rz(n, ..) | StmtKind::Rol(n, _) => mark(n.id),
                    _ => {}
                }
                for e in s.exprs() {
                    e.walk(&mut |x| match &x.kind {
                        ExprKind::Call(n, args) => {
                            callees.insert(n.id);
                            for a in args {
                                if let ExprKind::Var(v) = &a.kind {
                                    mark(v.id);
                                }
                            }
                        }
                        ExprKind::Var(n) | ExprKind::Index(n, _) if self.vars[n.id].kind == VarKind::Global => {
                            globals.insert(n.id);
                        }
                        _ => {}
                    });
                }
                let target = match &s.kind {
                    StmtKind::Assign(lv, ..) => Some(lv.name().id),
                    StmtKind::Rz(n, ..) | StmtKind::Rol(n, _) => Some(n.id),
                    _ => None,
                };
                if let Some(t) = target.filter(|t| self.vars[*t].kind == VarKind::Global) {
                    globals.insert(t);
                }
            });
            self.param_written[fid] = written;
            self.globals_used[fid] = globals;
            self.callees[fid] = callees;
        }
        // Recursion: any cycle in the call graph.
        let n = m.functions.len();
        let mut state = vec![0u8; n];
        for f in 0..n {
            if let Some(cycle) = self.find_cycle(f, &mut state, &mut Vec::new()) {
                let names: Vec<&str> = cycle.iter().map(|f| m.functions[*f].name.as_str()).collect();
                let first = cycle[0];
                self.errors
                    .error(m.functions[first].loc, format!("recursion is not supported: {}", names.join(" -> ")));
                break;
            }
        }
        if self.errors.has_errors() {
            return;
        }
        for f in self.callee_first_order() {
            let mut all = self.globals_used[f].clone();
            for c in self.callees[f].clone() {
                all.extend(self.globals_used[c].iter().copied());
            }
            self.globals_used[f] = all;
        }
    }

    fn find_cycle(&self, f: FuncId, state: &mut [u8], path: &mut Vec<FuncId>) -> Option<Vec<FuncId>> {
        match state[f] {
            2 => return None,
            1 => {
                let start = path.iter().position(|p| *p == f).unwrap();
                let mut cycle = path[start..].to_vec();
                cycle.push(f);
                return Some(cycle);
            }
            _ => {}
        }
        state[f] = 1;
        path.push(f);
        for &c in &self.callees[f] {
            if let Some(cycle) = self.find_cycle(c, state, path) {
                return Some(cycle);
            }
        }
        path.pop();
        state[f] = 2;
        None
    }

    fn callee_first_order(&self) -> Vec<FuncId> {
        fn visit(l: &Lower, f: FuncId, seen: &mut [bool], out: &mut Vec<FuncId>) {
            if seen[f] {
                return;
            }
            seen[f] = true;
            for &c in &l.callees[f] {
                visit(l, c, seen, out);
            }
            out.push(f);
        }
        let mut seen = vec![false; self.m.functions.len()];
        let mut out = Vec::new();
        for f in 0..self.m.functions.len() {
            visit(self, f, &mut seen, &mut out);
        }
        out
    }

    /// Lays out globals in the data segment, then gives locals `$s`
    /// registers in program order (main first) and stack words after that.
    fn assign_homes(&mut self) -> Vec<Word> {
        let m = self.m;
        let mut data = Vec::new();
        for g in &m.globals {
            let base = data.len() as u32;
            match (g.ty, &g.init) {
                (VarTy::Scalar(_), init) => {
                    let v = match init {
                        Some(Init::Expr(e)) => const_eval(e).unwrap_or(0),
                        _ => 0,
                    };
                    data.push(v);
                    self.homes[g.name.id] = Some(Home::Mem(base));
                }
                (VarTy::Array(_, n), init) => {
                    let n = n.unwrap_or(1);
                    let mut words = vec![0; n as usize];
                    if let Some(Init::List(items)) = init {
                        for (w, e) in words.iter_mut().zip(items) {
                            *w = const_eval(e).unwrap_or(0);
                        }
                    }
                    data.extend(words);
                    self.homes[g.name.id] = Some(Home::Array(base));
                }
            }
        }
        self.stack_base = data.len() as u32;
        self.stack_next = self.stack_base;

        let main = m.function("main").expect("checked");
        let mut order = vec![main];
        order.extend((0..m.functions.len()).filter(|f| *f != main));
        let mut saved = (0..10).map(Reg::saved);
        for fid in order {
            let f = &m.functions[fid];
            let mut ids: Vec<VarId> = f.params.iter().map(|p| p.name.id).collect();
            walk_stmts(&f.body, &mut |s| {
                if let StmtKind::Decl(n, ..) = &s.kind {
                    ids.push(n.id);
                }
            });
            for id in ids {
                let home = match self.vars[id].ty {
                    VarTy::Array(_, Some(n)) if !matches!(self.vars[id].kind, VarKind::Param(..)) => {
                        Home::Array(self.slot(n))
                    }
                    _ => match saved.next() {
                        Some(r) => Home::Reg(r),
                        None => Home::Mem(self.slot(1)),
                    },
                };
                self.homes[id] = Some(home);
            }
        }
        data
    }

    /// A fresh memory-resident local holding a call result.
    fn hidden(&mut self, ty: Ty, callee: &str, loc: Loc) -> VarId {
        let id = self.vars.len();
        self.vars.push(VarInfo {
            name: format!("<{callee}>"),
            ty: VarTy::Scalar(ty),
            kind: VarKind::Local(self.func),
            loc,
            constant: None,
            in_loop: false,
        });
        let a = self.slot(1);
        self.homes.push(Some(Home::Mem(a)));
        id
    }

    fn temp(&mut self, loc: Loc) -> L<Reg> {
        match self.pool.acquire() {
            Some(r) => Ok(r),
            None => Err(self.error(
                loc,
                format!(
                    "out of temporary registers ({} available); split the expression or reduce nesting",
                    TEMPS.len()
                ),
            )),
        }
    }

    fn function(&mut self, fid: FuncId) -> L<Block> {
        let m = self.m;
        let f = &m.functions[fid];
        self.func = fid;
        self.pool = Pool::default();
        let is_main = f.name == "main";
        let mut b = Block::new();
        let (entry, ret) = entry_labels(&f.name);
        let save = if is_main { 0 } else { self.slot(1) };
        if !is_main {
            b.label(entry.clone());
            b.ins(Instruction::da(Opcode::Swap, Reg::UR, Reg::TUR).unwrap());
            b.ins(block::swapm(Reg::TUR, Reg::ZERO, save));
            for (i, p) in f.params.iter().enumerate() {
                b.ins(self.swap_with(self.home(p.name.id), Reg::arg(i)));
            }
        }
        self.stmts(&f.body, &mut b)?;
        if is_main {
            b.ins(Instruction::halt());
            return Ok(b);
        }
        for (i, p) in f.params.iter().enumerate() {
            b.ins(self.swap_with(self.home(p.name.id), Reg::arg(i)));
        }
        self.clear_locals(fid, &mut b, f.loc)?;
        b.ins(block::swapm(Reg::TUR, Reg::ZERO, save));
        b.ins(Instruction::d(Opcode::Neg, Reg::TUR).unwrap());
        b.text(format!("addi $tur, {entry} - {ret}"));
        b.label(ret);
        b.ins(Instruction::da(Opcode::Swap, Reg::UR, Reg::TUR).unwrap());
        Ok(b)
    }

    /// Exchanges a scalar home with a zero register (or back again).
    fn swap_with(&self, home: Home, r: Reg) -> Instruction {
        match home {
            Home::Reg(s) => Instruction::da(Opcode::Swap, s, r).unwrap(),
            Home::Mem(a) => block::swapm(r, Reg::ZERO, a),
            Home::Array(_) => unreachable!("arrays are passed by address"),
        }
    }

    /// Zeroes a function's declared locals before it returns: constants are
    /// uncomputed, everything else goes to the garbage stack.
    fn clear_locals(&mut self, fid: FuncId, b: &mut Block, loc: Loc) -> L<()> {
        let mut ids = Vec::new();
        walk_stmts(&self.m.functions[fid].body, &mut |s| {
            if let StmtKind::Decl(n, ..) = &s.kind {
                ids.push(n.id);
            }
        });
        for id in ids {
            let v = &self.vars[id];
            match (self.home(id), v.constant) {
                (Home::Reg(s), Some(c)) if !v.in_loop => {
                    if c != 0 {
                        b.ins(Instruction::di(Opcode::Xori, s, c as i32).unwrap());
                    }
                }
                (home, _) => self.discard(home, self.vars[id].ty, b, loc)?,
            }
        }
        Ok(())
    }

    /// Moves the contents of a home onto the garbage stack, leaving it zero.
    fn discard(&mut self, home: Home, ty: VarTy, b: &mut Block, loc: Loc) -> L<()> {
        match home {
            Home::Reg(s) => b.seq(&block::push_garbage(s)),
            Home::Mem(a) => {
                let t = self.temp(loc)?;
                b.ins(block::swapm(t, Reg::ZERO, a));
                b.seq(&block::push_garbage(t));
                self.pool.release(t);
            }
            Home::Array(base) => {
                let n = match ty {
                    VarTy::Array(_, Some(n)) => n,
                    _ => 1,
                };
                for k in 0..n {
                    self.discard(Home::Mem(base + k), VarTy::Scalar(Ty::Int), b, loc)?;
                }
            }
        }
        Ok(())
    }
}
