//! Calls. Arguments are copy-restored through `$a0..$a3`; control transfer
//! goes through `$tur` so that the callee's final swap lands back on the
//! call site's `swap $ur, $tur`.

use crate::diag::Loc;
use crate::isa::{Instruction, Opcode, Reg};

use super::super::ast::*;
use super::block::{inverse, push_garbage, swapm, Block};
use super::{entry_labels, CallInfo, Home, Lower, L};

fn ins(r: Result<Instruction, crate::isa::IsaError>) -> Instruction {
    r.expect("lowering emits valid instructions")
}

impl Lower<'_> {
    /// Emits every call inside `e` (innermost first), storing results in
    /// fresh hidden locals, and returns `e` with the calls replaced by those
    /// locals. The caller must discard `hidden` once it is done with `e`.
    pub(super) fn hoist(&mut self, e: &Expr, b: &mut Block, hidden: &mut Vec<VarId>) -> L<Expr> {
        if !e.has_call() {
            return Ok(e.clone());
        }
        let kind = match &e.kind {
            ExprKind::Call(f, args) => {
                let args = args.iter().map(|a| self.hoist(a, b, hidden)).collect::<L<Vec<_>>>()?;
                let h = self.hidden(e.ty, &f.text, e.loc);
                self.emit_call(f.id, &args, Some(h), e.loc, b)?;
                hidden.push(h);
                ExprKind::Var(Name { text: format!("<{}>", f.text), id: h })
            }
            ExprKind::Index(n, i) => ExprKind::Index(n.clone(), Box::new(self.hoist(i, b, hidden)?)),
            ExprKind::Unary(op, x) => ExprKind::Unary(*op, Box::new(self.hoist(x, b, hidden)?)),
            ExprKind::ToFloat(x) => ExprKind::ToFloat(Box::new(self.hoist(x, b, hidden)?)),
            ExprKind::Binary(op, x, y) => {
                let x = self.hoist(x, b, hidden)?;
                let y = self.hoist(y, b, hidden)?;
                ExprKind::Binary(*op, Box::new(x), Box::new(y))
            }
            k => k.clone(),
        };
        Ok(Expr { kind, ty: e.ty, loc: e.loc })
    }

    /// One call site. `dest` receives the return value; without it a
    /// returned value goes to the garbage stack.
    pub(super) fn emit_call(
        &mut self,
        fid: FuncId,
        args: &[Expr],
        dest: Option<VarId>,
        loc: Loc,
        b: &mut Block,
    ) -> L<()> {
        let m = self.m;
        let callee = &m.functions[fid];
        // Live temporaries would be clobbered by the callee.
        let saved: Vec<(Reg, u32)> = self.pool.take_all().into_iter().map(|r| (r, self.slot(1))).collect();
        for &(r, a) in &saved {
            b.ins(swapm(r, Reg::ZERO, a));
        }

        enum Arg {
            Var(Home),
            Computed(Vec<Instruction>, bool),
        }
        // Variables the call may change: written by-reference arguments and
        // the callee's globals. A computed argument that reads one of them
        // cannot be uncomputed afterwards.
        let mut modified: Vec<VarId> = self.globals_used[fid].iter().copied().collect();
        for (i, a) in args.iter().enumerate() {
            if let ExprKind::Var(n) = &a.kind {
                if self.param_written[fid][i] || matches!(callee.params[i].ty, VarTy::Array(..)) {
                    modified.push(n.id);
                }
            }
        }
        let mut passed = Vec::new();
        // Computed arguments first, so they still see the variables that
        // are about to be moved into argument registers.
        for (i, (a, p)) in args.iter().zip(&callee.params).enumerate() {
            let ai = Reg::arg(i);
            let arg = match (p.ty, &a.kind) {
                (VarTy::Array(..), ExprKind::Var(n)) => {
                    let code = vec![match self.home(n.id) {
                        Home::Array(base) => ins(Instruction::di(Opcode::Xori, ai, base as i32)),
                        Home::Reg(s) => ins(Instruction::da(Opcode::Xorr, ai, s)),
                        Home::Mem(pa) => ins(Instruction::dai(Opcode::Xorm, ai, Reg::ZERO, pa as i32)),
                    }];
                    Arg::Computed(code, false)
                }
                (VarTy::Scalar(_), ExprKind::Var(n)) => {
                    let v = &self.vars[n.id];
                    if v.kind == VarKind::Global && self.globals_used[fid].contains(&n.id) {
                        return Err(self.error(
                            a.loc,
                            format!("global `{}` is passed to `{}`, which also uses it directly", n.text, callee.name),
                        ));
                    }
                    Arg::Var(self.home(n.id))
                }
                _ => {
                    let mut code = Vec::new();
                    self.compute(a, ai, &mut code)?;
                    let stale = reads_any(a, &modified);
                    Arg::Computed(code, self.param_written[fid][i] || stale)
                }
            };
            if let Arg::Computed(code, _) = &arg {
                b.seq(code);
            }
            passed.push(arg);
        }
        for (i, arg) in passed.iter().enumerate() {
            if let Arg::Var(h) = arg {
                b.ins(self.swap_with(*h, Reg::arg(i)));
            }
        }

        let (entry, ret) = entry_labels(&callee.name);
        let site = self.label("call");
        let c1 = format!("{site}_c1");
        b.text(format!("addi $tur, {entry} - {c1}"));
        b.label(c1.clone());
        b.ins(ins(Instruction::da(Opcode::Swap, Reg::UR, Reg::TUR)));
        b.text(format!("addi $tur, {ret} - {c1}"));
        // The callee runs in between, and the site's swap runs twice.
        b.add_cycles(self.func_cycles[fid].map(|c| c + 1));
        self.calls.push(CallInfo { callee: callee.name.clone(), c1 });

        for (i, arg) in passed.iter().enumerate() {
            let ai = Reg::arg(i);
            match arg {
                Arg::Var(h) => b.ins(self.swap_with(*h, ai)),
                Arg::Computed(_, true) => b.seq(&push_garbage(ai)),
                Arg::Computed(code, false) => b.seq(&inverse(code)),
            }
        }
        match dest {
            Some(h) => b.ins(self.swap_with(self.home(h), Reg::V0)),
            None if callee.ret.is_some() => b.seq(&push_garbage(Reg::V0)),
            None => {}
        }

        self.pool.restore(&saved.iter().map(|s| s.0).collect::<Vec<_>>());
        for &(r, a) in saved.iter().rev() {
            b.ins(swapm(r, Reg::ZERO, a));
        }
        let _ = loc;
        Ok(())
    }
}

fn reads_any(e: &Expr, vars: &[VarId]) -> bool {
    let mut hit = false;
    e.walk(&mut |x| match &x.kind {
        ExprKind::Var(n) | ExprKind::Index(n, _) => hit |= vars.contains(&n.id),
        _ => {}
    });
    hit
}
