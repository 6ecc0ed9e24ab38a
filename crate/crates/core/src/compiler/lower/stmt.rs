//! Statements: assignments, quantum updates, `if`, `do-while` and `print`.

use std::collections::HashSet;

use crate::diag::Loc;
use crate::isa::{Instruction, Opcode, Reg};

use super::super::ast::*;
use super::block::{inverse, push_garbage, swapm, Block};
use super::{Home, IfInfo, LoopInfo, Lower, L};

fn ins(r: Result<Instruction, crate::isa::IsaError>) -> Instruction {
    r.expect("lowering emits valid instructions")
}

/// In-place update of an assignment target.
#[derive(Clone, Copy)]
enum Update<'e> {
    Acc(BinOp, &'e Expr),
    Not,
    Neg,
    Quantum(Opcode, i32),
}

fn is_var(e: &Expr, id: VarId) -> bool {
    matches!(&e.kind, ExprKind::Var(n) if n.id == id)
}

fn reads(e: &Expr, id: VarId) -> bool {
    e.reads().contains(&id)
}

impl Lower<'_> {
    pub(super) fn stmts(&mut self, ss: &[Stmt], b: &mut Block) -> L<()> {
        for s in ss {
            self.stmt(s, b)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt, b: &mut Block) -> L<()> {
        match &s.kind {
            StmtKind::Decl(n, ty, init) => self.decl(n.id, *ty, init.as_ref(), s.loc, b),
            StmtKind::Assign(lv, op, e) => self.assign(lv, *op, e, s.loc, b),
            StmtKind::If(c, t, e) => self.if_stmt(c, t, e, s.loc, b),
            StmtKind::DoWhile(body, c) => self.do_while(body, c, s.loc, b),
            StmtKind::Print(e) => {
                let mut hidden = Vec::new();
                let e = self.hoist(e, b, &mut hidden)?;
                let home = match &e.kind {
                    ExprKind::Var(n) => Some(self.home(n.id)),
                    _ => None,
                };
                match home {
                    Some(Home::Reg(r)) => b.ins(ins(Instruction::d(Opcode::Meas, r))),
                    _ => {
                        let t = self.temp(e.loc)?;
                        let mut code = Vec::new();
                        self.compute(&e, t, &mut code)?;
                        b.seq(&code);
                        b.ins(ins(Instruction::d(Opcode::Meas, t)));
                        b.seq(&inverse(&code));
                        self.pool.release(t);
                    }
                }
                self.discard_hidden(&hidden, b, s.loc)
            }
            StmtKind::Return(e) => {
                let Some(e) = e else { return Ok(()) };
                if self.m.functions[self.func].name == "main" {
                    return Ok(());
                }
                let mut hidden = Vec::new();
                let e = self.hoist(e, b, &mut hidden)?;
                let mut code = Vec::new();
                self.compute(&e, Reg::V0, &mut code)?;
                b.seq(&code);
                self.discard_hidden(&hidden, b, s.loc)
            }
            StmtKind::Call(e) => {
                let ExprKind::Call(f, args) = &e.kind else { unreachable!() };
                let mut hidden = Vec::new();
                let args = args.iter().map(|a| self.hoist(a, b, &mut hidden)).collect::<L<Vec<_>>>()?;
                self.emit_call(f.id, &args, None, e.loc, b)?;
                self.discard_hidden(&hidden, b, s.loc)
            }
            StmtKind::Rz(n, bit, k) => {
                let (bit, k) = (*bit, *k);
                self.update_home(self.home(n.id), |r| vec![ins(Instruction::rzk(r, bit, k))], s.loc, b)
            }
            StmtKind::Rol(n, k) => {
                let k = (*k % 32) as i32;
                if k == 0 {
                    return Ok(());
                }
                self.update_home(self.home(n.id), |r| vec![ins(Instruction::di(Opcode::Roti, r, k))], s.loc, b)
            }
        }
    }

    /// Applies straight-line code to a scalar home through a register.
    fn update_home(&mut self, home: Home, f: impl FnOnce(Reg) -> Vec<Instruction>, loc: Loc, b: &mut Block) -> L<()> {
        match home {
            Home::Reg(s) => b.seq(&f(s)),
            Home::Mem(a) => {
                let t = self.temp(loc)?;
                b.ins(swapm(t, Reg::ZERO, a));
                b.seq(&f(t));
                b.ins(swapm(t, Reg::ZERO, a));
                self.pool.release(t);
            }
            Home::Array(_) => unreachable!("checked scalar"),
        }
        Ok(())
    }

    pub(super) fn discard_hidden(&mut self, hidden: &[VarId], b: &mut Block, loc: Loc) -> L<()> {
        for &h in hidden {
            self.discard(self.home(h), VarTy::Scalar(Ty::Int), b, loc)?;
        }
        Ok(())
    }

    fn decl(&mut self, id: VarId, ty: VarTy, init: Option<&Init>, loc: Loc, b: &mut Block) -> L<()> {
        let home = self.home(id);
        if self.vars[id].in_loop {
            // The previous iteration's value is still there.
            self.discard(home, ty, b, loc)?;
        }
        match init {
            None => Ok(()),
            Some(Init::List(items)) => {
                let Home::Array(base) = home else { unreachable!() };
                for (k, e) in items.iter().enumerate() {
                    let mut hidden = Vec::new();
                    let e = self.hoist(e, b, &mut hidden)?;
                    self.store_fresh(Home::Mem(base + k as u32), &e, b)?;
                    self.discard_hidden(&hidden, b, loc)?;
                }
                Ok(())
            }
            Some(Init::Expr(e)) => {
                if let ExprKind::Binary(op @ (BinOp::Had | BinOp::Phase), base, bits) = &e.kind {
                    let Some(v) = self.const_value(base) else {
                        return Err(self
                            .error(base.loc, "the operand of `@` or `#` must be a constant or the assigned variable"));
                    };
                    let n = self.bit_count(bits)?;
                    let opc = if *op == BinOp::Had { Opcode::Hq } else { Opcode::Zq };
                    let mut code = Vec::new();
                    return self.update_home(
                        home,
                        |r| {
                            if v != 0 {
                                code.push(ins(Instruction::di(Opcode::Xori, r, v as i32)));
                            }
                            code.push(ins(Instruction::di(opc, r, n)));
                            code
                        },
                        loc,
                        b,
                    );
                }
                let mut hidden = Vec::new();
                let e = self.hoist(e, b, &mut hidden)?;
                self.store_fresh(home, &e, b)?;
                self.discard_hidden(&hidden, b, loc)
            }
        }
    }

    /// Computes `e` into a home that is known to be zero.
    fn store_fresh(&mut self, home: Home, e: &Expr, b: &mut Block) -> L<()> {
        let mut code = Vec::new();
        match home {
            Home::Reg(s) => self.compute(e, s, &mut code)?,
            Home::Mem(a) => {
                if self.const_value(e) == Some(0) {
                    return Ok(());
                }
                let t = self.temp(e.loc)?;
                self.compute(e, t, &mut code)?;
                code.push(swapm(t, Reg::ZERO, a));
                self.pool.release(t);
            }
            Home::Array(_) => unreachable!(),
        }
        b.seq(&code);
        Ok(())
    }

    fn assign(&mut self, lv: &LValue, op: AssignOp, e: &Expr, loc: Loc, b: &mut Block) -> L<()> {
        let target = lv.name().id;
        let lv_expr = || {
            let kind = match lv {
                LValue::Var(n) => ExprKind::Var(n.clone()),
                LValue::Index(n, i) => ExprKind::Index(n.clone(), i.clone()),
            };
            Expr { kind, ty: self.vars[target].ty.elem(), loc }
        };
        let binary = |op: BinOp| Expr {
            kind: ExprKind::Binary(op, Box::new(lv_expr()), Box::new(e.clone())),
            ty: self.vars[target].ty.elem(),
            loc,
        };
        let index_reads_target = matches!(lv, LValue::Index(_, i) if reads(i, target));
        match op {
            AssignOp::Had | AssignOp::Phase => {
                let LValue::Var(_) = lv else {
                    return Err(self.error(loc, "`@=` and `#=` need a scalar variable target"));
                };
                let n = self.bit_count(e)?;
                let opc = if op == AssignOp::Had { Opcode::Hq } else { Opcode::Zq };
                self.update(lv, Update::Quantum(opc, n), loc, b)
            }
            AssignOp::Add | AssignOp::Sub => {
                let bop = if op == AssignOp::Add { BinOp::Add } else { BinOp::Sub };
                if reads(e, target) || index_reads_target {
                    self.set(lv, &binary(bop), loc, b)
                } else {
                    self.update(lv, Update::Acc(bop, e), loc, b)
                }
            }
            AssignOp::Mul => self.set(lv, &binary(BinOp::Mul), loc, b),
            AssignOp::Div => self.set(lv, &binary(BinOp::Div), loc, b),
            AssignOp::Rem => self.set(lv, &binary(BinOp::Rem), loc, b),
            AssignOp::Set => {
                if let LValue::Var(_) = lv {
                    if is_var(e, target) {
                        return Ok(());
                    }
                    if let Some(u) = self.in_place(target, e)? {
                        return self.update(lv, u, loc, b);
                    }
                }
                if let ExprKind::Binary(op @ (BinOp::Had | BinOp::Phase), base, bits) = &e.kind {
                    // `x = c @ n` with a literal base: prepare in a temp.
                    let Some(v) = self.const_value(base) else {
                        return Err(self
                            .error(base.loc, "the operand of `@` or `#` must be a constant or the assigned variable"));
                    };
                    let n = self.bit_count(bits)?;
                    let opc = if *op == BinOp::Had { Opcode::Hq } else { Opcode::Zq };
                    let t = self.temp(loc)?;
                    if v != 0 {
                        b.ins(ins(Instruction::di(Opcode::Xori, t, v as i32)));
                    }
                    b.ins(ins(Instruction::di(opc, t, n)));
                    self.swap_into(lv, t, loc, b)?;
                    b.seq(&push_garbage(t));
                    self.pool.release(t);
                    return Ok(());
                }
                self.set(lv, e, loc, b)
            }
        }
    }

    /// Recognizes `x = x + e`, `x = e ^ x`, `x = ~x`, `x = x @ n` and
    /// friends, which update `x` without leaving garbage.
    fn in_place<'e>(&mut self, x: VarId, e: &'e Expr) -> L<Option<Update<'e>>> {
        Ok(match &e.kind {
            ExprKind::Binary(op @ (BinOp::Add | BinOp::Xor), l, r) if is_var(l, x) && !reads(r, x) => {
                Some(Update::Acc(*op, r))
            }
            ExprKind::Binary(op @ (BinOp::Add | BinOp::Xor), l, r) if is_var(r, x) && !reads(l, x) => {
                Some(Update::Acc(*op, l))
            }
            ExprKind::Binary(BinOp::Sub, l, r) if is_var(l, x) && !reads(r, x) => Some(Update::Acc(BinOp::Sub, r)),
            ExprKind::Unary(UnOp::Not, v) if is_var(v, x) => Some(Update::Not),
            ExprKind::Unary(UnOp::Neg, v) if is_var(v, x) => Some(Update::Neg),
            ExprKind::Binary(op @ (BinOp::Had | BinOp::Phase), l, bits) if is_var(l, x) => {
                let n = self.bit_count(bits)?;
                Some(Update::Quantum(if *op == BinOp::Had { Opcode::Hq } else { Opcode::Zq }, n))
            }
            _ => None,
        })
    }

    /// Garbage-free in-place update.
    fn update(&mut self, lv: &LValue, u: Update, loc: Loc, b: &mut Block) -> L<()> {
        let mut hidden = Vec::new();
        let rhs = match u {
            Update::Acc(_, e) => Some(self.hoist(e, b, &mut hidden)?),
            _ => None,
        };
        let mut code = Vec::new();
        let (r, addr, opened) = match lv {
            LValue::Var(n) => match self.home(n.id) {
                Home::Reg(s) => (s, None, None),
                Home::Mem(a) => {
                    let t = self.temp(loc)?;
                    code.push(swapm(t, Reg::ZERO, a));
                    (t, None, Some(swapm(t, Reg::ZERO, a)))
                }
                Home::Array(_) => unreachable!(),
            },
            LValue::Index(n, i) => {
                let a = self.address(n.id, i, &mut code)?;
                let t = self.temp(loc)?;
                let sw = ins(Instruction::dai(Opcode::Swapm, t, a.reg, a.imm));
                code.push(sw);
                (t, Some(a), Some(sw))
            }
        };
        match u {
            Update::Acc(op, _) => self.accumulate(op, r, rhs.as_ref().unwrap(), &mut code)?,
            Update::Not => code.push(ins(Instruction::d(Opcode::Notr, r))),
            Update::Neg => code.push(ins(Instruction::d(Opcode::Neg, r))),
            Update::Quantum(op, n) => code.push(ins(Instruction::di(op, r, n))),
        }
        if let Some(sw) = opened {
            code.push(sw);
            self.pool.release(r);
        }
        if let Some(a) = addr {
            self.drop_addr(a, &mut code);
        }
        b.seq(&code);
        self.discard_hidden(&hidden, b, loc)
    }

    /// General assignment: the old value goes to the garbage stack.
    fn set(&mut self, lv: &LValue, e: &Expr, loc: Loc, b: &mut Block) -> L<()> {
        if let LValue::Index(n, i) = lv {
            if reads(i, n.id) {
                return Err(
                    self.error(i.loc, format!("the index of an assigned element cannot read `{}` itself", n.text))
                );
            }
        }
        let mut hidden = Vec::new();
        let e = self.hoist(e, b, &mut hidden)?;
        let t = self.temp(loc)?;
        let mut code = Vec::new();
        self.compute(&e, t, &mut code)?;
        b.seq(&code);
        self.swap_into(lv, t, loc, b)?;
        b.seq(&push_garbage(t));
        self.pool.release(t);
        self.discard_hidden(&hidden, b, loc)
    }

    /// Exchanges register `t` with the target's storage.
    fn swap_into(&mut self, lv: &LValue, t: Reg, loc: Loc, b: &mut Block) -> L<()> {
        match lv {
            LValue::Var(n) => b.ins(self.swap_with(self.home(n.id), t)),
            LValue::Index(n, i) => {
                if reads(i, n.id) {
                    return Err(
                        self.error(loc, format!("the index of an assigned element cannot read `{}` itself", n.text))
                    );
                }
                let mut code = Vec::new();
                let a = self.address(n.id, i, &mut code)?;
                code.push(ins(Instruction::dai(Opcode::Swapm, t, a.reg, a.imm)));
                self.drop_addr(a, &mut code);
                b.seq(&code);
            }
        }
        Ok(())
    }

    fn if_stmt(&mut self, cond: &Expr, then: &[Stmt], els: &[Stmt], loc: Loc, b: &mut Block) -> L<()> {
        let mut hidden = Vec::new();
        let cond = self.hoist(cond, b, &mut hidden)?;
        let c = self.temp(loc)?;
        let code = self.compute_bit(&cond, c)?;
        b.seq(&code);
        let mut tb = Block::new();
        self.stmts(then, &mut tb)?;
        let mut eb = Block::new();
        self.stmts(els, &mut eb)?;
        self.emit_if(c, tb, eb, loc, b);
        let mut written = self.writes(then);
        written.extend(self.writes(els));
        if cond.reads().iter().any(|v| written.contains(v)) {
            b.seq(&push_garbage(c));
        } else {
            b.seq(&inverse(&code));
        }
        self.pool.release(c);
        self.discard_hidden(&hidden, b, loc)
    }

    /// The two-armed `caddi` diamond on condition bit `c`, with the arms
    /// padded to equal cycle counts.
    pub(super) fn emit_if(&mut self, c: Reg, mut tb: Block, mut eb: Block, loc: Loc, b: &mut Block) {
        let balanced = match (tb.cycles, eb.cycles) {
            (Some(x), Some(y)) => {
                if x < y {
                    tb.pad(y - x);
                } else {
                    eb.pad(x - y);
                }
                true
            }
            _ => {
                self.warnings.warning(
                    loc,
                    "an arm of this `if` contains a loop, so its arms may take different numbers of cycles and will not interfere",
                );
                false
            }
        };
        let (x, y) = (tb.len as i32, eb.len as i32);
        let arm_cycles = tb.cycles.and(eb.cycles);
        let label = self.label("if");
        self.ifs.push(IfInfo { label: label.clone(), cond: c, then_len: tb.len, else_len: eb.len, balanced });
        b.label(label);
        b.ins(ins(Instruction::caddi(c, false, Reg::UR, x)));
        b.append_raw(tb);
        b.ins(ins(Instruction::caddi(c, false, Reg::UR, -x)));
        b.ins(ins(Instruction::caddi(c, true, Reg::UR, y)));
        b.append_raw(eb);
        b.ins(ins(Instruction::caddi(c, true, Reg::UR, -y)));
        b.add_cycles(arm_cycles);
    }

    /// Variables a statement list may modify, including through calls.
    fn writes(&self, ss: &[Stmt]) -> HashSet<VarId> {
        let mut w = HashSet::new();
        walk_stmts(ss, &mut |s| {
            match &s.kind {
                StmtKind::Assign(_, AssignOp::Phase, _) | StmtKind::Rz(..) => {}
                StmtKind::Assign(lv, ..) => {
                    w.insert(lv.name().id);
                }
                StmtKind::Rol(n, _) | StmtKind::Decl(n, ..) => {
                    w.insert(n.id);
                }
                _ => {}
            }
            for e in s.exprs() {
                e.walk(&mut |x| {
                    if let ExprKind::Call(f, args) = &x.kind {
                        w.extend(self.globals_used[f.id].iter().copied());
                        for a in args {
                            if let ExprKind::Var(n) = &a.kind {
                                w.insert(n.id);
                            }
                        }
                    }
                });
            }
        });
        w
    }

    fn do_while(&mut self, body: &[Stmt], cond: &Expr, loc: Loc, b: &mut Block) -> L<()> {
        // Structural temps of enclosing constructs are not needed inside the
        // loop; park them so the loop gets the whole pool.
        let parked: Vec<(Reg, u32)> = self.pool.take_all().into_iter().map(|r| (r, self.slot(1))).collect();
        for &(r, a) in &parked {
            b.ins(swapm(r, Reg::ZERO, a));
        }
        let mut regs = [Reg::ZERO; 6];
        for r in regs.iter_mut() {
            *r = self.temp(loc)?;
        }
        let [ctr, act, t1, t2, c, g] = regs;
        let top = self.label("L");
        let end = format!("{top}_end");
        let top = format!("{top}_top");
        self.loops.push(LoopInfo {
            top: top.clone(),
            end: end.clone(),
            counter: ctr,
            active: act,
            tur1: t1,
            tur2: t2,
            cond: c,
        });

        // Condition evaluation, placed after the body.
        let mut tail = Block::new();
        let mut hidden = Vec::new();
        let cond = self.hoist(cond, &mut tail, &mut hidden)?;
        let cond_code = self.compute_bit(&cond, c)?;

        // Loop top: on every iteration but the first, uncompute the previous
        // condition bit, guarded by counter != 0.
        let mut guard = Block::new();
        let gcode = [ins(Instruction::dab(Opcode::Xeq, g, ctr, Reg::ZERO)), ins(Instruction::di(Opcode::Xori, g, 1))];
        guard.seq(&gcode);
        let mut undo = Block::new();
        undo.seq(&inverse(&cond_code));
        self.emit_if(g, undo, Block::new(), loc, &mut guard);
        guard.seq(&inverse(&gcode));
        self.pool.release(g);
        self.discard_hidden(&hidden, &mut guard, loc)?;

        // The body gets the whole pool: the loop registers are parked in
        // memory and the condition bit is zero until the body is done.
        let live = [ctr, act, t1, t2];
        let slots: Vec<(Reg, u32)> = live.iter().map(|&r| (r, self.slot(1))).collect();
        for r in [c, t2, t1, act, ctr] {
            self.pool.release(r);
        }
        let mut inner = Block::new();
        for &(r, a) in &slots {
            inner.ins(swapm(r, Reg::ZERO, a));
        }
        self.stmts(body, &mut inner)?;
        for &(r, a) in slots.iter().rev() {
            inner.ins(swapm(r, Reg::ZERO, a));
        }
        self.pool.restore(&[ctr, act, t1, t2, c]);

        b.ins(ins(Instruction::di(Opcode::Addi, t1, 1)));
        b.text(format!("addi {t2}, {top} - {end}"));
        b.label(top.clone());
        b.ins(ins(Instruction::tcs(ctr, act, t1, t2)));
        b.text(format!("tcai {ctr}, {act}, {t1}, {t2}, {end} - {top} + 1"));
        b.ins(ins(Instruction::czaddi(ctr, t1, -1)));
        b.append(guard);
        b.append(inner);
        b.ins(ins(Instruction::di(Opcode::Addi, ctr, 1)));
        b.append(tail);
        b.seq(&cond_code);
        b.label(end.clone());
        b.text(format!("caddi {c}, 1, $ur, {top} - {end} - 1"));
        b.ins(ins(Instruction::cond_da(Opcode::Cswap, ctr, false, t1, t2)));
        b.ins(ins(Instruction::di(Opcode::Addi, t2, -1)));
        b.ins(ins(Instruction::di(Opcode::Xori, act, 1)));
        b.seq(&push_garbage(ctr));
        self.discard_hidden(&hidden, b, loc)?;
        b.add_cycles(None);
        for r in [c, t2, t1, act, ctr] {
            self.pool.release(r);
        }

        self.pool.restore(&parked.iter().map(|p| p.0).collect::<Vec<_>>());
        for &(r, a) in parked.iter().rev() {
            b.ins(swapm(r, Reg::ZERO, a));
        }
        Ok(())
    }
}
