//! Expressions: `compute(e, t)` XORs the value of `e` into the zero register
//! `t` and leaves every other temporary zero again.

use crate::isa::{Instruction, Opcode, Reg};

use super::super::ast::*;
use super::block::inverse;
use super::{Home, Lower, Stop, L};

/// A register holding an operand. Temporaries carry the code that filled
/// them so they can be uncomputed.
pub(super) struct Val {
    pub reg: Reg,
    code: Vec<Instruction>,
    temp: bool,
}

/// An address `reg + imm` into memory, with the code that produced `reg`.
pub(super) struct Addr {
    pub reg: Reg,
    pub imm: i32,
    code: Vec<Instruction>,
    temps: Vec<Reg>,
}

fn ins(r: Result<Instruction, crate::isa::IsaError>) -> Instruction {
    r.expect("lowering emits valid instructions")
}

impl Lower<'_> {
    pub(super) fn operand(&mut self, e: &Expr, out: &mut Vec<Instruction>) -> L<Val> {
        if self.const_value(e) == Some(0) {
            return Ok(Val { reg: Reg::ZERO, code: Vec::new(), temp: false });
        }
        if let ExprKind::Var(n) = &e.kind {
            if let Home::Reg(s) = self.home(n.id) {
                return Ok(Val { reg: s, code: Vec::new(), temp: false });
            }
        }
        let t = self.temp(e.loc)?;
        let mut code = Vec::new();
        self.compute(e, t, &mut code)?;
        out.extend_from_slice(&code);
        Ok(Val { reg: t, code, temp: true })
    }

    pub(super) fn drop_val(&mut self, v: Val, out: &mut Vec<Instruction>) {
        if v.temp {
            out.extend(inverse(&v.code));
            self.pool.release(v.reg);
        }
    }

    /// Address of `arr[idx]`.
    pub(super) fn address(&mut self, arr: VarId, idx: &Expr, out: &mut Vec<Instruction>) -> L<Addr> {
        let home = self.home(arr);
        if let Home::Array(base) = home {
            if let Some(c) = self.const_value(idx) {
                return Ok(Addr {
                    reg: Reg::ZERO,
                    imm: base.wrapping_add(c) as i32,
                    code: Vec::new(),
                    temps: Vec::new(),
                });
            }
        }
        let u = self.temp(idx.loc)?;
        let mut code = Vec::new();
        self.compute(idx, u, &mut code)?;
        let temps = vec![u];
        let imm = match home {
            Home::Array(base) => base as i32,
            Home::Reg(p) => {
                code.push(ins(Instruction::da(Opcode::Add, u, p)));
                0
            }
            Home::Mem(pa) => {
                let w = self.temp(idx.loc)?;
                code.push(ins(Instruction::dai(Opcode::Xorm, w, Reg::ZERO, pa as i32)));
                code.push(ins(Instruction::da(Opcode::Add, u, w)));
                code.push(ins(Instruction::dai(Opcode::Xorm, w, Reg::ZERO, pa as i32)));
                self.pool.release(w);
                0
            }
        };
        out.extend_from_slice(&code);
        Ok(Addr { reg: u, imm, code, temps })
    }

    pub(super) fn drop_addr(&mut self, a: Addr, out: &mut Vec<Instruction>) {
        out.extend(inverse(&a.code));
        for t in a.temps {
            self.pool.release(t);
        }
    }

    pub(super) fn compute(&mut self, e: &Expr, t: Reg, out: &mut Vec<Instruction>) -> L<()> {
        if let Some(v) = self.const_value(e) {
            if v != 0 {
                out.push(ins(Instruction::di(Opcode::Xori, t, v as i32)));
            }
            return Ok(());
        }
        match &e.kind {
            ExprKind::Var(n) => match self.home(n.id) {
                Home::Reg(s) => out.push(ins(Instruction::da(Opcode::Xorr, t, s))),
                Home::Mem(a) => out.push(ins(Instruction::dai(Opcode::Xorm, t, Reg::ZERO, a as i32))),
                Home::Array(_) => return Err(self.error(e.loc, format!("array `{}` used as a value", n.text))),
            },
            ExprKind::Index(n, i) => {
                let a = self.address(n.id, i, out)?;
                out.push(ins(Instruction::dai(Opcode::Xorm, t, a.reg, a.imm)));
                self.drop_addr(a, out);
            }
            ExprKind::ToFloat(x) => {
                let v = self.operand(x, out)?;
                out.push(ins(Instruction::dai(Opcode::Xsll, t, v.reg, 16)));
                self.drop_val(v, out);
            }
            ExprKind::Unary(op, x) => {
                self.compute(x, t, out)?;
                let op = if *op == UnOp::Neg { Opcode::Neg } else { Opcode::Notr };
                out.push(ins(Instruction::d(op, t)));
            }
            ExprKind::Binary(op, a, b) => self.binary(e, *op, a, b, t, out)?,
            ExprKind::Call(..) => unreachable!("calls are hoisted before expressions are lowered"),
            ExprKind::Int(_) | ExprKind::Float(_) => unreachable!("literals are constants"),
        }
        Ok(())
    }

    fn binary(&mut self, e: &Expr, op: BinOp, a: &Expr, b: &Expr, t: Reg, out: &mut Vec<Instruction>) -> L<()> {
        use BinOp::*;
        match op {
            Add | Sub | Xor => {
                self.compute(a, t, out)?;
                return self.accumulate(op, t, b, out);
            }
            Had | Phase => return Err(self.quantum_position(e)),
            Shl | Shr => {
                let Some(k) = self.const_value(b) else {
                    return Err(self.error(b.loc, "shift amount must be a constant"));
                };
                let x = self.operand(a, out)?;
                if k < 32 {
                    let opc = if op == Shl { Opcode::Xsll } else { Opcode::Xsrl };
                    out.push(ins(Instruction::dai(opc, t, x.reg, k as i32)));
                }
                self.drop_val(x, out);
                return Ok(());
            }
            _ => {}
        }
        let x = self.operand(a, out)?;
        let y = self.operand(b, out)?;
        let frac = if e.ty == Ty::Float { 16 } else { 0 };
        let unsigned = a.ty == Ty::Unsigned || b.ty == Ty::Unsigned;
        let lt = if unsigned { Opcode::Xltu } else { Opcode::Xslt };
        let flip = ins(Instruction::di(Opcode::Xori, t, 1));
        let (xr, yr) = (x.reg, y.reg);
        match op {
            Mul => out.push(ins(Instruction::dabi(Opcode::Xmulk, t, xr, yr, frac))),
            Div => out.push(ins(Instruction::dabi(Opcode::Xdivk, t, xr, yr, frac))),
            Rem => out.push(ins(Instruction::dab(Opcode::Xrem, t, xr, yr))),
            And => out.push(ins(Instruction::dab(Opcode::Xand, t, xr, yr))),
            Or => out.push(ins(Instruction::dab(Opcode::Xior, t, xr, yr))),
            Eq => out.push(ins(Instruction::dab(Opcode::Xeq, t, xr, yr))),
            Ne => out.extend([ins(Instruction::dab(Opcode::Xeq, t, xr, yr)), flip]),
            Lt => out.push(ins(Instruction::dab(lt, t, xr, yr))),
            Gt => out.push(ins(Instruction::dab(lt, t, yr, xr))),
            Le => out.extend([ins(Instruction::dab(lt, t, yr, xr)), flip]),
            Ge => out.extend([ins(Instruction::dab(lt, t, xr, yr)), flip]),
            Add | Sub | Xor | Shl | Shr | Had | Phase => unreachable!(),
        }
        self.drop_val(y, out);
        self.drop_val(x, out);
        Ok(())
    }

    /// `t += b`, `t -= b` or `t ^= b` for a register `t` that `b` does not
    /// read.
    pub(super) fn accumulate(&mut self, op: BinOp, t: Reg, b: &Expr, out: &mut Vec<Instruction>) -> L<()> {
        let (imm_op, reg_op) = match op {
            BinOp::Add => (Opcode::Addi, Opcode::Add),
            BinOp::Sub => (Opcode::Addi, Opcode::Sub),
            BinOp::Xor => (Opcode::Xori, Opcode::Xorr),
            _ => unreachable!(),
        };
        if let Some(v) = self.const_value(b) {
            let v = if op == BinOp::Sub { v.wrapping_neg() } else { v };
            if v != 0 {
                out.push(ins(Instruction::di(imm_op, t, v as i32)));
            }
            return Ok(());
        }
        let y = self.operand(b, out)?;
        out.push(ins(Instruction::da(reg_op, t, y.reg)));
        self.drop_val(y, out);
        Ok(())
    }

    /// Computes a 0/1 truth value of `e` into `c`.
    pub(super) fn compute_bit(&mut self, e: &Expr, c: Reg) -> L<Vec<Instruction>> {
        let mut code = Vec::new();
        match &e.kind {
            ExprKind::Binary(op, ..) if op.is_comparison() => self.compute(e, c, &mut code)?,
            _ => match self.const_value(e) {
                Some(v) => {
                    if v != 0 {
                        code.push(ins(Instruction::di(Opcode::Xori, c, 1)));
                    }
                }
                None => {
                    let v = self.operand(e, &mut code)?;
                    code.push(ins(Instruction::dab(Opcode::Xeq, c, v.reg, Reg::ZERO)));
                    code.push(ins(Instruction::di(Opcode::Xori, c, 1)));
                    self.drop_val(v, &mut code);
                }
            },
        }
        Ok(code)
    }

    pub(super) fn quantum_position(&mut self, e: &Expr) -> Stop {
        self.error(e.loc, "`@` and `#` are only allowed as the whole right-hand side of an initializer or assignment")
    }

    /// Bit count operand of `@` / `#`: a constant in 1..=32.
    pub(super) fn bit_count(&mut self, e: &Expr) -> L<i32> {
        match self.const_value(e) {
            Some(v) if (1..=32).contains(&v) => Ok(v as i32),
            _ => Err(self.error(e.loc, "bit count must be a constant between 1 and 32")),
        }
    }
}
