//! Code buffers with static cycle accounting, and the temporary register
//! pool.

use std::fmt::Write;

use crate::isa::{invert_instruction, Instruction, Opcode, Reg};

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Ins(Instruction),
    /// An instruction whose immediate is a label expression.
    Text(String),
    Label(String),
}

/// Straight-line code plus the number of cycles it takes to execute, when
/// that is independent of data (`None` once a loop is involved).
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub items: Vec<Item>,
    pub len: usize,
    pub cycles: Option<u64>,
}

impl Default for Block {
    fn default() -> Self {
        Block { items: Vec::new(), len: 0, cycles: Some(0) }
    }
}

impl Block {
    pub fn new() -> Block {
        Block::default()
    }

    pub fn ins(&mut self, i: Instruction) {
        self.items.push(Item::Ins(i));
        self.len += 1;
        self.add_cycles(Some(1));
    }

    pub fn seq(&mut self, code: &[Instruction]) {
        for i in code {
            self.ins(*i);
        }
    }

    pub fn text(&mut self, t: String) {
        self.items.push(Item::Text(t));
        self.len += 1;
        self.add_cycles(Some(1));
    }

    pub fn label(&mut self, l: impl Into<String>) {
        self.items.push(Item::Label(l.into()));
    }

    pub fn add_cycles(&mut self, c: Option<u64>) {
        self.cycles = match (self.cycles, c) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
    }

    /// Appends `other`, keeping its cycle count.
    pub fn append(&mut self, other: Block) {
        self.items.extend(other.items);
        self.len += other.len;
        self.add_cycles(other.cycles);
    }

    /// Appends code without counting it as executed once per instruction.
    pub fn append_raw(&mut self, other: Block) {
        self.items.extend(other.items);
        self.len += other.len;
    }

    pub fn pad(&mut self, n: u64) {
        for _ in 0..n {
            self.ins(Instruction::nop());
        }
    }

    pub fn render(&self, out: &mut String) {
        for item in &self.items {
            match item {
                Item::Ins(i) => writeln!(out, "    {i}").unwrap(),
                Item::Text(t) => writeln!(out, "    {t}").unwrap(),
                Item::Label(l) => writeln!(out, "{l}:").unwrap(),
            }
        }
    }
}

/// The Bennett inverse of a straight-line sequence.
pub fn inverse(code: &[Instruction]) -> Vec<Instruction> {
    code.iter().rev().map(|i| invert_instruction(i).expect("compute sequences are invertible")).collect()
}

/// `swapm r, $grp, 0; addi $grp, 1`: moves `r` onto the garbage stack and
/// leaves it zero.
pub fn push_garbage(r: Reg) -> [Instruction; 2] {
    [Instruction::dai(Opcode::Swapm, r, Reg::GRP, 0).unwrap(), Instruction::di(Opcode::Addi, Reg::GRP, 1).unwrap()]
}

pub fn swapm(r: Reg, base: Reg, addr: u32) -> Instruction {
    Instruction::dai(Opcode::Swapm, r, base, addr as i32).unwrap()
}

/// Registers the compiler may use for temporaries, in allocation order.
pub const TEMPS: [Reg; 11] =
    [Reg::T0, Reg(20), Reg(21), Reg(22), Reg(23), Reg(24), Reg(25), Reg(26), Reg(27), Reg::V1, Reg::RA];

#[derive(Debug, Clone, Default)]
pub struct Pool {
    held: Vec<Reg>,
}

impl Pool {
    pub fn acquire(&mut self) -> Option<Reg> {
        let r = TEMPS.iter().copied().find(|r| !self.held.contains(r))?;
        self.held.push(r);
        Some(r)
    }

    pub fn release(&mut self, r: Reg) {
        let i = self.held.iter().position(|h| *h == r).expect("releasing a held temp");
        self.held.remove(i);
    }

    /// Forgets every held register, returning them in acquisition order.
    pub fn take_all(&mut self) -> Vec<Reg> {
        std::mem::take(&mut self.held)
    }

    pub fn restore(&mut self, regs: &[Reg]) {
        for r in regs {
            assert!(!self.held.contains(r), "restoring a register that is in use");
            self.held.push(*r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_is_lifo_and_lowest_first() {
        let mut p = Pool::default();
        let a = p.acquire().unwrap();
        let b = p.acquire().unwrap();
        assert_eq!((a, b), (Reg::T0, Reg::temp(1)));
        p.release(a);
        assert_eq!(p.acquire(), Some(Reg::T0));
        let mut n = 2;
        while p.acquire().is_some() {
            n += 1;
        }
        assert_eq!(n, TEMPS.len());
    }

    #[test]
    fn inverse_restores() {
        let code = vec![
            Instruction::di(Opcode::Xori, Reg::T0, 5).unwrap(),
            Instruction::da(Opcode::Add, Reg::temp(1), Reg::T0).unwrap(),
        ];
        let inv = inverse(&code);
        assert_eq!(inv[0].op, Opcode::Sub);
        assert_eq!(inv[1].op, Opcode::Xori);
    }

    #[test]
    fn cycles_become_unknown_after_a_loop() {
        let mut b = Block::new();
        b.pad(3);
        assert_eq!(b.cycles, Some(3));
        b.add_cycles(None);
        b.pad(1);
        assert_eq!((b.len, b.cycles), (4, None));
    }
}
