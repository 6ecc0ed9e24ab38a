//! The cycle operator: fetch, execute, `pc += $ur`, then merge identical
//! configurations and prune negligible amplitudes.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::isa::{exec_permutation, invert_instruction, Instruction, InstructionClass, Opcode, Reg, Word};
use crate::program::Program;

use super::state::{MachineConfig, Memory, QState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("data segment ({data} words) overlaps the stack/garbage regions")]
    DataOverlap { data: usize },
    #[error("invalid program: {0}")]
    BadProgram(String),
    #[error("branch reached a measurement at pc {pc}; measurements are handled by run")]
    MeasurementPending { pc: i64 },
    #[error("desynchronized measurement: active branches at pcs {pcs:?}")]
    DesynchronizedMeasurement { pcs: Vec<i64> },
    #[error("cannot invert across measurement at pc {pc}")]
    InvertMeasurement { pc: i64 },
    #[error("cannot invert: {0}")]
    NotInvertible(String),
    #[error("branch count {count} exceeds limit {limit}")]
    TooManyBranches { count: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub max_cycles: u64,
    pub prune_eps: f64,
    pub max_branches: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_cycles: 10_000_000, prune_eps: 1e-12, max_branches: 1 << 22 }
    }
}

/// Bookkeeping for one application of the cycle operator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    pub merges: u64,
    pub pruned_mass: f64,
    /// Instruction executions per class (one per active branch).
    pub classes: BTreeMap<InstructionClass, u64>,
}

/// Accumulates branches, summing amplitudes of identical configurations.
struct Accumulator {
    branches: Vec<(MachineConfig, Complex64)>,
    index: HashMap<u64, Vec<usize>>,
    merges: u64,
}

impl Accumulator {
    fn new(capacity: usize) -> Accumulator {
        Accumulator { branches: Vec::with_capacity(capacity), index: HashMap::with_capacity(capacity), merges: 0 }
    }

    fn add(&mut self, cfg: MachineConfig, amp: Complex64) {
        let slot = self.index.entry(cfg.fingerprint()).or_default();
        for &i in slot.iter() {
            if self.branches[i].0 == cfg {
                self.branches[i].1 += amp;
                self.merges += 1;
                return;
            }
        }
        slot.push(self.branches.len());
        self.branches.push((cfg, amp));
    }

    fn finish(self, eps: f64, cycle: u64, info: &mut StepInfo, limit: usize) -> Result<QState, SimError> {
        info.merges += self.merges;
        let eps_sqr = eps * eps;
        let mut branches = Vec::with_capacity(self.branches.len());
        for (cfg, amp) in self.branches {
            let p = amp.norm_sqr();
            if p < eps_sqr || p == 0.0 {
                info.pruned_mass += p;
            } else {
                branches.push((cfg, amp));
            }
        }
        if branches.len() > limit {
            return Err(SimError::TooManyBranches { count: branches.len(), limit });
        }
        branches.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(QState { branches, cycle })
    }
}

fn low_mask(bits: i32) -> Word {
    if bits >= 32 {
        Word::MAX
    } else {
        (1u32 << bits) - 1
    }
}

/// Unit phase `e^(sign(k) 2 pi i / 2^|k|)`.
pub fn rotation_phase(k: i32) -> Complex64 {
    let angle = k.signum() as f64 * 2.0 * PI / 2f64.powi(k.unsigned_abs() as i32);
    Complex64::from_polar(1.0, angle)
}

/// Simulator bound to one program.
pub struct Machine<'p> {
    program: &'p Program,
    pub limits: Limits,
}

impl<'p> Machine<'p> {
    pub fn new(program: &'p Program, limits: Limits) -> Machine<'p> {
        Machine { program, limits }
    }

    pub fn program(&self) -> &Program {
        self.program
    }

    /// Reset state: one branch at the entry point with `$ur = 1`, `$grp` at
    /// the garbage base, `$sp = $fp` at the stack base, data loaded at 0.
    pub fn init_state(&self) -> Result<QState, SimError> {
        let p = self.program;
        p.validate().map_err(|e| SimError::BadProgram(e.to_string()))?;
        if p.data.len() > p.stack_base as usize || p.data.len() > p.garbage_base as usize {
            return Err(SimError::DataOverlap { data: p.data.len() });
        }
        let mut cfg = MachineConfig::new(Memory::from_words(&p.data, p.mem_words as usize));
        cfg.pc = p.entry as i64;
        cfg.regs[Reg::UR.index()] = 1;
        cfg.regs[Reg::GRP.index()] = p.garbage_base;
        cfg.regs[Reg::SP.index()] = p.stack_base;
        cfg.regs[Reg::FP.index()] = p.stack_base;
        if p.is_empty() {
            cfg.halted = true;
        }
        Ok(QState::basis(cfg))
    }

    pub fn fetch(&self, pc: i64) -> Option<&Instruction> {
        usize::try_from(pc).ok().and_then(|i| self.program.instructions.get(i))
    }

    /// Adds `$ur` to the pc and classifies the landing point.
    fn advance(&self, cfg: &mut MachineConfig) {
        cfg.pc += cfg.regs[Reg::UR.index()] as i32 as i64;
        let n = self.program.len() as i64;
        if cfg.pc == n {
            cfg.halted = true;
        } else if cfg.pc < 0 || cfg.pc > n {
            cfg.crashed = true;
        }
    }

    pub fn step(&self, s: &QState) -> Result<QState, SimError> {
        self.step_detailed(s).map(|(q, _)| q)
    }

    /// Applies one cycle to every branch.
    pub fn step_detailed(&self, s: &QState) -> Result<(QState, StepInfo), SimError> {
        let mut info = StepInfo::default();
        let mut acc = Accumulator::new(s.branches.len());
        for (cfg, amp) in &s.branches {
            if !cfg.is_active() {
                acc.add(cfg.clone(), *amp);
                continue;
            }
            let instr = *self.fetch(cfg.pc).expect("active branch has an in-range pc");
            let class = instr.class();
            *info.classes.entry(class).or_default() += 1;
            match class {
                InstructionClass::Measurement => {
                    return Err(SimError::MeasurementPending { pc: cfg.pc });
                }
                InstructionClass::Halt => {
                    let mut c = cfg.clone();
                    c.halted = true;
                    acc.add(c, *amp);
                }
                InstructionClass::Permutation | InstructionClass::Nop => {
                    let mut c = cfg.clone();
                    exec_permutation(&instr, &mut c);
                    self.advance(&mut c);
                    acc.add(c, *amp);
                }
                InstructionClass::Hadamard => {
                    for (c, a) in apply_hadamard(cfg, &instr, *amp) {
                        let mut c = c;
                        self.advance(&mut c);
                        acc.add(c, a);
                    }
                    if acc.branches.len() > self.limits.max_branches.saturating_mul(64) {
                        return Err(SimError::TooManyBranches {
                            count: acc.branches.len(),
                            limit: self.limits.max_branches,
                        });
                    }
                }
                InstructionClass::Phase => {
                    let mut c = cfg.clone();
                    let a = *amp * phase_factor(cfg, &instr);
                    self.advance(&mut c);
                    acc.add(c, a);
                }
            }
        }
        let q = acc.finish(self.limits.prune_eps, s.cycle + 1, &mut info, self.limits.max_branches)?;
        Ok((q, info))
    }

    /// Undoes one cycle. Fails on halted or crashed branches and when the
    /// undone instruction is a measurement or halt.
    pub fn step_inverse(&self, s: &QState) -> Result<QState, SimError> {
        let mut acc = Accumulator::new(s.branches.len());
        for (cfg, amp) in &s.branches {
            if !cfg.is_active() {
                return Err(SimError::NotInvertible(format!("branch at pc {} is halted or crashed", cfg.pc)));
            }
            let prev = cfg.pc - cfg.regs[Reg::UR.index()] as i32 as i64;
            let instr = *self
                .fetch(prev)
                .ok_or_else(|| SimError::NotInvertible(format!("predecessor pc {prev} out of range")))?;
            if instr.class() == InstructionClass::Measurement {
                return Err(SimError::InvertMeasurement { pc: prev });
            }
            let inv = invert_instruction(&instr).map_err(|e| SimError::NotInvertible(e.to_string()))?;
            let mut c = cfg.clone();
            c.pc = prev;
            match inv.class() {
                InstructionClass::Hadamard => {
                    for (c2, a) in apply_hadamard(&c, &inv, *amp) {
                        acc.add(c2, a);
                    }
                }
                InstructionClass::Phase => {
                    let a = *amp * phase_factor(&c, &inv);
                    acc.add(c, a);
                }
                _ => {
                    exec_permutation(&inv, &mut c);
                    acc.add(c, *amp);
                }
            }
        }
        let mut info = StepInfo::default();
        acc.finish(self.limits.prune_eps, s.cycle.saturating_sub(1), &mut info, usize::MAX)
    }

    /// Advances every active branch sitting on a measurement by one cycle.
    pub(crate) fn advance_measured(&self, s: &QState) -> QState {
        let mut acc = Accumulator::new(s.branches.len());
        for (cfg, amp) in &s.branches {
            let mut c = cfg.clone();
            if c.is_active() {
                self.advance(&mut c);
            }
            acc.add(c, *amp);
        }
        let mut info = StepInfo::default();
        acc.finish(0.0, s.cycle + 1, &mut info, usize::MAX).expect("no limit")
    }

    /// The common measurement pc when any active branch sits on a `meas`.
    pub(crate) fn pending_measurement(&self, s: &QState) -> Result<Option<(i64, Reg)>, SimError> {
        let mut meas_pc = None;
        let mut other = false;
        let mut pcs = Vec::new();
        for (cfg, _) in s.branches.iter().filter(|(c, _)| c.is_active()) {
            match self.fetch(cfg.pc) {
                Some(i) if i.op == Opcode::Meas => {
                    if meas_pc.is_some_and(|(pc, _)| pc != cfg.pc) {
                        other = true;
                    }
                    meas_pc.get_or_insert((cfg.pc, i.rd));
                }
                _ => other = true,
            }
            if !pcs.contains(&cfg.pc) {
                pcs.push(cfg.pc);
            }
        }
        match meas_pc {
            Some(_) if other => Err(SimError::DesynchronizedMeasurement { pcs }),
            m => Ok(m),
        }
    }
}

fn apply_hadamard(cfg: &MachineConfig, instr: &Instruction, amp: Complex64) -> Vec<(MachineConfig, Complex64)> {
    let bits = instr.imm;
    let mask = low_mask(bits);
    let d = instr.rd.index();
    let old = cfg.regs[d] & mask;
    let scale = (0.5f64).powf(bits as f64 / 2.0);
    let count = 1u64 << bits;
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    for new in 0..count {
        let new = new as Word;
        let mut c = cfg.clone();
        c.regs[d] = (cfg.regs[d] & !mask) | new;
        c.regs[0] = 0;
        let sign = if (old & new).count_ones() % 2 == 1 { -scale } else { scale };
        out.push((c, amp * sign));
    }
    out
}

fn phase_factor(cfg: &MachineConfig, instr: &Instruction) -> Complex64 {
    let v = cfg.regs[instr.rd.index()];
    match instr.op {
        Opcode::Zq => {
            if (v & low_mask(instr.imm)).count_ones() % 2 == 1 {
                Complex64::new(-1.0, 0.0)
            } else {
                Complex64::new(1.0, 0.0)
            }
        }
        Opcode::Rzk => {
            if (v >> instr.ra.index()) & 1 == 1 {
                rotation_phase(instr.imm)
            } else {
                Complex64::new(1.0, 0.0)
            }
        }
        _ => unreachable!(),
    }
}

/// Groups branches by the value of register `r`, renormalizing each group.
pub fn measure_partition(s: &QState, r: Reg) -> Vec<(Word, f64, QState)> {
    let mut groups: BTreeMap<Word, Vec<(MachineConfig, Complex64)>> = BTreeMap::new();
    for (cfg, amp) in &s.branches {
        groups.entry(cfg.regs[r.index()]).or_default().push((cfg.clone(), *amp));
    }
    groups
        .into_iter()
        .map(|(v, branches)| {
            let p: f64 = branches.iter().map(|(_, a)| a.norm_sqr()).sum();
            let scale = 1.0 / p.sqrt();
            let branches = branches.into_iter().map(|(c, a)| (c, a * scale)).collect();
            (v, p, QState { branches, cycle: s.cycle })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    fn machine(src: &str) -> Program {
        assemble(src).unwrap()
    }

    #[test]
    fn init_state_reset_values() {
        let p = machine("nop");
        let m = Machine::new(&p, Limits::default());
        let s = m.init_state().unwrap();
        assert_eq!(s.len(), 1);
        let c = &s.branches[0].0;
        assert_eq!(c.pc, 0);
        assert_eq!(c.reg(Reg::UR), 1);
        assert_eq!(c.reg(Reg::GRP), p.garbage_base);
        assert_eq!(c.reg(Reg::SP), p.stack_base);
        assert_eq!(c.reg(Reg::FP), p.stack_base);
    }

    #[test]
    fn init_loads_data_and_rejects_overlap() {
        let p = machine(".data\n.word 3\n.text\nnop");
        let s = Machine::new(&p, Limits::default()).init_state().unwrap();
        assert_eq!(s.branches[0].0.mem.get(0), 3);
        let bad = machine(".mem 16\n.stack 8\n.garbage 1\n.data\n.word 1, 2\n.text\nnop");
        assert!(matches!(Machine::new(&bad, Limits::default()).init_state(), Err(SimError::DataOverlap { .. })));
    }

    #[test]
    fn addi_step_advances_pc() {
        let p = machine("addi $t1, 6\nhalt");
        let m = Machine::new(&p, Limits::default());
        let s = m.step(&m.init_state().unwrap()).unwrap();
        let c = &s.branches[0].0;
        assert_eq!((c.pc, c.reg(Reg::temp(1))), (1, 6));
    }

    #[test]
    fn single_hadamard() {
        let p = machine("hq $t0, 1\nhalt");
        let m = Machine::new(&p, Limits::default());
        let s = m.step(&m.init_state().unwrap()).unwrap();
        assert_eq!(s.len(), 2);
        for (i, (c, a)) in s.branches.iter().enumerate() {
            assert_eq!(c.reg(Reg::T0), i as u32);
            assert!((a.re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        }
        // H twice interferes back to the basis state
        let p2 = machine("hq $t0, 3\nhq $t0, 3\nhalt");
        let m2 = Machine::new(&p2, Limits::default());
        let s2 = m2.step(&m2.step(&m2.init_state().unwrap()).unwrap()).unwrap();
        assert_eq!(s2.len(), 1);
        assert!((s2.branches[0].1.re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn z_kicks_phase() {
        let p = machine("addi $t0, 1\nzq $t0, 1\nhalt");
        let m = Machine::new(&p, Limits::default());
        let s = m.step(&m.step(&m.init_state().unwrap()).unwrap()).unwrap();
        assert_eq!(s.branches[0].1, Complex64::new(-1.0, 0.0));
    }

    #[test]
    fn destructive_interference_removes_branch() {
        let p = machine("halt");
        let m = Machine::new(&p, Limits::default());
        let cfg = m.init_state().unwrap().branches[0].0.clone();
        let s = QState {
            branches: vec![(cfg.clone(), Complex64::new(0.5, 0.0)), (cfg, Complex64::new(-0.5, 0.0))],
            cycle: 0,
        };
        let mut acc = Accumulator::new(2);
        for (c, a) in s.branches {
            acc.add(c, a);
        }
        let mut info = StepInfo::default();
        let q = acc.finish(1e-12, 1, &mut info, 10).unwrap();
        assert!(q.is_empty());
        assert_eq!(info.merges, 1);
    }

    #[test]
    fn caddi_jump_and_reexecution() {
        // pol=1 with LSB(c)=1 jumps by 1+x
        let p = machine("addi $t0, 1\ncaddi $t0, 1, $ur, 2\nnop\nnop\nhalt");
        let m = Machine::new(&p, Limits::default());
        let s = m.step(&m.step(&m.init_state().unwrap()).unwrap()).unwrap();
        assert_eq!(s.branches[0].0.pc, 1 + 1 + 2);
        // $ur = 0 re-executes the same instruction
        let p = machine("addi $ur, -1\naddi $t0, 1\nhalt");
        let m = Machine::new(&p, Limits::default());
        let s = m.step(&m.init_state().unwrap()).unwrap();
        assert_eq!(s.branches[0].0.pc, 0);
        let s = m.step(&s).unwrap();
        assert_eq!(s.branches[0].0.pc, -1);
        assert!(s.branches[0].0.crashed);
    }

    #[test]
    fn halt_is_fixed_point() {
        let p = machine("halt");
        let m = Machine::new(&p, Limits::default());
        let s1 = m.step(&m.init_state().unwrap()).unwrap();
        assert!(s1.branches[0].0.halted);
        let s2 = m.step(&s1).unwrap();
        assert_eq!(s1.branches, s2.branches);
    }

    #[test]
    fn step_inverse_round_trip_and_measure_error() {
        let p = machine("hq $t0, 2\naddi $t1, 3\nrzk $t0, 1, 3\nzq $t0, 2\nmeas $t0\nhalt");
        let m = Machine::new(&p, Limits::default());
        let s0 = m.init_state().unwrap();
        let mut states = vec![s0];
        for _ in 0..4 {
            states.push(m.step(states.last().unwrap()).unwrap());
        }
        for k in (0..4).rev() {
            let back = m.step_inverse(&states[k + 1]).unwrap();
            assert!(back.approx_eq(&states[k], 1e-12), "cycle {k}");
        }
        let at_meas = m.step(&states[4]);
        assert!(matches!(at_meas, Err(SimError::MeasurementPending { .. })));
        let after = m.advance_measured(&states[4]);
        assert!(matches!(m.step_inverse(&after), Err(SimError::InvertMeasurement { pc: 4 })));
    }

    #[test]
    fn partition_examples() {
        let p = machine("addi $t0, 5\nhalt");
        let m = Machine::new(&p, Limits::default());
        let s = m.step(&m.init_state().unwrap()).unwrap();
        let parts = measure_partition(&s, Reg::T0);
        assert_eq!(parts.len(), 1);
        assert_eq!((parts[0].0, parts[0].1), (5, 1.0));
        let p = machine("hq $t0, 1\nhalt");
        let m = Machine::new(&p, Limits::default());
        let s = m.step(&m.init_state().unwrap()).unwrap();
        let parts = measure_partition(&s, Reg::T0);
        assert_eq!(parts.len(), 2);
        for (i, (v, prob, q)) in parts.iter().enumerate() {
            assert_eq!(*v, i as u32);
            assert!((prob - 0.5).abs() < 1e-12);
            assert!((q.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbed_garbage_word_prevents_merge() {
        let p = machine("halt");
        let m = Machine::new(&p, Limits::default());
        let base = m.init_state().unwrap().branches[0].0.clone();
        let mut other = base.clone();
        let g = p.garbage_base as usize + 7;
        other.mem.set(g, 1);
        assert_ne!(base, other);
        other.mem.set(g, 0);
        assert_eq!(base, other);
        assert_eq!(base.fingerprint(), other.fingerprint());
    }
}
