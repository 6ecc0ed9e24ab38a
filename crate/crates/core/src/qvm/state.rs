use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::isa::{Reg, Word};

const CHUNK: usize = 256;

type Chunk = [Word; CHUNK];

fn mix(addr: usize, value: Word) -> u64 {
    if value == 0 {
        return 0;
    }
    let mut z = ((addr as u64) << 32 | value as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Data memory of one configuration.
///
/// Chunks are reference counted so that branches share unchanged memory;
/// a write copies only the touched chunk. A Zobrist-style hash is kept up
/// to date on every write. Sharing never affects equality or ordering.
#[derive(Clone)]
pub struct Memory {
    chunks: Arc<Vec<Arc<Chunk>>>,
    len: usize,
    hash: u64,
}

impl Memory {
    pub fn zeroed(len: usize) -> Memory {
        assert!(len > 0, "memory must have at least one word");
        let zero = Arc::new([0; CHUNK]);
        let n = len.div_ceil(CHUNK);
        Memory { chunks: Arc::new(vec![zero; n]), len, hash: 0 }
    }

    /// Memory of `len` words whose prefix holds `words`.
    pub fn from_words(words: &[Word], len: usize) -> Memory {
        assert!(words.len() <= len);
        let mut m = Memory::zeroed(len);
        for (a, w) in words.iter().enumerate() {
            m.set(a, *w);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Effective address `(base + offset) mod len`.
    pub fn address(&self, base: Word, offset: i32) -> usize {
        base.wrapping_add(offset as u32) as usize % self.len
    }

    pub fn get(&self, addr: usize) -> Word {
        self.chunks[addr / CHUNK][addr % CHUNK]
    }

    pub fn set(&mut self, addr: usize, value: Word) {
        assert!(addr < self.len);
        let old = self.get(addr);
        if old == value {
            return;
        }
        self.hash ^= mix(addr, old) ^ mix(addr, value);
        let chunks = Arc::make_mut(&mut self.chunks);
        Arc::make_mut(&mut chunks[addr / CHUNK])[addr % CHUNK] = value;
    }

    pub fn content_hash(&self) -> u64 {
        self.hash
    }

    pub fn to_vec(&self) -> Vec<Word> {
        (0..self.len).map(|a| self.get(a)).collect()
    }
}

impl PartialEq for Memory {
    fn eq(&self, other: &Self) -> bool {
        if self.len != other.len || self.hash != other.hash {
            return false;
        }
        if Arc::ptr_eq(&self.chunks, &other.chunks) {
            return true;
        }
        self.chunks.iter().zip(other.chunks.iter()).all(|(a, b)| Arc::ptr_eq(a, b) || a[..] == b[..])
    }
}

impl Eq for Memory {}

impl Ord for Memory {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len.cmp(&other.len).then_with(|| {
            for (a, b) in self.chunks.iter().zip(other.chunks.iter()) {
                if Arc::ptr_eq(a, b) {
                    continue;
                }
                match a[..].cmp(&b[..]) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            Ordering::Equal
        })
    }
}

impl PartialOrd for Memory {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Memory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nonzero: Vec<(usize, Word)> =
            (0..self.len).filter_map(|a| Some((a, self.get(a))).filter(|p| p.1 != 0)).take(16).collect();
        f.debug_struct("Memory").field("len", &self.len).field("nonzero", &nonzero).finish()
    }
}

/// One basis configuration of the machine. Value equality of every field is
/// the interference key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineConfig {
    pub pc: i64,
    pub regs: [Word; 32],
    pub mem: Memory,
    pub halted: bool,
    pub crashed: bool,
}

impl MachineConfig {
    pub fn new(mem: Memory) -> MachineConfig {
        MachineConfig { pc: 0, regs: [0; 32], mem, halted: false, crashed: false }
    }

    pub fn reg(&self, r: Reg) -> Word {
        self.regs[r.index()]
    }

    pub fn is_active(&self) -> bool {
        !self.halted && !self.crashed
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xCBF2_9CE4_8422_2325u64 ^ self.pc as u64;
        for r in &self.regs {
            h = (h ^ *r as u64).wrapping_mul(0x0000_0100_0000_01B3);
        }
        h ^= (self.halted as u64) << 1 | self.crashed as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
        h ^ self.mem.content_hash().rotate_left(17)
    }
}

impl Ord for MachineConfig {
    /// Canonical order: pc, registers, flags, then memory.
    fn cmp(&self, other: &Self) -> Ordering {
        self.pc
            .cmp(&other.pc)
            .then_with(|| self.regs.cmp(&other.regs))
            .then_with(|| self.halted.cmp(&other.halted))
            .then_with(|| self.crashed.cmp(&other.crashed))
            .then_with(|| self.mem.cmp(&other.mem))
    }
}

impl PartialOrd for MachineConfig {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A sparse superposition of machine configurations, kept in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct QState {
    pub branches: Vec<(MachineConfig, Complex64)>,
    pub cycle: u64,
}

impl QState {
    pub fn basis(cfg: MachineConfig) -> QState {
        QState { branches: vec![(cfg, Complex64::new(1.0, 0.0))], cycle: 0 }
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.branches.iter().map(|(_, a)| a.norm_sqr()).sum()
    }

    pub fn all_stopped(&self) -> bool {
        self.branches.iter().all(|(c, _)| !c.is_active())
    }

    /// Probability mass of halted, crashed and still-running branches.
    pub fn mass_split(&self) -> (f64, f64, f64) {
        let (mut h, mut c, mut a) = (0.0, 0.0, 0.0);
        for (cfg, amp) in &self.branches {
            let p = amp.norm_sqr();
            if cfg.crashed {
                c += p
            } else if cfg.halted {
                h += p
            } else {
                a += p
            }
        }
        (h, c, a)
    }

    /// Exact comparison: same configurations in the same order and amplitudes
    /// within `tol` of each other.
    pub fn approx_eq(&self, other: &QState, tol: f64) -> bool {
        self.branches.len() == other.branches.len()
            && self.branches.iter().zip(&other.branches).all(|((c1, a1), (c2, a2))| c1 == c2 && (a1 - a2).norm() <= tol)
    }
}
