//! Instruction set of the reversible quantum machine.
//!
//! Every instruction is 64 bits wide. Registers and memory words are 32 bits
//! and all arithmetic wraps modulo 2^32. Irreversible classical functions only
//! exist in XOR-accumulate form (`rd ^= f(ra, rb)`), which keeps every
//! classical instruction a permutation of machine configurations.

use std::fmt;

use thiserror::Error;

use crate::qvm::MachineConfig;

/// A 32-bit machine word. Signed and unsigned views share the bit pattern.
pub type Word = u32;

/// Index into the 32-entry register file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Reg(pub(crate) u8);

impl Reg {
    pub const ZERO: Reg = Reg(0);
    pub const UR: Reg = Reg(1);
    pub const TUR: Reg = Reg(2);
    pub const V0: Reg = Reg(3);
    pub const V1: Reg = Reg(4);
    pub const A0: Reg = Reg(5);
    pub const S0: Reg = Reg(9);
    pub const T0: Reg = Reg(19);
    pub const GRP: Reg = Reg(28);
    pub const SP: Reg = Reg(29);
    pub const FP: Reg = Reg(30);
    pub const RA: Reg = Reg(31);

    pub fn new(index: u8) -> Result<Reg, IsaError> {
        if index < 32 {
            Ok(Reg(index))
        } else {
            Err(IsaError::BadRegister(index))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Argument register `$a{n}` (n < 4).
    pub fn arg(n: usize) -> Reg {
        assert!(n < 4);
        Reg(5 + n as u8)
    }

    /// Saved register `$s{n}` (n < 10).
    pub fn saved(n: usize) -> Reg {
        assert!(n < 10);
        Reg(9 + n as u8)
    }

    /// Temporary register `$t{n}` (n < 9).
    pub fn temp(n: usize) -> Reg {
        assert!(n < 9);
        Reg(19 + n as u8)
    }

    /// Canonical alias used when printing.
    pub fn alias(self) -> String {
        match self.0 {
            0 => "$zero".into(),
            1 => "$ur".into(),
            2 => "$tur".into(),
            3..=4 => format!("$v{}", self.0 - 3),
            5..=8 => format!("$a{}", self.0 - 5),
            9..=18 => format!("$s{}", self.0 - 9),
            19..=27 => format!("$t{}", self.0 - 19),
            28 => "$grp".into(),
            29 => "$sp".into(),
            30 => "$fp".into(),
            _ => "$ra".into(),
        }
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.alias())
    }
}

/// Resolves a register name such as `$grp` or `$17`.
pub fn register_alias(name: &str) -> Result<Reg, IsaError> {
    let body = name.strip_prefix('$').ok_or_else(|| IsaError::UnknownAlias(name.to_string()))?;
    let unknown = || IsaError::UnknownAlias(name.to_string());
    let fixed = match body {
        "zero" => Some(0),
        "ur" => Some(1),
        "tur" => Some(2),
        "grp" => Some(28),
        "sp" => Some(29),
        "fp" => Some(30),
        "ra" => Some(31),
        _ => None,
    };
    if let Some(i) = fixed {
        return Ok(Reg(i));
    }
    if body.chars().all(|c| c.is_ascii_digit()) && !body.is_empty() {
        let n: u32 = body.parse().map_err(|_| unknown())?;
        return if n < 32 { Ok(Reg(n as u8)) } else { Err(unknown()) };
    }
    if body.len() < 2 || !body.is_char_boundary(1) {
        return Err(unknown());
    }
    let (family, num) = body.split_at(1);
    let n: u8 = num.parse().map_err(|_| unknown())?;
    if num.len() != 1 {
        return Err(unknown());
    }
    let (base, count) = match family {
        "v" => (3, 2),
        "a" => (5, 4),
        "s" => (9, 10),
        "t" => (19, 9),
        _ => return Err(unknown()),
    };
    if n < count {
        Ok(Reg(base + n))
    } else {
        Err(unknown())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("unknown register alias `{0}`")]
    UnknownAlias(String),
    #[error("register index {0} out of range")]
    BadRegister(u8),
    #[error("unknown opcode 0x{0:02X}")]
    UnknownOpcode(u8),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("reserved or unused field is nonzero in word 0x{0:016X}")]
    ReservedBits(u64),
    #[error("operand aliasing in `{0}`: {1}")]
    OperandAliasing(String, &'static str),
    #[error("`{0}` writes $zero")]
    ZeroWrite(String),
    #[error("immediate {imm} out of range for `{mnemonic}` (allowed {lo}..={hi})")]
    ImmediateRange { mnemonic: &'static str, imm: i64, lo: i64, hi: i64 },
    #[error("`{0}` has no binary encoding (inverse-only form)")]
    NotEncodable(&'static str),
    #[error("`{0}` is not invertible")]
    NotInvertible(&'static str),
}

/// Operand shape of an opcode, which also fixes the textual operand order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// no operands
    None,
    /// rd
    D,
    /// rd, imm
    DI,
    /// rd, ra
    DA,
    /// rd, ra, rb
    DAB,
    /// rd, ra, imm
    DAI,
    /// rd, ra, rb, imm
    DABI,
    /// rc, pol, rd, ra
    CondDA,
    /// rc, pol, rd, imm
    CondDI,
    /// rc, rd, imm
    CDI,
    /// rc, ra, rd, rb
    TwoCase,
    /// rc, ra, rd, rb, imm
    TwoCaseI,
    /// rd, bit, k
    Rot,
}

impl Format {
    fn uses(self) -> (bool, bool, bool, bool, bool, bool) {
        // (rd, ra, rb, rc, pol, imm)
        match self {
            Format::None => (false, false, false, false, false, false),
            Format::D => (true, false, false, false, false, false),
            Format::DI => (true, false, false, false, false, true),
            Format::DA => (true, true, false, false, false, false),
            Format::DAB => (true, true, true, false, false, false),
            Format::DAI => (true, true, false, false, false, true),
            Format::DABI => (true, true, true, false, false, true),
            Format::CondDA => (true, true, false, true, true, false),
            Format::CondDI => (true, false, false, true, true, true),
            Format::CDI => (true, false, false, true, false, true),
            Format::TwoCase => (true, true, true, true, false, false),
            Format::TwoCaseI => (true, true, true, true, false, true),
            Format::Rot => (true, true, false, false, false, true),
        }
    }
}

/// Behavioral class of an instruction as seen by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InstructionClass {
    Permutation,
    Hadamard,
    Phase,
    Measurement,
    Halt,
    Nop,
}

impl fmt::Display for InstructionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InstructionClass::Permutation => "permutation",
            InstructionClass::Hadamard => "hadamard",
            InstructionClass::Phase => "phase",
            InstructionClass::Measurement => "measurement",
            InstructionClass::Halt => "halt",
            InstructionClass::Nop => "nop",
        };
        f.write_str(s)
    }
}

macro_rules! opcodes {
    ($( $variant:ident = $code:expr, $mn:literal, $fmt:ident, $class:ident; )*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Opcode {
            $( $variant, )*
            /// Inverse of `tcs`: flip LSB(ra) first, then the selected swap.
            Itcs,
            /// Inverse of `cadd`: conditional subtract.
            Csub,
        }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$( Opcode::$variant, )*];

            pub fn code(self) -> Option<u8> {
                match self {
                    $( Opcode::$variant => Some($code), )*
                    Opcode::Itcs | Opcode::Csub => None,
                }
            }

            pub fn from_code(code: u8) -> Option<Opcode> {
                match code {
                    $( $code => Some(Opcode::$variant), )*
                    _ => None,
                }
            }

            pub fn mnemonic(self) -> &'static str {
                match self {
                    $( Opcode::$variant => $mn, )*
                    Opcode::Itcs => "itcs",
                    Opcode::Csub => "csub",
                }
            }

            pub fn format(self) -> Format {
                match self {
                    $( Opcode::$variant => Format::$fmt, )*
                    Opcode::Itcs => Format::TwoCase,
                    Opcode::Csub => Format::CondDA,
                }
            }

            pub fn class(self) -> InstructionClass {
                match self {
                    $( Opcode::$variant => InstructionClass::$class, )*
                    Opcode::Itcs | Opcode::Csub => InstructionClass::Permutation,
                }
            }

            /// Looks up an encodable opcode by mnemonic.
            pub fn from_mnemonic(m: &str) -> Option<Opcode> {
                match m {
                    $( $mn => Some(Opcode::$variant), )*
                    _ => None,
                }
            }
        }
    };
}

opcodes! {
    Nop = 0x00, "nop", None, Nop;
    Addi = 0x01, "addi", DI, Permutation;
    Add = 0x02, "add", DA, Permutation;
    Sub = 0x03, "sub", DA, Permutation;
    Neg = 0x04, "neg", D, Permutation;
    Notr = 0x05, "notr", D, Permutation;
    Xorr = 0x06, "xorr", DA, Permutation;
    Xori = 0x07, "xori", DI, Permutation;
    Swap = 0x08, "swap", DA, Permutation;
    Cswap = 0x09, "cswap", CondDA, Permutation;
    Roti = 0x0A, "roti", DI, Permutation;
    Caddi = 0x0B, "caddi", CondDI, Permutation;
    Cadd = 0x0C, "cadd", CondDA, Permutation;
    Czaddi = 0x0D, "czaddi", CDI, Permutation;
    Tcs = 0x0E, "tcs", TwoCase, Permutation;
    Tcai = 0x0F, "tcai", TwoCaseI, Permutation;
    Madd = 0x10, "madd", DAB, Permutation;
    Msub = 0x11, "msub", DAB, Permutation;
    Xand = 0x12, "xand", DAB, Permutation;
    Xior = 0x13, "xior", DAB, Permutation;
    Xsll = 0x14, "xsll", DAI, Permutation;
    Xsrl = 0x15, "xsrl", DAI, Permutation;
    Xslt = 0x16, "xslt", DAB, Permutation;
    Xltu = 0x17, "xltu", DAB, Permutation;
    Xeq = 0x18, "xeq", DAB, Permutation;
    Xmulk = 0x19, "xmulk", DABI, Permutation;
    Xdivk = 0x1A, "xdivk", DABI, Permutation;
    Xrem = 0x1B, "xrem", DAB, Permutation;
    Swapm = 0x1C, "swapm", DAI, Permutation;
    Xorm = 0x1D, "xorm", DAI, Permutation;
    Hq = 0x1E, "hq", DI, Hadamard;
    Zq = 0x1F, "zq", DI, Phase;
    Rzk = 0x20, "rzk", Rot, Phase;
    Meas = 0x21, "meas", D, Measurement;
    Halt = 0x22, "halt", None, Halt;
}

/// One decoded machine instruction. Fields an opcode does not use are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub op: Opcode,
    pub rd: Reg,
    pub ra: Reg,
    pub rb: Reg,
    pub rc: Reg,
    pub pol: bool,
    pub imm: i32,
}

impl Instruction {
    fn raw(op: Opcode) -> Instruction {
        Instruction { op, rd: Reg::ZERO, ra: Reg::ZERO, rb: Reg::ZERO, rc: Reg::ZERO, pol: false, imm: 0 }
    }

    pub fn nop() -> Instruction {
        Instruction::raw(Opcode::Nop)
    }

    pub fn halt() -> Instruction {
        Instruction::raw(Opcode::Halt)
    }

    /// `op rd`
    pub fn d(op: Opcode, rd: Reg) -> Result<Instruction, IsaError> {
        Instruction { rd, ..Instruction::raw(op) }.validated()
    }

    /// `op rd, imm`
    pub fn di(op: Opcode, rd: Reg, imm: i32) -> Result<Instruction, IsaError> {
        Instruction { rd, imm, ..Instruction::raw(op) }.validated()
    }

    /// `op rd, ra`
    pub fn da(op: Opcode, rd: Reg, ra: Reg) -> Result<Instruction, IsaError> {
        Instruction { rd, ra, ..Instruction::raw(op) }.validated()
    }

    /// `op rd, ra, rb`
    pub fn dab(op: Opcode, rd: Reg, ra: Reg, rb: Reg) -> Result<Instruction, IsaError> {
        Instruction { rd, ra, rb, ..Instruction::raw(op) }.validated()
    }

    /// `op rd, ra, imm`
    pub fn dai(op: Opcode, rd: Reg, ra: Reg, imm: i32) -> Result<Instruction, IsaError> {
        Instruction { rd, ra, imm, ..Instruction::raw(op) }.validated()
    }

    /// `op rd, ra, rb, imm`
    pub fn dabi(op: Opcode, rd: Reg, ra: Reg, rb: Reg, imm: i32) -> Result<Instruction, IsaError> {
        Instruction { rd, ra, rb, imm, ..Instruction::raw(op) }.validated()
    }

    /// `op rc, pol, rd, ra` (cswap, cadd)
    pub fn cond_da(op: Opcode, rc: Reg, pol: bool, rd: Reg, ra: Reg) -> Result<Instruction, IsaError> {
        Instruction { rc, pol, rd, ra, ..Instruction::raw(op) }.validated()
    }

    /// `caddi rc, pol, rd, imm`
    pub fn caddi(rc: Reg, pol: bool, rd: Reg, imm: i32) -> Result<Instruction, IsaError> {
        Instruction { rc, pol, rd, imm, ..Instruction::raw(Opcode::Caddi) }.validated()
    }

    /// `czaddi rc, rd, imm`
    pub fn czaddi(rc: Reg, rd: Reg, imm: i32) -> Result<Instruction, IsaError> {
        Instruction { rc, rd, imm, ..Instruction::raw(Opcode::Czaddi) }.validated()
    }

    /// `tcs rc, ra, rd, rb`
    pub fn tcs(rc: Reg, ra: Reg, rd: Reg, rb: Reg) -> Result<Instruction, IsaError> {
        Instruction { rc, ra, rd, rb, ..Instruction::raw(Opcode::Tcs) }.validated()
    }

    /// `tcai rc, ra, rd, rb, imm`
    pub fn tcai(rc: Reg, ra: Reg, rd: Reg, rb: Reg, imm: i32) -> Result<Instruction, IsaError> {
        Instruction { rc, ra, rd, rb, imm, ..Instruction::raw(Opcode::Tcai) }.validated()
    }

    /// `rzk rd, bit, k`
    pub fn rzk(rd: Reg, bit: u8, k: i32) -> Result<Instruction, IsaError> {
        let ra = Reg::new(bit)?;
        Instruction { rd, ra, imm: k, ..Instruction::raw(Opcode::Rzk) }.validated()
    }

    pub fn class(&self) -> InstructionClass {
        self.op.class()
    }

    /// Checks the opcode's operand constraints and normalizes unused fields.
    pub fn validated(self) -> Result<Instruction, IsaError> {
        self.validate()?;
        let (d, a, b, c, p, i) = self.op.format().uses();
        Ok(Instruction {
            op: self.op,
            rd: if d { self.rd } else { Reg::ZERO },
            ra: if a { self.ra } else { Reg::ZERO },
            rb: if b { self.rb } else { Reg::ZERO },
            rc: if c { self.rc } else { Reg::ZERO },
            pol: p && self.pol,
            imm: if i { self.imm } else { 0 },
        })
    }

    pub fn validate(&self) -> Result<(), IsaError> {
        use Opcode::*;
        let alias = |why: &'static str| Err(IsaError::OperandAliasing(self.to_string(), why));
        let zero = || Err(IsaError::ZeroWrite(self.to_string()));
        let range = |lo: i64, hi: i64| -> Result<(), IsaError> {
            let imm = self.imm as i64;
            if imm < lo || imm > hi {
                Err(IsaError::ImmediateRange { mnemonic: self.op.mnemonic(), imm, lo, hi })
            } else {
                Ok(())
            }
        };
        let written: &[Reg] = match self.op {
            Nop | Halt | Meas | Zq | Rzk => &[],
            Swap | Cswap => &[self.rd, self.ra],
            Tcs | Itcs => &[self.rd, self.rb, self.ra],
            Tcai => &[self.rd, self.rb],
            _ => &[self.rd],
        };
        if written.contains(&Reg::ZERO) {
            return zero();
        }
        match self.op {
            Add | Sub | Xorr if self.rd == self.ra => return alias("rd must differ from ra"),
            Cswap if self.rc == self.rd || self.rc == self.ra => {
                return alias("control must differ from swapped registers")
            }
            Caddi | Czaddi if self.rc == self.rd => return alias("control must differ from rd"),
            Cadd | Csub if self.rc == self.rd || self.rd == self.ra => {
                return alias("rd must differ from control and ra")
            }
            Tcs | Itcs | Tcai => {
                let regs = [self.rc, self.ra, self.rd, self.rb];
                for i in 0..4 {
                    for j in i + 1..4 {
                        if regs[i] == regs[j] {
                            return alias("two-case operands must be distinct");
                        }
                    }
                }
                if self.op != Tcai && regs.contains(&Reg::UR) {
                    return alias("two-case swap operands must not be $ur");
                }
            }
            Madd | Msub | Xand | Xior | Xslt | Xltu | Xeq | Xrem | Xmulk | Xdivk
                if self.rd == self.ra || self.rd == self.rb =>
            {
                return alias("rd must differ from sources")
            }
            Xsll | Xsrl | Swapm | Xorm if self.rd == self.ra => return alias("rd must differ from ra"),
            _ => {}
        }
        match self.op {
            Hq | Zq => range(1, 32)?,
            Xsll | Xsrl | Xmulk | Xdivk => range(0, 31)?,
            Rzk => {
                range(-32, 32)?;
                if self.imm == 0 {
                    return Err(IsaError::ImmediateRange { mnemonic: "rzk", imm: 0, lo: 1, hi: 32 });
                }
            }
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.op.mnemonic();
        let p = self.pol as u8;
        match self.op.format() {
            Format::None => write!(f, "{m}"),
            Format::D => write!(f, "{m} {}", self.rd),
            Format::DI => write!(f, "{m} {}, {}", self.rd, self.imm),
            Format::DA => write!(f, "{m} {}, {}", self.rd, self.ra),
            Format::DAB => write!(f, "{m} {}, {}, {}", self.rd, self.ra, self.rb),
            Format::DAI => write!(f, "{m} {}, {}, {}", self.rd, self.ra, self.imm),
            Format::DABI => write!(f, "{m} {}, {}, {}, {}", self.rd, self.ra, self.rb, self.imm),
            Format::CondDA => write!(f, "{m} {}, {p}, {}, {}", self.rc, self.rd, self.ra),
            Format::CondDI => write!(f, "{m} {}, {p}, {}, {}", self.rc, self.rd, self.imm),
            Format::CDI => write!(f, "{m} {}, {}, {}", self.rc, self.rd, self.imm),
            Format::TwoCase => write!(f, "{m} {}, {}, {}, {}", self.rc, self.ra, self.rd, self.rb),
            Format::TwoCaseI => write!(f, "{m} {}, {}, {}, {}, {}", self.rc, self.ra, self.rd, self.rb, self.imm),
            Format::Rot => write!(f, "{m} {}, {}, {}", self.rd, self.ra.index(), self.imm),
        }
    }
}

const RESERVED_MASK: u64 = 0x1F << 27;

/// Packs an instruction into its 64-bit word.
pub fn encode(instr: &Instruction) -> Result<u64, IsaError> {
    let code = instr.op.code().ok_or(IsaError::NotEncodable(instr.op.mnemonic()))?;
    let i = instr.validated()?;
    Ok(code as u64
        | (i.rd.0 as u64) << 6
        | (i.ra.0 as u64) << 11
        | (i.rb.0 as u64) << 16
        | (i.rc.0 as u64) << 21
        | (i.pol as u64) << 26
        | ((i.imm as u32) as u64) << 32)
}

/// Unpacks a 64-bit word. Rejects unknown opcodes, nonzero reserved or
/// unused fields, and operand-constraint violations.
pub fn decode(word: u64) -> Result<Instruction, IsaError> {
    let code = (word & 0x3F) as u8;
    let op = Opcode::from_code(code).ok_or(IsaError::UnknownOpcode(code))?;
    if word & RESERVED_MASK != 0 {
        return Err(IsaError::ReservedBits(word));
    }
    let field = |shift: u32| Reg(((word >> shift) & 0x1F) as u8);
    let instr = Instruction {
        op,
        rd: field(6),
        ra: field(11),
        rb: field(16),
        rc: field(21),
        pol: (word >> 26) & 1 == 1,
        imm: (word >> 32) as u32 as i32,
    };
    instr.validate()?;
    if instr.validated()? != instr {
        return Err(IsaError::ReservedBits(word));
    }
    Ok(instr)
}

pub fn classify(instr: &Instruction) -> InstructionClass {
    instr.class()
}

/// Returns the instruction whose execution undoes `instr` on every configuration.
pub fn invert_instruction(instr: &Instruction) -> Result<Instruction, IsaError> {
    use Opcode::*;
    let mut inv = *instr;
    match instr.op {
        Addi | Caddi | Czaddi | Tcai => inv.imm = instr.imm.wrapping_neg(),
        Roti => inv.imm = (32 - (instr.imm as u32 % 32) as i32) % 32,
        Rzk => inv.imm = -instr.imm,
        Add => inv.op = Sub,
        Sub => inv.op = Add,
        Madd => inv.op = Msub,
        Msub => inv.op = Madd,
        Cadd => inv.op = Csub,
        Csub => inv.op = Cadd,
        Tcs => inv.op = Itcs,
        Itcs => inv.op = Tcs,
        Nop | Neg | Notr | Xorr | Xori | Swap | Cswap | Xand | Xior | Xsll | Xsrl | Xslt | Xltu | Xeq | Xmulk
        | Xdivk | Xrem | Swapm | Xorm | Hq | Zq => {}
        Meas | Halt => return Err(IsaError::NotInvertible(instr.op.mnemonic())),
    }
    Ok(inv)
}

#[inline]
fn lsb(v: Word) -> bool {
    v & 1 == 1
}

/// Signed 64-bit quotient convention: division by zero yields 0.
pub fn div_convention(num: i64, den: i64) -> i64 {
    if den == 0 {
        0
    } else {
        num / den
    }
}

/// Signed remainder convention: remainder by zero yields the dividend.
pub fn rem_convention(num: i32, den: i32) -> i32 {
    if den == 0 {
        num
    } else {
        ((num as i64) % (den as i64)) as i32
    }
}

/// Pure XOR-accumulated function of the classical `x*` opcodes.
pub fn xor_function(op: Opcode, a: Word, b: Word, imm: i32) -> Word {
    use Opcode::*;
    match op {
        Xand => a & b,
        Xior => a | b,
        Xsll => shl(a, imm as u32),
        Xsrl => shr(a, imm as u32),
        Xslt => ((a as i32) < (b as i32)) as Word,
        Xltu => (a < b) as Word,
        Xeq => (a == b) as Word,
        Xmulk => (((a as i32 as i64) * (b as i32 as i64)) >> imm) as Word,
        Xdivk => div_convention((a as i32 as i64) << imm, b as i32 as i64) as Word,
        Xrem => rem_convention(a as i32, b as i32) as Word,
        _ => unreachable!("{op:?} is not an XOR-accumulate opcode"),
    }
}

pub fn shl(a: Word, s: u32) -> Word {
    if s >= 32 {
        0
    } else {
        a << s
    }
}

pub fn shr(a: Word, s: u32) -> Word {
    if s >= 32 {
        0
    } else {
        a >> s
    }
}

/// Applies a Permutation or Nop instruction to the registers and memory of
/// `cfg`. The program counter is left untouched.
///
/// Panics when called with a quantum, measurement or halt instruction.
pub fn exec_permutation(instr: &Instruction, cfg: &mut MachineConfig) {
    use Opcode::*;
    let d = instr.rd.index();
    let a = instr.ra.index();
    let b = instr.rb.index();
    let c = instr.rc.index();
    let imm = instr.imm;
    let r = &mut cfg.regs;
    match instr.op {
        Nop => {}
        Addi => r[d] = r[d].wrapping_add(imm as u32),
        Add => r[d] = r[d].wrapping_add(r[a]),
        Sub => r[d] = r[d].wrapping_sub(r[a]),
        Neg => r[d] = r[d].wrapping_neg(),
        Notr => r[d] = !r[d],
        Xorr => r[d] ^= r[a],
        Xori => r[d] ^= imm as u32,
        Swap => r.swap(d, a),
        Cswap => {
            if lsb(r[c]) == instr.pol {
                r.swap(d, a)
            }
        }
        Roti => r[d] = r[d].rotate_left(imm as u32 % 32),
        Caddi => {
            if lsb(r[c]) == instr.pol {
                r[d] = r[d].wrapping_add(imm as u32)
            }
        }
        Cadd => {
            if lsb(r[c]) == instr.pol {
                r[d] = r[d].wrapping_add(r[a])
            }
        }
        Csub => {
            if lsb(r[c]) == instr.pol {
                r[d] = r[d].wrapping_sub(r[a])
            }
        }
        Czaddi => {
            if r[c] == 0 {
                r[d] = r[d].wrapping_add(imm as u32)
            }
        }
        Tcs => {
            let target = if lsb(r[c]) ^ lsb(r[a]) { b } else { d };
            r.swap(Reg::UR.index(), target);
            r[a] ^= 1;
        }
        Itcs => {
            r[a] ^= 1;
            let target = if lsb(r[c]) ^ lsb(r[a]) { b } else { d };
            r.swap(Reg::UR.index(), target);
        }
        Tcai => {
            let target = if lsb(r[c]) ^ lsb(r[a]) { b } else { d };
            r[target] = r[target].wrapping_add(imm as u32);
        }
        Madd => r[d] = r[d].wrapping_add(r[a].wrapping_mul(r[b])),
        Msub => r[d] = r[d].wrapping_sub(r[a].wrapping_mul(r[b])),
        Xand | Xior | Xsll | Xsrl | Xslt | Xltu | Xeq | Xmulk | Xdivk | Xrem => {
            r[d] ^= xor_function(instr.op, r[a], r[b], imm)
        }
        Swapm => {
            let addr = cfg.mem.address(r[a], imm);
            let old = cfg.mem.get(addr);
            cfg.mem.set(addr, cfg.regs[d]);
            cfg.regs[d] = old;
        }
        Xorm => {
            let addr = cfg.mem.address(r[a], imm);
            r[d] ^= cfg.mem.get(addr);
        }
        Hq | Zq | Rzk | Meas | Halt => {
            panic!("exec_permutation called with non-permutation `{instr}`")
        }
    }
    cfg.regs[0] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qvm::Memory;
    use proptest::prelude::*;

    fn cfg_with(regs: &[(Reg, Word)]) -> MachineConfig {
        let mut cfg = MachineConfig::new(Memory::zeroed(64));
        for (r, v) in regs {
            cfg.regs[r.index()] = *v;
        }
        cfg
    }

    #[test]
    fn table_one_aliases() {
        let expect = [
            ("$zero", 0),
            ("$ur", 1),
            ("$tur", 2),
            ("$v0", 3),
            ("$v1", 4),
            ("$a0", 5),
            ("$a3", 8),
            ("$s0", 9),
            ("$s9", 18),
            ("$t0", 19),
            ("$t8", 27),
            ("$grp", 28),
            ("$sp", 29),
            ("$fp", 30),
            ("$ra", 31),
        ];
        for (name, idx) in expect {
            assert_eq!(register_alias(name).unwrap().index(), idx, "{name}");
            assert_eq!(Reg(idx as u8).alias(), name);
        }
        for bad in ["$t9", "$s10", "$v2", "$a4", "grp", "$", "$32", "$x0"] {
            assert!(register_alias(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn encode_addi_fields() {
        let i = Instruction::di(Opcode::Addi, register_alias("$t1").unwrap(), 6).unwrap();
        let w = encode(&i).unwrap();
        assert_eq!(w & 0x3F, 0x01);
        assert_eq!((w >> 6) & 0x1F, 20);
        assert_eq!(w >> 32, 6);
        assert_eq!(encode(&Instruction::nop()).unwrap(), 0);
    }

    #[test]
    fn add_self_is_aliasing() {
        let err = Instruction::da(Opcode::Add, Reg::T0, Reg::T0).unwrap_err();
        assert!(err.to_string().contains("operand aliasing"));
        assert!(matches!(Instruction::di(Opcode::Addi, Reg::ZERO, 1), Err(IsaError::ZeroWrite(_))));
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode(0x3F), Err(IsaError::UnknownOpcode(0x3F))));
        assert!(matches!(decode(1 << 27), Err(IsaError::ReservedBits(_))));
        // nop with a stray immediate
        assert!(matches!(decode(1 << 40), Err(IsaError::ReservedBits(_))));
        // hq with immediate 0
        let w = 0x1E | (19 << 6);
        assert!(matches!(decode(w), Err(IsaError::ImmediateRange { .. })));
    }

    #[test]
    fn round_trip_examples() {
        let s = Instruction::da(Opcode::Swap, Reg::UR, Reg::TUR).unwrap();
        assert_eq!(decode(encode(&s).unwrap()).unwrap(), s);
        let c = Instruction::caddi(Reg::T0, false, Reg::UR, 4).unwrap();
        assert_eq!(decode(encode(&c).unwrap()).unwrap(), c);
        let c1 = Instruction::caddi(Reg::T0, true, Reg::UR, 4).unwrap();
        assert_ne!(encode(&c).unwrap(), encode(&c1).unwrap());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(Opcode::Addi.class(), InstructionClass::Permutation);
        assert_eq!(Opcode::Hq.class(), InstructionClass::Hadamard);
        assert_eq!(Opcode::Meas.class(), InstructionClass::Measurement);
        assert_eq!(Opcode::Zq.class(), InstructionClass::Phase);
        assert_eq!(Opcode::Halt.class(), InstructionClass::Halt);
        assert_eq!(Opcode::ALL.len(), 35);
    }

    #[test]
    fn invert_examples() {
        let a = Instruction::di(Opcode::Addi, Reg::temp(1), 6).unwrap();
        assert_eq!(invert_instruction(&a).unwrap().imm, -6);
        let s = Instruction::da(Opcode::Swap, Reg::UR, Reg::TUR).unwrap();
        assert_eq!(invert_instruction(&s).unwrap(), s);
        let h = Instruction::di(Opcode::Hq, Reg::T0, 3).unwrap();
        assert_eq!(invert_instruction(&h).unwrap(), h);
        let z = Instruction::rzk(Reg::T0, 2, 3).unwrap();
        assert_eq!(invert_instruction(&z).unwrap().imm, -3);
        assert!(invert_instruction(&Instruction::halt()).is_err());
        let m = Instruction::d(Opcode::Meas, Reg::T0).unwrap();
        assert!(invert_instruction(&m).is_err());
    }

    #[test]
    fn addi_listing() {
        let mut cfg = cfg_with(&[]);
        let t1 = Reg::temp(1);
        let t2 = Reg::temp(2);
        exec_permutation(&Instruction::di(Opcode::Addi, t1, 6).unwrap(), &mut cfg);
        exec_permutation(&Instruction::da(Opcode::Add, t2, t1).unwrap(), &mut cfg);
        assert_eq!(cfg.regs[t1.index()], 6);
        assert_eq!(cfg.regs[t2.index()], 6);
    }

    #[test]
    fn table_two_first_iteration_cells() {
        let x: i32 = 7;
        let (cnt, act, tur1, tur2) = (Reg::temp(0), Reg::temp(1), Reg::temp(2), Reg::temp(3));
        let mut cfg = cfg_with(&[(Reg::UR, 1), (tur1, 1), (tur2, (1 - x) as u32)]);
        exec_permutation(&Instruction::tcs(cnt, act, tur1, tur2).unwrap(), &mut cfg);
        let row = |c: &MachineConfig| [Reg::UR, tur1, tur2, act, cnt].map(|r| c.regs[r.index()] as i32);
        assert_eq!(row(&cfg), [1, 1, 1 - x, 1, 0]);
        exec_permutation(&Instruction::tcai(cnt, act, tur1, tur2, x).unwrap(), &mut cfg);
        assert_eq!(row(&cfg), [1, 1, 1, 1, 0]);
        exec_permutation(&Instruction::czaddi(cnt, tur1, -1).unwrap(), &mut cfg);
        assert_eq!(row(&cfg), [1, 0, 1, 1, 0]);
    }

    #[test]
    fn division_conventions() {
        let mut cfg = cfg_with(&[(Reg::temp(1), 10)]);
        let i = Instruction::dabi(Opcode::Xdivk, Reg::temp(0), Reg::temp(1), Reg::temp(2), 0).unwrap();
        exec_permutation(&i, &mut cfg);
        assert_eq!(cfg.regs[Reg::temp(0).index()], 0);
        let r = Instruction::dab(Opcode::Xrem, Reg::temp(0), Reg::temp(1), Reg::temp(2)).unwrap();
        exec_permutation(&r, &mut cfg);
        assert_eq!(cfg.regs[Reg::temp(0).index()], 10);
    }

    #[test]
    fn caddi_polarity_truth_table() {
        for pol in [false, true] {
            for bit in [0u32, 1] {
                let mut cfg = cfg_with(&[(Reg::T0, bit | 0x10)]);
                exec_permutation(&Instruction::caddi(Reg::T0, pol, Reg::UR, 5).unwrap(), &mut cfg);
                let fired = (bit == 1) == pol;
                assert_eq!(cfg.regs[1], if fired { 5 } else { 0 }, "pol={pol} bit={bit}");
            }
        }
    }

    #[test]
    fn itcs_undoes_tcs_over_selector_states() {
        let (c, a, d, b) = (Reg::temp(0), Reg::temp(1), Reg::temp(2), Reg::temp(3));
        let tcs = Instruction::tcs(c, a, d, b).unwrap();
        let inv = invert_instruction(&tcs).unwrap();
        assert_eq!(inv.op, Opcode::Itcs);
        let mut seed = 0x1234_5678u32;
        let mut next = || {
            seed = seed.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            seed
        };
        for sel in 0..4u32 {
            for _ in 0..50 {
                let start = cfg_with(&[
                    (c, (next() & !1) | (sel & 1)),
                    (a, (next() & !1) | (sel >> 1)),
                    (d, next()),
                    (b, next()),
                    (Reg::UR, next()),
                ]);
                let mut cfg = start.clone();
                exec_permutation(&tcs, &mut cfg);
                let touched = if (sel & 1) ^ (sel >> 1) == 0 { d } else { b };
                assert_eq!(cfg.regs[1], start.regs[touched.index()]);
                exec_permutation(&inv, &mut cfg);
                assert_eq!(cfg, start);
            }
        }
    }

    pub(crate) fn arb_reg() -> impl Strategy<Value = Reg> {
        (0u8..32).prop_map(Reg)
    }

    pub(crate) fn arb_instruction() -> impl Strategy<Value = Instruction> {
        (0usize..Opcode::ALL.len(), arb_reg(), arb_reg(), arb_reg(), arb_reg(), any::<bool>(), any::<i32>(), 0i32..40)
            .prop_filter_map("invalid operands", |(o, rd, ra, rb, rc, pol, imm, small)| {
                let op = Opcode::ALL[o];
                let imm = match op {
                    Opcode::Hq | Opcode::Zq | Opcode::Xsll | Opcode::Xsrl | Opcode::Xmulk | Opcode::Xdivk => small,
                    Opcode::Rzk => small - 20,
                    _ => imm,
                };
                let ra = if op == Opcode::Rzk { Reg(ra.0 & 31) } else { ra };
                Instruction { op, rd, ra, rb, rc, pol, imm }.validated().ok()
            })
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(i in arb_instruction()) {
            let w = encode(&i).unwrap();
            prop_assert_eq!(decode(w).unwrap(), i);
            prop_assert_eq!(encode(&decode(w).unwrap()).unwrap(), w);
        }

        #[test]
        fn decodable_words_re_encode(w in any::<u64>()) {
            if let Ok(i) = decode(w) {
                prop_assert_eq!(encode(&i).unwrap(), w);
            }
        }

        #[test]
        fn inverse_law(i in arb_instruction(), regs in proptest::array::uniform32(any::<u32>()),
                       mem in proptest::collection::vec(any::<u32>(), 16)) {
            prop_assume!(matches!(i.class(), InstructionClass::Permutation | InstructionClass::Nop));
            let mut start = MachineConfig::new(Memory::from_words(&mem, 16));
            start.regs = regs;
            start.regs[0] = 0;
            let mut cfg = start.clone();
            exec_permutation(&i, &mut cfg);
            exec_permutation(&invert_instruction(&i).unwrap(), &mut cfg);
            prop_assert_eq!(cfg, start);
        }
    }

    /// Brute-force injectivity on two 8-bit registers, all other state fixed.
    #[test]
    fn permutations_are_bijective_on_small_domain() {
        let (r1, r2, r3) = (Reg::temp(0), Reg::temp(1), Reg::temp(2));
        let samples = [
            Instruction::di(Opcode::Addi, r1, 3).unwrap(),
            Instruction::da(Opcode::Add, r1, r2).unwrap(),
            Instruction::da(Opcode::Sub, r1, r2).unwrap(),
            Instruction::d(Opcode::Neg, r1).unwrap(),
            Instruction::d(Opcode::Notr, r1).unwrap(),
            Instruction::da(Opcode::Xorr, r1, r2).unwrap(),
            Instruction::da(Opcode::Swap, r1, r2).unwrap(),
            Instruction::cond_da(Opcode::Cswap, r3, true, r1, r2).unwrap(),
            Instruction::di(Opcode::Roti, r1, 5).unwrap(),
            Instruction::caddi(r2, true, r1, 9).unwrap(),
            Instruction::cond_da(Opcode::Cadd, r2, false, r1, r3).unwrap(),
            Instruction::czaddi(r2, r1, -1).unwrap(),
            Instruction::dab(Opcode::Madd, r1, r2, r2).unwrap(),
            Instruction::dab(Opcode::Xand, r1, r2, r3).unwrap(),
            Instruction::dab(Opcode::Xslt, r1, r2, r3).unwrap(),
            Instruction::dabi(Opcode::Xmulk, r1, r2, r3, 2).unwrap(),
            Instruction::dabi(Opcode::Xdivk, r1, r2, r3, 0).unwrap(),
            Instruction::dab(Opcode::Xrem, r1, r2, r3).unwrap(),
            Instruction::dai(Opcode::Swapm, r1, r2, 1).unwrap(),
            Instruction::dai(Opcode::Xorm, r1, r2, 1).unwrap(),
        ];
        for instr in samples {
            let mut seen = std::collections::HashSet::new();
            for v1 in 0..256u32 {
                for v2 in 0..256u32 {
                    let mut cfg = cfg_with(&[(r1, v1), (r2, v2), (r3, 7)]);
                    cfg.mem.set(3, 11);
                    exec_permutation(&instr, &mut cfg);
                    let key = (cfg.regs, cfg.mem.to_vec());
                    assert!(seen.insert(key), "{instr} not injective at ({v1},{v2})");
                }
            }
        }
    }
}
