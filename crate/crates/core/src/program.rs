//! The loadable program image and its `ONDQ` binary encoding.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0..5    "ONDQ1"
//! 5       0x0A
//! 6..34   u32 version (=1), entry, n_instr, n_data, mem_words, garbage_base, stack_base
//! ...     n_instr x u64 instruction words
//! ...     n_data  x u32 data words
//! ```

use thiserror::Error;

use crate::isa::{decode, encode, Instruction, IsaError, Word};

pub const MAGIC: &[u8; 6] = b"ONDQ1\n";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 6 + 7 * 4;

pub const DEFAULT_MEM_WORDS: u32 = 65536;
pub const DEFAULT_STACK_BASE: u32 = 32768;
pub const DEFAULT_GARBAGE_BASE: u32 = 49152;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub data: Vec<Word>,
    pub entry: u32,
    pub mem_words: u32,
    pub garbage_base: u32,
    pub stack_base: u32,
}

impl Default for Program {
    fn default() -> Self {
        Program {
            instructions: Vec::new(),
            data: Vec::new(),
            entry: 0,
            mem_words: DEFAULT_MEM_WORDS,
            garbage_base: DEFAULT_GARBAGE_BASE,
            stack_base: DEFAULT_STACK_BASE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("not an ONDQ image")]
    BadMagic,
    #[error("unsupported ONDQ version {0}")]
    Version(u32),
    #[error("unexpected end of file")]
    Truncated,
    #[error("{0} trailing bytes after data section")]
    Trailing(usize),
    #[error("instruction {index}: {source}")]
    Undecodable { index: usize, source: IsaError },
    #[error("invalid layout: {0}")]
    Layout(String),
}

impl Program {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Structural checks on entry point and memory layout.
    pub fn validate(&self) -> Result<(), ImageError> {
        let n = self.instructions.len() as u32;
        if self.mem_words == 0 {
            return Err(ImageError::Layout("memory size must be positive".into()));
        }
        if n > 0 && self.entry >= n || n == 0 && self.entry != 0 {
            return Err(ImageError::Layout(format!("entry {} outside {} instructions", self.entry, n)));
        }
        if self.garbage_base >= self.mem_words || self.stack_base >= self.mem_words {
            return Err(ImageError::Layout(format!(
                "stack base {} / garbage base {} must lie below memory size {}",
                self.stack_base, self.garbage_base, self.mem_words
            )));
        }
        if self.data.len() as u64 > self.mem_words as u64 {
            return Err(ImageError::Layout("data segment larger than memory".into()));
        }
        Ok(())
    }
}

/// Serializes a program image. Instructions must be encodable.
pub fn emit_binary(p: &Program) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * p.instructions.len() + 4 * p.data.len());
    out.extend_from_slice(MAGIC);
    for v in
        [VERSION, p.entry, p.instructions.len() as u32, p.data.len() as u32, p.mem_words, p.garbage_base, p.stack_base]
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in &p.instructions {
        let w = encode(i).expect("program holds only encodable instructions");
        out.extend_from_slice(&w.to_le_bytes());
    }
    for d in &p.data {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ImageError> {
        let end = self.pos.checked_add(n).ok_or(ImageError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(ImageError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ImageError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ImageError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_binary(bytes: &[u8]) -> Result<Program, ImageError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ImageError::BadMagic);
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(ImageError::Version(version));
    }
    let entry = r.u32()?;
    let n_instr = r.u32()? as usize;
    let n_data = r.u32()? as usize;
    let mem_words = r.u32()?;
    let garbage_base = r.u32()?;
    let stack_base = r.u32()?;
    let mut instructions = Vec::with_capacity(n_instr.min(1 << 20));
    for index in 0..n_instr {
        let w = r.u64()?;
        instructions.push(decode(w).map_err(|source| ImageError::Undecodable { index, source })?);
    }
    let mut data = Vec::with_capacity(n_data.min(1 << 20));
    for _ in 0..n_data {
        data.push(r.u32()?);
    }
    if r.pos != bytes.len() {
        return Err(ImageError::Trailing(bytes.len() - r.pos));
    }
    let p = Program { instructions, data, entry, mem_words, garbage_base, stack_base };
    p.validate()?;
    Ok(p)
}
