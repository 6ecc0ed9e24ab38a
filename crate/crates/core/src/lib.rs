//! Toolchain for a reversible quantum instruction set: instruction
//! definitions, assembler, sparse superposition simulator and the ONDA
//! compiler.

pub mod asm;
pub mod compiler;
pub mod diag;
pub mod isa;
pub mod program;
pub mod qvm;
