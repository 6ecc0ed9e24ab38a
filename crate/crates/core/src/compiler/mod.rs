//! The ONDA compiler: parsing, type checking, lowering to assembly, and a
//! reference interpreter used as a differential oracle.

pub mod ast;
pub mod check;
pub mod fixed;
pub mod interp;
pub mod lexer;
pub mod lower;
pub mod parser;

use crate::asm::{assemble_full, Assembled};
use crate::diag::{Diagnostics, Loc};
use crate::program::Program;

pub use lower::{Home, Lowered, Options};

/// Source of the functions the compiler links in on demand.
pub const STDLIB: &str = include_str!("stdlib.onda");

/// Parses and type checks a translation unit, linking in standard-library
/// functions that are called but not defined.
pub fn parse(src: &str) -> Result<ast::Module, Diagnostics> {
    let mut m = parser::parse_module(src)?;
    let lib = parser::parse_module(STDLIB).expect("standard library parses");
    for f in lib.functions {
        if m.function(&f.name).is_none() && calls(&m, &f.name) {
            m.functions.push(f);
        }
    }
    check::check(&mut m)?;
    Ok(m)
}

fn calls(m: &ast::Module, name: &str) -> bool {
    let mut found = false;
    for f in &m.functions {
        ast::walk_stmts(&f.body, &mut |s| {
            for e in s.exprs() {
                e.walk(&mut |x| {
                    if let ast::ExprKind::Call(n, _) = &x.kind {
                        found |= n.text == name;
                    }
                })
            }
        });
    }
    found
}

/// Result of compiling a translation unit.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub program: Program,
    pub lowered: Lowered,
    /// Label addresses of the generated assembly.
    pub symbols: std::collections::BTreeMap<String, i64>,
    pub warnings: Diagnostics,
}

impl Compiled {
    pub fn asm(&self) -> &str {
        &self.lowered.asm
    }

    /// Address of a label in the generated code.
    pub fn address(&self, label: &str) -> Option<i64> {
        self.symbols.get(label).copied()
    }
}

pub fn compile(src: &str) -> Result<Compiled, Diagnostics> {
    compile_with(src, &Options::default())
}

pub fn compile_with(src: &str, opts: &Options) -> Result<Compiled, Diagnostics> {
    let m = parse(src)?;
    let lowered = lower::lower(&m, opts)?;
    let Assembled { program, symbols, warnings: asm_warnings } = assemble_full(&lowered.asm).map_err(|d| {
        Diagnostics::single(Loc::new(1, 1), format!("internal error: generated assembly is invalid: {d}"))
    })?;
    let mut warnings = lowered.warnings.clone();
    warnings.extend(asm_warnings);
    Ok(Compiled { program, lowered, symbols, warnings })
}
