//! Two-pass assembler and disassembler for the textual instruction format.
//!
//! One instruction or directive per line, `#` starts a comment, labels are
//! `name:`. Immediates are expressions over integer literals and labels
//! with `+`, `-`, unary minus and parentheses. Text labels count
//! instructions from 0; data labels count data words from 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::diag::{Diagnostics, Loc};
use crate::isa::{register_alias, Format, Instruction, Opcode, Reg};
use crate::program::{Program, DEFAULT_GARBAGE_BASE, DEFAULT_MEM_WORDS, DEFAULT_STACK_BASE};

/// Successful assembly: the image, the resolved symbol table, and warnings.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub program: Program,
    pub symbols: BTreeMap<String, i64>,
    pub warnings: Diagnostics,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Text,
    Data,
}

struct Line<'a> {
    loc: Loc,
    head: &'a str,
    head_col: u32,
    rest: &'a str,
    section: Section,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

pub fn assemble(src: &str) -> Result<Program, Diagnostics> {
    assemble_full(src).map(|a| a.program)
}

pub fn assemble_full(src: &str) -> Result<Assembled, Diagnostics> {
    let mut diags = Diagnostics::new();
    let mut symbols: BTreeMap<String, i64> = BTreeMap::new();
    let mut lines = Vec::new();
    let mut section = Section::Text;
    let (mut n_instr, mut n_data) = (0i64, 0i64);

    // pass 1: labels and sizes
    for (ln, raw) in src.lines().enumerate() {
        let line_no = ln as u32 + 1;
        let code = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let mut rest = code;
        let mut offset = 0usize;
        loop {
            let trimmed = rest.trim_start();
            offset += rest.len() - trimmed.len();
            rest = trimmed;
            let Some(colon) = rest.find(':') else { break };
            let name = rest[..colon].trim();
            if !is_ident(name) || name.starts_with('.') {
                break;
            }
            let loc = Loc::new(line_no, offset as u32 + 1);
            let addr = if section == Section::Text { n_instr } else { n_data };
            if symbols.insert(name.to_string(), addr).is_some() {
                diags.error(loc, format!("duplicate label `{name}`"));
            }
            offset += colon + 1;
            rest = &rest[colon + 1..];
        }
        let rest = rest.trim_end();
        if rest.is_empty() {
            continue;
        }
        let head_end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let head = &rest[..head_end];
        let tail = &rest[head_end..];
        let tail_trim = tail.trim_start();
        let line = Line {
            loc: Loc::new(line_no, offset as u32 + 1),
            head,
            head_col: offset as u32 + 1,
            rest: tail_trim,
            section,
        };
        match head {
            ".text" => section = Section::Text,
            ".data" => section = Section::Data,
            ".word" => n_data += split_operands(tail_trim).len() as i64,
            ".zero" => {
                if let Ok(n) = parse_int(tail_trim.trim()) {
                    n_data += n.max(0);
                }
            }
            h if h.starts_with('.') => {}
            _ => n_instr += 1,
        }
        lines.push(line);
    }

    // pass 2: encode
    let mut program = Program {
        mem_words: DEFAULT_MEM_WORDS,
        stack_base: DEFAULT_STACK_BASE,
        garbage_base: DEFAULT_GARBAGE_BASE,
        ..Program::default()
    };
    let mut warnings = Diagnostics::new();
    for line in &lines {
        if let Err(msg) = assemble_line(line, &symbols, &mut program, &mut warnings) {
            diags.error(line.loc, msg);
        }
    }
    if !diags.has_errors() {
        if let Err(e) = program.validate() {
            diags.error(Loc::new(1, 1), e.to_string());
        }
    }
    if diags.has_errors() {
        diags.extend(warnings);
        return Err(diags);
    }
    Ok(Assembled { program, symbols, warnings })
}

fn split_operands(s: &str) -> Vec<&str> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    s.split(',').map(str::trim).collect()
}

fn parse_int(s: &str) -> Result<i64, String> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(h, 16)
    } else {
        body.parse::<i64>()
    }
    .map_err(|_| format!("invalid integer `{s}`"))?;
    Ok(if neg { -v } else { v })
}

/// Recursive-descent evaluator for immediate expressions.
struct ExprParser<'a> {
    src: &'a [u8],
    pos: usize,
    symbols: &'a BTreeMap<String, i64>,
}

impl ExprParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expr(&mut self) -> Result<i64, String> {
        let mut v = self.term()?;
        loop {
            self.skip_ws();
            match self.src.get(self.pos) {
                Some(b'+') => {
                    self.pos += 1;
                    v = v.checked_add(self.term()?).ok_or("overflow in immediate")?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    v = v.checked_sub(self.term()?).ok_or("overflow in immediate")?;
                }
                _ => return Ok(v),
            }
        }
    }

    fn term(&mut self) -> Result<i64, String> {
        self.skip_ws();
        match self.src.get(self.pos) {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.term()?)
            }
            Some(b'+') => {
                self.pos += 1;
                self.term()
            }
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                self.skip_ws();
                if self.src.get(self.pos) != Some(&b')') {
                    return Err("expected `)` in immediate".into());
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                parse_int(std::str::from_utf8(&self.src[start..self.pos]).unwrap())
            }
            Some(c) if c.is_ascii_alphabetic() || *c == b'_' || *c == b'.' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric()
                        || self.src[self.pos] == b'_'
                        || self.src[self.pos] == b'.')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                self.symbols.get(name).copied().ok_or_else(|| format!("unresolved label `{name}`"))
            }
            _ => Err("expected immediate expression".into()),
        }
    }
}

fn eval_expr(s: &str, symbols: &BTreeMap<String, i64>) -> Result<i64, String> {
    let mut p = ExprParser { src: s.as_bytes(), pos: 0, symbols };
    let v = p.expr()?;
    p.skip_ws();
    if p.pos != s.len() {
        return Err(format!("unexpected text in immediate `{s}`"));
    }
    Ok(v)
}

/// Immediate as a 32-bit pattern; accepts the signed and unsigned ranges.
fn eval_imm(s: &str, symbols: &BTreeMap<String, i64>) -> Result<i32, String> {
    let v = eval_expr(s, symbols)?;
    if v < i32::MIN as i64 || v > u32::MAX as i64 {
        return Err(format!("immediate {v} does not fit in 32 bits"));
    }
    Ok(v as u32 as i32)
}

fn eval_u32(s: &str, symbols: &BTreeMap<String, i64>) -> Result<u32, String> {
    let v = eval_expr(s, symbols)?;
    u32::try_from(v).map_err(|_| format!("value {v} out of range"))
}

fn reg(s: &str) -> Result<Reg, String> {
    register_alias(s).map_err(|e| e.to_string())
}

fn assemble_line(
    line: &Line<'_>,
    symbols: &BTreeMap<String, i64>,
    program: &mut Program,
    warnings: &mut Diagnostics,
) -> Result<(), String> {
    let ops = split_operands(line.rest);
    let want = |n: usize| -> Result<(), String> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(format!("`{}` expects {n} operand(s), found {}", line.head, ops.len()))
        }
    };
    match line.head {
        ".text" | ".data" => return want(0),
        ".word" => {
            if line.section != Section::Data {
                return Err("`.word` outside .data".into());
            }
            for op in &ops {
                program.data.push(eval_imm(op, symbols)? as u32);
            }
            return Ok(());
        }
        ".zero" => {
            if line.section != Section::Data {
                return Err("`.zero` outside .data".into());
            }
            want(1)?;
            let n = parse_int(ops[0])?;
            if n < 0 {
                return Err("`.zero` count must be non-negative".into());
            }
            program.data.extend(std::iter::repeat_n(0, n as usize));
            return Ok(());
        }
        ".entry" => {
            want(1)?;
            program.entry = eval_u32(ops[0], symbols)?;
            return Ok(());
        }
        ".mem" => {
            want(1)?;
            program.mem_words = eval_u32(ops[0], symbols)?;
            return Ok(());
        }
        ".garbage" => {
            want(1)?;
            program.garbage_base = eval_u32(ops[0], symbols)?;
            return Ok(());
        }
        ".stack" => {
            want(1)?;
            program.stack_base = eval_u32(ops[0], symbols)?;
            return Ok(());
        }
        h if h.starts_with('.') => return Err(format!("unknown directive `{h}`")),
        _ => {}
    }
    if line.section != Section::Text {
        return Err("instruction in .data section".into());
    }
    let (op, pseudo_li) = match line.head {
        "li" => (Opcode::Addi, true),
        m => (Opcode::from_mnemonic(m).ok_or_else(|| format!("unknown mnemonic `{m}`"))?, false),
    };
    if pseudo_li {
        warnings
            .warning(Loc::new(line.loc.line, line.head_col), "`li` expands to `addi` and assumes the destination is 0");
    }
    let pol = |s: &str| -> Result<bool, String> {
        match eval_expr(s, symbols)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(format!("polarity must be 0 or 1, found {v}")),
        }
    };
    let imm = |s: &str| eval_imm(s, symbols);
    let built = match op.format() {
        Format::None => {
            want(0)?;
            Ok(if op == Opcode::Halt { Instruction::halt() } else { Instruction::nop() })
        }
        Format::D => {
            want(1)?;
            Instruction::d(op, reg(ops[0])?)
        }
        Format::DI => {
            want(2)?;
            Instruction::di(op, reg(ops[0])?, imm(ops[1])?)
        }
        Format::DA => {
            want(2)?;
            Instruction::da(op, reg(ops[0])?, reg(ops[1])?)
        }
        Format::DAB => {
            want(3)?;
            Instruction::dab(op, reg(ops[0])?, reg(ops[1])?, reg(ops[2])?)
        }
        Format::DAI => {
            want(3)?;
            Instruction::dai(op, reg(ops[0])?, reg(ops[1])?, imm(ops[2])?)
        }
        Format::DABI => {
            want(4)?;
            Instruction::dabi(op, reg(ops[0])?, reg(ops[1])?, reg(ops[2])?, imm(ops[3])?)
        }
        Format::CondDA => {
            want(4)?;
            Instruction::cond_da(op, reg(ops[0])?, pol(ops[1])?, reg(ops[2])?, reg(ops[3])?)
        }
        Format::CondDI => {
            want(4)?;
            Instruction::caddi(reg(ops[0])?, pol(ops[1])?, reg(ops[2])?, imm(ops[3])?)
        }
        Format::CDI => {
            want(3)?;
            Instruction::czaddi(reg(ops[0])?, reg(ops[1])?, imm(ops[2])?)
        }
        Format::TwoCase => {
            want(4)?;
            Instruction::tcs(reg(ops[0])?, reg(ops[1])?, reg(ops[2])?, reg(ops[3])?)
        }
        Format::TwoCaseI => {
            want(5)?;
            Instruction::tcai(reg(ops[0])?, reg(ops[1])?, reg(ops[2])?, reg(ops[3])?, imm(ops[4])?)
        }
        Format::Rot => {
            want(3)?;
            let bit = eval_expr(ops[1], symbols)?;
            if !(0..32).contains(&bit) {
                return Err(format!("bit index {bit} out of range 0..31"));
            }
            Instruction::rzk(reg(ops[0])?, bit as u8, imm(ops[2])?)
        }
    };
    program.instructions.push(built.map_err(|e| e.to_string())?);
    Ok(())
}

/// Renders a program as assembly text that re-assembles to the same image.
/// Directives are only emitted when they differ from the defaults.
pub fn disassemble(p: &Program) -> String {
    render(p, false)
}

/// Like [`disassemble`] but appends `# address` to every instruction line.
pub fn disassemble_listing(p: &Program) -> String {
    render(p, true)
}

fn render(p: &Program, addresses: bool) -> String {
    let mut out = String::new();
    if p.mem_words != DEFAULT_MEM_WORDS {
        writeln!(out, ".mem {}", p.mem_words).unwrap();
    }
    if p.stack_base != DEFAULT_STACK_BASE {
        writeln!(out, ".stack {}", p.stack_base).unwrap();
    }
    if p.garbage_base != DEFAULT_GARBAGE_BASE {
        writeln!(out, ".garbage {}", p.garbage_base).unwrap();
    }
    if p.entry != 0 {
        writeln!(out, ".entry {}", p.entry).unwrap();
    }
    if !p.data.is_empty() {
        out.push_str(".data\n");
        for chunk in p.data.chunks(8) {
            let words: Vec<String> = chunk.iter().map(|w| (*w as i32).to_string()).collect();
            writeln!(out, ".word {}", words.join(", ")).unwrap();
        }
        out.push_str(".text\n");
    }
    for (addr, i) in p.instructions.iter().enumerate() {
        if addresses {
            writeln!(out, "{:<32}# {addr}", i.to_string()).unwrap();
        } else {
            writeln!(out, "{i}").unwrap();
        }
    }
    out
}
