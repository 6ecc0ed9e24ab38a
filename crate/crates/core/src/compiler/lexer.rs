use crate::diag::{Diagnostics, Loc};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(u64),
    Float(f64),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub loc: Loc,
}

// Longest first so that greedy matching works.
const PUNCT: &[&str] = &[
    "<<", ">>", "<=", ">=", "==", "!=", "+=", "-=", "*=", "/=", "%=", "@=", "#=", "+", "-", "*", "/", "%", "&", "|",
    "^", "~", "@", "#", "<", ">", "=", "(", ")", "{", "}", "[", "]", ",", ";",
];

pub fn lex(src: &str) -> Result<Vec<Token>, Diagnostics> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut diags = Diagnostics::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, n: usize| {
        for _ in 0..n {
            if bytes[*i] == b'\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < bytes.len() {
        let c = bytes[i];
        let loc = Loc::new(line, col);
        if c.is_ascii_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
        } else if src[i..].starts_with("//") {
            let n = src[i..].find('\n').unwrap_or(bytes.len() - i);
            advance(&mut i, &mut line, &mut col, n);
        } else if src[i..].starts_with("/*") {
            match src[i + 2..].find("*/") {
                Some(n) => advance(&mut i, &mut line, &mut col, n + 4),
                None => {
                    diags.error(loc, "unterminated comment");
                    break;
                }
            }
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let n = src[i..].find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_')).unwrap_or(bytes.len() - i);
            out.push(Token { tok: Tok::Ident(src[i..i + n].to_string()), loc });
            advance(&mut i, &mut line, &mut col, n);
        } else if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let n = src[i..].find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '.')).unwrap_or(bytes.len() - i);
            let text = &src[i..i + n];
            match number(text) {
                Some(t) => out.push(Token { tok: t, loc }),
                None => diags.error(loc, format!("invalid number `{text}`")),
            }
            advance(&mut i, &mut line, &mut col, n);
        } else if let Some(p) = PUNCT.iter().find(|p| src[i..].starts_with(**p)) {
            out.push(Token { tok: Tok::Punct(p), loc });
            advance(&mut i, &mut line, &mut col, p.len());
        } else {
            let ch = src[i..].chars().next().unwrap();
            diags.error(loc, format!("unexpected character `{ch}`"));
            advance(&mut i, &mut line, &mut col, ch.len_utf8());
        }
    }
    if diags.has_errors() {
        return Err(diags);
    }
    out.push(Token { tok: Tok::Eof, loc: Loc::new(line, col) });
    Ok(out)
}

fn number(text: &str) -> Option<Tok> {
    if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        return u64::from_str_radix(hex, 16).ok().map(Tok::Int);
    }
    if text.contains('.') || text.contains(['e', 'E']) {
        return text.parse::<f64>().ok().filter(|v| v.is_finite()).map(Tok::Float);
    }
    text.parse::<u64>().ok().map(Tok::Int)
}
