//! Recursive-descent parser with C operator precedence; `@` and `#` share
//! the tier of `^`.

use crate::diag::{Diagnostics, Loc};

use super::ast::*;
use super::fixed;
use super::lexer::{lex, Tok, Token};

pub fn parse_module(src: &str) -> Result<Module, Diagnostics> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    p.module().map_err(|(loc, msg)| Diagnostics::single(loc, msg))
}

type PResult<T> = Result<T, (Loc, String)>;

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

const BINARY_LEVELS: &[&[(&str, BinOp)]] = &[
    &[("|", BinOp::Or)],
    &[("^", BinOp::Xor), ("@", BinOp::Had), ("#", BinOp::Phase)],
    &[("&", BinOp::And)],
    &[("==", BinOp::Eq), ("!=", BinOp::Ne)],
    &[("<", BinOp::Lt), ("<=", BinOp::Le), (">", BinOp::Gt), (">=", BinOp::Ge)],
    &[("<<", BinOp::Shl), (">>", BinOp::Shr)],
    &[("+", BinOp::Add), ("-", BinOp::Sub)],
    &[("*", BinOp::Mul), ("/", BinOp::Div), ("%", BinOp::Rem)],
];

const ASSIGN_OPS: &[(&str, AssignOp)] = &[
    ("=", AssignOp::Set),
    ("+=", AssignOp::Add),
    ("-=", AssignOp::Sub),
    ("*=", AssignOp::Mul),
    ("/=", AssignOp::Div),
    ("%=", AssignOp::Rem),
    ("@=", AssignOp::Had),
    ("#=", AssignOp::Phase),
];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn loc(&self) -> Loc {
        self.toks[self.pos].loc
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        let hit = self.is_punct(p);
        if hit {
            self.bump();
        }
        hit
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Float(v) => format!("`{v}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err((self.loc(), format!("expected `{p}`, found {}", self.describe())))
        }
    }

    fn ident(&mut self) -> PResult<(String, Loc)> {
        let loc = self.loc();
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                self.bump();
                Ok((s, loc))
            }
            _ => Err((loc, format!("expected identifier, found {}", self.describe()))),
        }
    }

    fn at_type(&self) -> bool {
        ["int", "unsigned", "float", "void"].iter().any(|k| self.is_kw(k))
    }

    /// Parses a type name; `None` means `void`.
    fn ty(&mut self) -> PResult<Option<Ty>> {
        let loc = self.loc();
        let t = match self.peek() {
            Tok::Ident(s) if s == "int" => Some(Ty::Int),
            Tok::Ident(s) if s == "float" => Some(Ty::Float),
            Tok::Ident(s) if s == "void" => None,
            Tok::Ident(s) if s == "unsigned" => {
                self.bump();
                if self.is_kw("int") {
                    self.bump();
                }
                return Ok(Some(Ty::Unsigned));
            }
            _ => return Err((loc, format!("expected type, found {}", self.describe()))),
        };
        self.bump();
        Ok(t)
    }

    fn module(&mut self) -> PResult<Module> {
        let mut m = Module::default();
        while *self.peek() != Tok::Eof {
            let loc = self.loc();
            let ty = self.ty()?;
            let (name, _) = self.ident()?;
            if self.is_punct("(") {
                m.functions.push(self.function(ty, name, loc)?);
            } else {
                let ty = ty.ok_or((loc, "variables cannot have type void".to_string()))?;
                let (vty, init) = self.decl_rest(ty)?;
                m.globals.push(GlobalDecl { name: Name::new(name), ty: vty, init, loc });
            }
        }
        Ok(m)
    }

    fn function(&mut self, ret: Option<Ty>, name: String, loc: Loc) -> PResult<Function> {
        self.expect("(")?;
        let mut params = Vec::new();
        if self.is_kw("void") && matches!(self.peek_at(1), Tok::Punct(")")) {
            self.bump();
        }
        if !self.is_punct(")") {
            loop {
                let ploc = self.loc();
                let ty = self.ty()?.ok_or((ploc, "parameters cannot have type void".to_string()))?;
                let (pname, _) = self.ident()?;
                let vty = if self.eat_punct("[") {
                    self.expect("]")?;
                    VarTy::Array(ty, None)
                } else {
                    VarTy::Scalar(ty)
                };
                params.push(Param { name: Name::new(pname), ty: vty, loc: ploc });
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect(")")?;
        let body = self.block()?;
        Ok(Function { name, ret, params, body, loc })
    }

    /// After `type ident`: optional array suffix, optional initializer, `;`.
    fn decl_rest(&mut self, ty: Ty) -> PResult<(VarTy, Option<Init>)> {
        let mut vty = VarTy::Scalar(ty);
        if self.eat_punct("[") {
            let loc = self.loc();
            let len = match self.peek().clone() {
                Tok::Int(n) => {
                    self.bump();
                    if n == 0 || n > (1 << 20) {
                        return Err((loc, format!("array length {n} out of range")));
                    }
                    Some(n as u32)
                }
                _ => None,
            };
            self.expect("]")?;
            vty = VarTy::Array(ty, len);
        }
        let init = if self.eat_punct("=") {
            if self.eat_punct("{") {
                let mut items = Vec::new();
                if !self.is_punct("}") {
                    loop {
                        items.push(self.expr()?);
                        if !self.eat_punct(",") || self.is_punct("}") {
                            break;
                        }
                    }
                }
                self.expect("}")?;
                Some(Init::List(items))
            } else {
                Some(Init::Expr(self.expr()?))
            }
        } else {
            None
        };
        self.expect(";")?;
        Ok((vty, init))
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect("{")?;
        let mut out = Vec::new();
        while !self.is_punct("}") {
            if *self.peek() == Tok::Eof {
                return Err((self.loc(), "expected `}`, found end of input".into()));
            }
            out.push(self.stmt()?);
        }
        self.bump();
        Ok(out)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let loc = self.loc();
        if self.at_type() {
            let ty = self.ty()?.ok_or((loc, "variables cannot have type void".to_string()))?;
            let (name, _) = self.ident()?;
            let (vty, init) = self.decl_rest(ty)?;
            return Ok(Stmt { kind: StmtKind::Decl(Name::new(name), vty, init), loc });
        }
        let kind = if self.is_kw("if") {
            self.bump();
            return self.if_rest(loc);
        } else if self.is_kw("do") {
            self.bump();
            let body = self.block()?;
            if !self.is_kw("while") {
                return Err((self.loc(), format!("expected `while`, found {}", self.describe())));
            }
            self.bump();
            self.expect("(")?;
            if self.is_punct(")") {
                return Err((self.loc(), "missing loop condition".into()));
            }
            let cond = self.expr()?;
            self.expect(")")?;
            self.expect(";")?;
            StmtKind::DoWhile(body, cond)
        } else if self.is_kw("print") {
            self.bump();
            let e = self.expr()?;
            self.expect(";")?;
            StmtKind::Print(e)
        } else if self.is_kw("return") {
            self.bump();
            let e = if self.is_punct(";") { None } else { Some(self.expr()?) };
            self.expect(";")?;
            StmtKind::Return(e)
        } else if matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Punct("(")) {
            let e = self.primary()?;
            self.expect(";")?;
            StmtKind::Call(e)
        } else {
            let (name, _) = self.ident()?;
            let lv = if self.eat_punct("[") {
                let idx = self.expr()?;
                self.expect("]")?;
                LValue::Index(Name::new(name), Box::new(idx))
            } else {
                LValue::Var(Name::new(name))
            };
            let op_loc = self.loc();
            let op = match self.peek() {
                Tok::Punct(p) => ASSIGN_OPS.iter().find(|(s, _)| s == p).map(|(_, o)| *o),
                _ => None,
            }
            .ok_or((op_loc, format!("expected assignment operator, found {}", self.describe())))?;
            self.bump();
            let e = self.expr()?;
            self.expect(";")?;
            StmtKind::Assign(lv, op, e)
        };
        Ok(Stmt { kind, loc })
    }

    fn if_rest(&mut self, loc: Loc) -> PResult<Stmt> {
        self.expect("(")?;
        let cond = self.expr()?;
        self.expect(")")?;
        let then = self.block()?;
        let els = if self.is_kw("else") {
            self.bump();
            if self.is_kw("if") {
                let l = self.loc();
                self.bump();
                vec![self.if_rest(l)?]
            } else {
                self.block()?
            }
        } else {
            Vec::new()
        };
        Ok(Stmt { kind: StmtKind::If(cond, then, els), loc })
    }

    pub fn expr(&mut self) -> PResult<Expr> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> PResult<Expr> {
        if level == BINARY_LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        loop {
            let op = match self.peek() {
                Tok::Punct(p) => BINARY_LEVELS[level].iter().find(|(s, _)| s == p).map(|(_, o)| *o),
                _ => None,
            };
            let Some(op) = op else { return Ok(lhs) };
            let loc = self.loc();
            self.bump();
            let rhs = self.binary(level + 1)?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), loc);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        let loc = self.loc();
        if self.eat_punct("-") {
            let e = self.unary()?;
            return Ok(Expr::new(ExprKind::Unary(UnOp::Neg, Box::new(e)), loc));
        }
        if self.eat_punct("~") {
            let e = self.unary()?;
            return Ok(Expr::new(ExprKind::Unary(UnOp::Not, Box::new(e)), loc));
        }
        if self.eat_punct("+") {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let loc = self.loc();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                let v = u32::try_from(v).map_err(|_| (loc, format!("integer literal {v} does not fit in 32 bits")))?;
                Ok(Expr::new(ExprKind::Int(v), loc))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr { kind: ExprKind::Float(fixed::from_f64(v)), ty: Ty::Float, loc })
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(_) => {
                let (name, _) = self.ident()?;
                if self.eat_punct("(") {
                    let mut args = Vec::new();
                    if !self.is_punct(")") {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat_punct(",") {
                                break;
                            }
                        }
                    }
                    self.expect(")")?;
                    Ok(Expr::new(ExprKind::Call(Name::new(name), args), loc))
                } else if self.eat_punct("[") {
                    let idx = self.expr()?;
                    self.expect("]")?;
                    Ok(Expr::new(ExprKind::Index(Name::new(name), Box::new(idx)), loc))
                } else {
                    Ok(Expr::new(ExprKind::Var(Name::new(name)), loc))
                }
            }
            _ => Err((loc, format!("expected expression, found {}", self.describe()))),
        }
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "int" | "unsigned" | "float" | "void" | "if" | "else" | "do" | "while" | "print" | "return")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(src: &str) -> Vec<Stmt> {
        parse_module(&format!("int main() {{ {src} }}")).unwrap().functions.remove(0).body
    }

    #[test]
    fn precedence() {
        let s = body("a = 2 + a * (b / 4 - 1);");
        let StmtKind::Assign(_, AssignOp::Set, e) = &s[0].kind else { panic!() };
        let ExprKind::Binary(BinOp::Add, l, r) = &e.kind else { panic!("{e:?}") };
        assert_eq!(l.kind, ExprKind::Int(2));
        assert!(matches!(r.kind, ExprKind::Binary(BinOp::Mul, _, _)));
        let s = body("x = a & 1 == 1;");
        let StmtKind::Assign(_, _, e) = &s[0].kind else { panic!() };
        assert!(matches!(e.kind, ExprKind::Binary(BinOp::And, _, _)));
        let s = body("int a = 0 @ 6;");
        let StmtKind::Decl(_, _, Some(Init::Expr(e))) = &s[0].kind else { panic!() };
        assert!(matches!(e.kind, ExprKind::Binary(BinOp::Had, _, _)));
    }

    #[test]
    fn example_listing_parses() {
        let src = "int a; int b = 3; float c; float d = 4.5; int arr1[32]; float arr2[32];
            a += 2; a += b; a = (b + 4) * 2; arr1[a] = 2;
            if (a == 1) { a += 1; } else { a -= 1; }
            do { a += 1; } while (a < 10);";
        let s = body(src);
        assert_eq!(s.len(), 12);
        assert!(matches!(s[3].kind, StmtKind::Decl(_, VarTy::Scalar(Ty::Float), Some(_))));
        assert!(matches!(s[4].kind, StmtKind::Decl(_, VarTy::Array(Ty::Int, Some(32)), None)));
    }

    #[test]
    fn globals_and_functions() {
        let m = parse_module("int arr[] = {1, 2, 3}; unsigned int u = ~0; void f(int x, int a[]) { return; }").unwrap();
        assert_eq!(m.globals.len(), 2);
        assert_eq!(m.functions[0].params[1].ty, VarTy::Array(Ty::Int, None));
        assert_eq!(m.globals[1].ty, VarTy::Scalar(Ty::Unsigned));
    }

    #[test]
    fn syntax_errors_have_locations() {
        let e = parse_module("int main() {\n  do { } while ();\n}").unwrap_err();
        assert_eq!(e.0[0].loc, Loc::new(2, 17));
        assert!(e.to_string().contains("missing loop condition"));
        let e = parse_module("int main() { a = ; }").unwrap_err();
        assert!(e.to_string().contains("expected expression"));
        let e = parse_module("int main() { a + 1; }").unwrap_err();
        assert!(e.to_string().contains("expected assignment operator"));
    }
}
