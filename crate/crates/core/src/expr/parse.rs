//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' INT)?
//! primary := NUMBER | NUMBER '/' NUMBER | IDENT | 'sqrt' '(' expr ')' | '(' expr ')'
//! ```
//!
//! `p/q` between two integer literals is read as a single rational literal
//! when it opens a term and the denominator is nonzero and carries no
//! exponent, so `x/2/2` keeps its left-associative meaning. Decimal literals such as `0.25`
//! are converted to exact ratios.

use num_bigint::BigInt;
use num_traits::ToPrimitive;

use super::{Expr, ExprError, Node, Rational};

/// Variable naming for the parser and the formatter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Vars {
    /// Explicitly declared names, in index order.
    Named(Vec<String>),
    /// Names `x1 .. xn`.
    Indexed(usize),
}

impl Vars {
    pub fn named<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Vars::Named(names.into_iter().map(Into::into).collect())
    }

    pub fn indexed(arity: usize) -> Self {
        Vars::Indexed(arity)
    }

    pub fn arity(&self) -> usize {
        match self {
            Vars::Named(v) => v.len(),
            Vars::Indexed(n) => *n,
        }
    }

    pub fn name(&self, i: usize) -> String {
        match self {
            Vars::Named(v) => v[i].clone(),
            Vars::Indexed(_) => format!("x{}", i + 1),
        }
    }

    fn resolve(&self, ident: &str, offset: usize) -> Result<usize, ExprError> {
        match self {
            Vars::Named(v) => v
                .iter()
                .position(|n| n == ident)
                .ok_or_else(|| ExprError::UnknownIdentifier { name: ident.to_string(), offset }),
            Vars::Indexed(arity) => {
                let index = ident
                    .strip_prefix('x')
                    .filter(|d| !d.is_empty() && !d.starts_with('0') && d.bytes().all(|b| b.is_ascii_digit()))
                    .and_then(|d| d.parse::<usize>().ok())
                    .ok_or_else(|| ExprError::UnknownIdentifier { name: ident.to_string(), offset })?;
                if index > *arity {
                    return Err(ExprError::VariableOutOfRange { index: index - 1, arity: *arity });
                }
                Ok(index - 1)
            }
        }
    }
}

/// Highest `xK` index used in `text`, for inferring the arity of indexed
/// expressions. Returns 0 when none is present.
pub fn max_indexed_var(text: &str) -> usize {
    let mut lexer = Lexer { src: text, pos: 0 };
    let mut best = 0;
    while let Ok(tok) = lexer.next_token() {
        match tok.kind {
            Tok::End => break,
            Tok::Ident(name) => {
                if let Some(k) = name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    best = best.max(k);
                }
            }
            _ => {}
        }
    }
    best
}

pub fn parse(text: &str, vars: &Vars) -> Result<Expr, ExprError> {
    let mut p = Parser { lexer: Lexer { src: text, pos: 0 }, peeked: None, vars };
    let e = p.expr()?;
    let tok = p.next()?;
    if tok.kind != Tok::End {
        return Err(syntax(tok.offset, "unexpected trailing input"));
    }
    Ok(e)
}

fn syntax(offset: usize, message: &str) -> ExprError {
    ExprError::Syntax { offset, message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(Rational, bool),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    offset: usize,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl Lexer<'_> {
    fn next_token(&mut self) -> Result<Token, ExprError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok(Token { kind: Tok::End, offset: start });
        };
        let kind = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
                    self.pos += 1;
                }
                let lit = &self.src[start..self.pos];
                let (value, integer) = decimal_literal(lit).ok_or_else(|| syntax(start, "malformed number"))?;
                return Ok(Token { kind: Tok::Number(value, integer), offset: start });
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                    self.pos += 1;
                }
                return Ok(Token { kind: Tok::Ident(self.src[start..self.pos].to_string()), offset: start });
            }
            _ => return Err(syntax(start, "unexpected character")),
        };
        self.pos += 1;
        Ok(Token { kind, offset: start })
    }
}

/// Parses `123` or `1.25` into an exact ratio; the flag is true for plain
/// integers.
fn decimal_literal(lit: &str) -> Option<(Rational, bool)> {
    let (int_part, frac_part) = match lit.split_once('.') {
        Some((a, b)) => (a, Some(b)),
        None => (lit, None),
    };
    if int_part.is_empty() && frac_part.is_none_or(|f| f.is_empty()) {
        return None;
    }
    if frac_part.is_some_and(|f| f.contains('.') || f.is_empty()) {
        return None;
    }
    let digits = format!("{}{}", int_part, frac_part.unwrap_or(""));
    let num: BigInt = digits.parse().ok()?;
    let den = BigInt::from(10u32).pow(frac_part.map_or(0, |f| f.len() as u32));
    let r = num_rational::BigRational::new(num, den);
    let numer = r.numer().to_i64()?;
    let denom = r.denom().to_i64()?;
    Some((Rational::new(numer, denom), frac_part.is_none()))
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    peeked: Option<Token>,
    vars: &'a Vars,
}

impl Parser<'_> {
    fn peek(&mut self) -> Result<&Token, ExprError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lexer.next_token()?);
        }
        Ok(self.peeked.as_ref().unwrap())
    }

    fn next(&mut self) -> Result<Token, ExprError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lexer.next_token(),
        }
    }

    fn arity(&self) -> usize {
        self.vars.arity()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek()?.kind {
                Tok::Plus => {
                    self.next()?;
                    let rhs = self.term()?;
                    lhs = Expr::raw(Node::Add(lhs, rhs), self.arity());
                }
                Tok::Minus => {
                    self.next()?;
                    let rhs = self.term()?;
                    let neg = Expr::raw(Node::Neg(rhs), self.arity());
                    lhs = Expr::raw(Node::Add(lhs, neg), self.arity());
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary(true)?;
        loop {
            match self.peek()?.kind {
                Tok::Star => {
                    self.next()?;
                    let rhs = self.unary(false)?;
                    lhs = Expr::raw(Node::Mul(lhs, rhs), self.arity());
                }
                Tok::Slash => {
                    self.next()?;
                    let rhs = self.unary(false)?;
                    lhs = Expr::raw(Node::Div(lhs, rhs), self.arity());
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self, leading: bool) -> Result<Expr, ExprError> {
        if self.peek()?.kind == Tok::Minus {
            self.next()?;
            let inner = self.unary(leading)?;
            return Ok(Expr::raw(Node::Neg(inner), self.arity()));
        }
        self.power(leading)
    }

    fn power(&mut self, leading: bool) -> Result<Expr, ExprError> {
        let base = self.primary(leading)?;
        if self.peek()?.kind != Tok::Caret {
            return Ok(base);
        }
        let caret = self.next()?;
        let tok = self.next()?;
        match tok.kind {
            Tok::Number(k, true) => {
                let k = u32::try_from(*k.numer()).map_err(|_| syntax(tok.offset, "exponent too large"))?;
                Ok(Expr::raw(Node::Pow(base, k), self.arity()))
            }
            _ => Err(syntax(caret.offset + 1, "`^` must be followed by a nonnegative integer literal")),
        }
    }

    fn primary(&mut self, leading: bool) -> Result<Expr, ExprError> {
        let tok = self.next()?;
        match tok.kind {
            Tok::Number(value, integer) => {
                if leading && integer && self.peek()?.kind == Tok::Slash {
                    // Look two tokens ahead for `INT / INT` not followed by `^`.
                    let saved_pos = self.lexer.pos;
                    let slash = self.peeked.take().unwrap();
                    let den = self.lexer.next_token()?;
                    let after_pos = self.lexer.pos;
                    let follow = self.lexer.next_token()?;
                    if let (Tok::Number(d, true), false) = (&den.kind, follow.kind == Tok::Caret) {
                        if d.numer() == &0 {
                            self.lexer.pos = saved_pos;
                            self.peeked = Some(slash);
                            return Ok(Expr::constant(value, self.arity()));
                        }
                        self.lexer.pos = after_pos;
                        return Ok(Expr::constant(Rational::new(*value.numer(), *d.numer()), self.arity()));
                    }
                    self.lexer.pos = saved_pos;
                    self.peeked = Some(slash);
                }
                Ok(Expr::constant(value, self.arity()))
            }
            Tok::Ident(name) if name == "sqrt" => {
                let open = self.next()?;
                if open.kind != Tok::LParen {
                    return Err(syntax(open.offset, "expected `(` after sqrt"));
                }
                let inner = self.expr()?;
                let close = self.next()?;
                if close.kind != Tok::RParen {
                    return Err(syntax(close.offset, "expected `)`"));
                }
                Ok(Expr::raw(Node::Sqrt(inner), self.arity()))
            }
            Tok::Ident(name) => {
                let index = self.vars.resolve(&name, tok.offset)?;
                Expr::var(index, self.arity())
            }
            Tok::LParen => {
                let inner = self.expr()?;
                let close = self.next()?;
                if close.kind != Tok::RParen {
                    return Err(syntax(close.offset, "expected `)`"));
                }
                Ok(inner)
            }
            Tok::End => Err(syntax(tok.offset, "unexpected end of input")),
            _ => Err(syntax(tok.offset, "expected an operand")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(e: &Expr) -> &Node {
        e.node()
    }

    #[test]
    fn broughton_tree() {
        let f = parse("x*(x*y - 1)", &Vars::named(["x", "y"])).unwrap();
        let Node::Mul(a, b) = v(&f) else { panic!() };
        assert_eq!(v(a), &Node::Var(0));
        let Node::Add(p, q) = v(b) else { panic!() };
        assert!(matches!(v(p), Node::Mul(_, _)));
        let Node::Neg(one) = v(q) else { panic!() };
        assert_eq!(v(one), &Node::Const(Rational::from_integer(1)));
    }

    #[test]
    fn single_variable() {
        let f = parse("x1", &Vars::indexed(1)).unwrap();
        assert_eq!(v(&f), &Node::Var(0));
        assert_eq!(f.arity(), 1);
    }

    #[test]
    fn e3_tree_evaluates() {
        let f = parse("z*(x^4 + (x*y - 1)^2)", &Vars::named(["x", "y", "z"])).unwrap();
        assert_eq!(f.eval(&[1.0, 2.0, 3.0]).unwrap(), 3.0 * (1.0 + 1.0));
    }

    #[test]
    fn precedence() {
        let vars = Vars::named(["x"]);
        // ^ binds tighter than unary minus
        assert_eq!(parse("-x^2", &vars).unwrap().eval(&[3.0]).unwrap(), -9.0);
        assert_eq!(parse("2 - 3 - 4", &vars).unwrap().eval(&[0.0]).unwrap(), -5.0);
        assert_eq!(parse("8/2/2", &vars).unwrap().eval(&[0.0]).unwrap(), 2.0);
        assert_eq!(parse("x/2/2", &vars).unwrap().eval(&[8.0]).unwrap(), 2.0);
        assert_eq!(parse("1/2^2", &vars).unwrap().eval(&[0.0]).unwrap(), 0.25);
    }

    #[test]
    fn rational_and_decimal_literals() {
        let vars = Vars::named(["x"]);
        let f = parse("1/18", &vars).unwrap();
        assert_eq!(v(&f), &Node::Const(Rational::new(1, 18)));
        let g = parse("0.25", &vars).unwrap();
        assert_eq!(v(&g), &Node::Const(Rational::new(1, 4)));
    }

    #[test]
    fn errors_carry_offsets() {
        let vars = Vars::named(["x", "y"]);
        assert_eq!(
            parse("x + w", &vars),
            Err(ExprError::UnknownIdentifier { name: "w".into(), offset: 4 })
        );
        assert!(matches!(parse("x ^ y", &vars), Err(ExprError::Syntax { offset: 3, .. })));
        assert!(matches!(parse("x + ", &vars), Err(ExprError::Syntax { offset: 4, .. })));
        assert!(matches!(parse("(x", &vars), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("x $ y", &vars), Err(ExprError::Syntax { offset: 2, .. })));
        assert_eq!(
            parse("x3", &Vars::indexed(2)),
            Err(ExprError::VariableOutOfRange { index: 2, arity: 2 })
        );
    }

    #[test]
    fn max_index() {
        assert_eq!(max_indexed_var("x1 + x3*sqrt(x2)"), 3);
        assert_eq!(max_indexed_var("y"), 0);
    }
}
