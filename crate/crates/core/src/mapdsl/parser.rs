//! Recursive-descent parser for the map expression language.
//!
//! Grammar (see `docs/grammar.md`):
//!
//! ```text
//! map     = expr { "," expr } ;
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | "+" unary | power ;
//! power   = atom [ "^" exponent ] ;
//! exponent = [ "-" | "+" ] integer | "(" [ "-" | "+" ] integer ")" ;
//! atom    = number | ident | ident "(" expr { "," expr } ")" | "(" expr ")" ;
//! ```

use super::ast::{BinOp, Expr, Func, Var};
use super::ParseError;

/// Which identifiers are legal as variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbols {
    /// Coordinates x1..xn, y1..yn plus polar helpers per pair.
    Map { n: usize },
    /// A single angle variable `theta` (domain radial supports).
    Angle,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos] as char).is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        self.skip_ws();
        let bytes = self.src.as_bytes();
        let start = self.pos;
        if start >= bytes.len() {
            return Ok((Tok::End, start));
        }
        let c = bytes[start] as char;
        if c.is_ascii_digit() || c == '.' {
            let mut end = start;
            while end < bytes.len() && ((bytes[end] as char).is_ascii_digit() || bytes[end] == b'.') {
                end += 1;
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut k = end + 1;
                if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                    k += 1;
                }
                if k < bytes.len() && (bytes[k] as char).is_ascii_digit() {
                    while k < bytes.len() && (bytes[k] as char).is_ascii_digit() {
                        k += 1;
                    }
                    end = k;
                }
            }
            let text = &self.src[start..end];
            let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number '{text}'"),
            })?;
            self.pos = end;
            return Ok((Tok::Num(v), start));
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut end = start;
            while end < bytes.len() && ((bytes[end] as char).is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            self.pos = end;
            return Ok((Tok::Ident(self.src[start..end].to_string()), start));
        }
        if "+-*/^(),".contains(c) {
            self.pos += 1;
            return Ok((Tok::Sym(c), start));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ParseError::Syntax {
            offset: start,
            message: format!("unexpected character '{ch}'"),
        })
    }
}

pub(crate) struct Parser<'a> {
    lex: Lexer<'a>,
    tok: Tok,
    at: usize,
    symbols: Symbols,
}

impl<'a> Parser<'a> {
    pub(crate) fn new(src: &'a str, symbols: Symbols) -> Result<Self, ParseError> {
        let mut lex = Lexer { src, pos: 0 };
        let (tok, at) = lex.next()?;
        Ok(Parser { lex, tok, at, symbols })
    }

    fn bump(&mut self) -> Result<(), ParseError> {
        let (tok, at) = self.lex.next()?;
        self.tok = tok;
        self.at = at;
        Ok(())
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { offset: self.at, message: message.into() })
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.tok == Tok::Sym(c) {
            self.bump()
        } else {
            self.err(format!("expected '{c}'"))
        }
    }

    /// Parse a comma-separated list of expressions covering the whole input.
    pub(crate) fn parse_list(mut self) -> Result<Vec<Expr>, ParseError> {
        let mut out = vec![self.expr()?];
        while self.tok == Tok::Sym(',') {
            self.bump()?;
            out.push(self.expr()?);
        }
        if self.tok != Tok::End {
            return self.err("unexpected trailing input");
        }
        Ok(out)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.tok {
            Tok::Sym('-') => {
                self.bump()?;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Sym('+') => {
                self.bump()?;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.tok != Tok::Sym('^') {
            return Ok(base);
        }
        self.bump()?;
        let paren = self.tok == Tok::Sym('(');
        if paren {
            self.bump()?;
        }
        let mut sign = 1.0;
        match self.tok {
            Tok::Sym('-') => {
                sign = -1.0;
                self.bump()?;
            }
            Tok::Sym('+') => self.bump()?,
            _ => {}
        }
        let k = match self.tok {
            Tok::Num(v) if v.fract() == 0.0 && v.abs() <= 64.0 => (sign * v) as i32,
            _ => return self.err("exponent must be an integer constant"),
        };
        self.bump()?;
        if paren {
            self.expect(')')?;
        }
        Ok(Expr::Pow(Box::new(base), k))
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Const(v))
            }
            Tok::Sym('(') => {
                self.bump()?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let at = self.at;
                self.bump()?;
                if self.tok == Tok::Sym('(') {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "sqrt" => Func::Sqrt,
                        "exp" => Func::Exp,
                        "atan2" => Func::Atan2,
                        "abs" => Func::Abs,
                        _ => return Err(ParseError::UnknownSymbol { name, offset: at }),
                    };
                    self.bump()?;
                    let mut args = vec![self.expr()?];
                    while self.tok == Tok::Sym(',') {
                        self.bump()?;
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    if args.len() != func.arity() {
                        return Err(ParseError::Syntax {
                            offset: at,
                            message: format!("{} takes {} argument(s), got {}", func.name(), func.arity(), args.len()),
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                self.resolve(&name, at)
            }
            Tok::End => self.err("unexpected end of input"),
            Tok::Sym(c) => self.err(format!("unexpected '{c}'")),
        }
    }

    fn resolve(&self, name: &str, at: usize) -> Result<Expr, ParseError> {
        match name {
            "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
            "e" => return Ok(Expr::Const(std::f64::consts::E)),
            _ => {}
        }
        let unknown = || Err(ParseError::UnknownSymbol { name: name.to_string(), offset: at });
        match self.symbols {
            Symbols::Angle => {
                if name == "theta" {
                    Ok(Expr::Var(Var::Angle))
                } else {
                    unknown()
                }
            }
            Symbols::Map { n } => {
                let (kind, idx) = match name {
                    "r" if n == 1 => ("r", 1),
                    "theta" if n == 1 => ("theta", 1),
                    _ => {
                        let split = name.find(|c: char| c.is_ascii_digit());
                        let Some(split) = split else { return unknown() };
                        let (head, digits) = name.split_at(split);
                        let Ok(idx) = digits.parse::<usize>() else { return unknown() };
                        if digits.starts_with('0') {
                            return unknown();
                        }
                        (head, idx)
                    }
                };
                if idx == 0 || idx > n {
                    return unknown();
                }
                let i = idx - 1;
                match kind {
                    "x" => Ok(Expr::Var(Var::X(i))),
                    "y" => Ok(Expr::Var(Var::Y(i))),
                    "r" => Ok(Expr::Var(Var::R(i))),
                    "theta" => Ok(Expr::Var(Var::Theta(i))),
                    _ => unknown(),
                }
            }
        }
    }
}
