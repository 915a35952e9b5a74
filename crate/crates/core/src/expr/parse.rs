//! Recursive-descent parser.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-q1^2`
//! is `-(q1^2)` and `2^-1` is accepted.

use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

use super::{BinaryOp, Expr, UnaryOp};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// A token other than one of `expected` was found.
    Unexpected {
        found: String,
        expected: Vec<&'static str>,
    },
    UnknownFunction(String),
    InvalidNumber(String),
    InvalidCharacter(char),
}

/// Syntax error. `offset` is the 1-based byte column of the offending
/// token; end of input reports `len + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::Unexpected { found, expected } => write!(
                f,
                "syntax error at offset {}: found {found}, expected {}",
                self.offset,
                expected.join(" or ")
            ),
            ParseErrorKind::UnknownFunction(name) => {
                write!(f, "unknown function `{name}` at offset {}", self.offset)
            }
            ParseErrorKind::InvalidNumber(text) => {
                write!(f, "invalid number `{text}` at offset {}", self.offset)
            }
            ParseErrorKind::InvalidCharacter(c) => {
                write!(f, "invalid character {c:?} at offset {}", self.offset)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
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

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Number(x) => format!("number {x:?}"),
            Token::Ident(s) => format!("identifier `{s}`"),
            Token::Plus => "`+`".into(),
            Token::Minus => "`-`".into(),
            Token::Star => "`*`".into(),
            Token::Slash => "`/`".into(),
            Token::Caret => "`^`".into(),
            Token::LParen => "`(`".into(),
            Token::RParen => "`)`".into(),
            Token::End => "end of input".into(),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'+' => Some(Token::Plus),
            b'-' => Some(Token::Minus),
            b'*' => Some(Token::Star),
            b'/' => Some(Token::Slash),
            b'^' => Some(Token::Caret),
            b'(' => Some(Token::LParen),
            b')' => Some(Token::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            out.push((tok, start));
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ParseError {
                offset: start + 1,
                kind: ParseErrorKind::InvalidNumber(text.to_string()),
            })?;
            if !value.is_finite() {
                return Err(ParseError {
                    offset: start + 1,
                    kind: ParseErrorKind::InvalidNumber(text.to_string()),
                });
            }
            out.push((Token::Number(value), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Token::Ident(src[start..i].to_string()), start));
            continue;
        }
        let ch = src[start..].chars().next().unwrap_or('\u{fffd}');
        return Err(ParseError {
            offset: start + 1,
            kind: ParseErrorKind::InvalidCharacter(ch),
        });
    }
    out.push((Token::End, src.len()));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos].0
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].1 + 1
    }

    fn bump(&mut self) -> Token {
        let tok = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn unexpected(&self, expected: Vec<&'static str>) -> ParseError {
        ParseError {
            offset: self.offset(),
            kind: ParseErrorKind::Unexpected {
                found: self.peek().describe(),
                expected,
            },
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Token::Plus => BinaryOp::Add,
                Token::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Token::Star => BinaryOp::Mul,
                Token::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Token::Minus {
            self.bump();
            return Ok(Expr::unary(UnaryOp::Neg, self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Token::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.peek().clone() {
            Token::Number(x) => {
                self.bump();
                Ok(Expr::real(x))
            }
            Token::Ident(name) => {
                self.bump();
                if *self.peek() == Token::LParen {
                    let op = UnaryOp::from_function_name(&name).ok_or(ParseError {
                        offset,
                        kind: ParseErrorKind::UnknownFunction(name.clone()),
                    })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::unary(op, arg))
                } else if name == "i" {
                    Ok(Expr::Const(Complex64::new(0.0, 1.0)))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Token::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            _ => Err(self.unexpected(vec!["number", "identifier", "`(`", "`-`"])),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Token::RParen {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(vec!["`)`"]))
        }
    }
}

/// Parses `source` into an expression tree.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let mut parser = Parser {
        tokens: tokenize(source)?,
        pos: 0,
    };
    let e = parser.expr()?;
    if *parser.peek() != Token::End {
        return Err(parser.unexpected(vec!["operator", "end of input"]));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(s: &str) -> Expr {
        Expr::var(s)
    }

    #[test]
    fn division_of_variables() {
        assert_eq!(
            parse("p1/m").unwrap(),
            Expr::binary(BinaryOp::Div, var("p1"), var("m"))
        );
    }

    #[test]
    fn power_binds_tighter_than_negation() {
        assert_eq!(
            parse("-q1^2").unwrap(),
            Expr::unary(
                UnaryOp::Neg,
                Expr::binary(BinaryOp::Pow, var("q1"), Expr::real(2.0))
            )
        );
    }

    #[test]
    fn power_is_right_associative() {
        assert_eq!(
            parse("a^b^c").unwrap(),
            Expr::binary(
                BinaryOp::Pow,
                var("a"),
                Expr::binary(BinaryOp::Pow, var("b"), var("c"))
            )
        );
        assert_eq!(
            parse("2^-1").unwrap(),
            Expr::binary(
                BinaryOp::Pow,
                Expr::real(2.0),
                Expr::unary(UnaryOp::Neg, Expr::real(1.0))
            )
        );
    }

    #[test]
    fn left_associative_sums_and_products() {
        assert_eq!(
            parse("a - b - c").unwrap(),
            Expr::binary(
                BinaryOp::Sub,
                Expr::binary(BinaryOp::Sub, var("a"), var("b")),
                var("c")
            )
        );
        assert_eq!(
            parse("a / b * c").unwrap(),
            Expr::binary(
                BinaryOp::Mul,
                Expr::binary(BinaryOp::Div, var("a"), var("b")),
                var("c")
            )
        );
    }

    #[test]
    fn unbalanced_parenthesis_reports_offset_and_expectation() {
        let err = parse("sin(q1").unwrap_err();
        assert_eq!(err.offset, 7);
        match err.kind {
            ParseErrorKind::Unexpected { expected, .. } => assert_eq!(expected, vec!["`)`"]),
            other => panic!("unexpected error kind {other:?}"),
        }
    }

    #[test]
    fn unknown_function_is_rejected() {
        let err = parse("1 + tan(q1)").unwrap_err();
        assert_eq!(err.offset, 5);
        assert_eq!(err.kind, ParseErrorKind::UnknownFunction("tan".into()));
    }

    #[test]
    fn numbers_with_exponents() {
        assert_eq!(parse("1.5e-3").unwrap(), Expr::real(1.5e-3));
        assert_eq!(parse("2E+2").unwrap(), Expr::real(200.0));
        assert_eq!(parse(".5").unwrap(), Expr::real(0.5));
        assert!(matches!(
            parse("1e999").unwrap_err().kind,
            ParseErrorKind::InvalidNumber(_)
        ));
        assert!(matches!(
            parse("1.2.3").unwrap_err().kind,
            ParseErrorKind::InvalidNumber(_)
        ));
    }

    #[test]
    fn imaginary_unit_is_a_constant() {
        assert_eq!(parse("i").unwrap(), Expr::Const(Complex64::new(0.0, 1.0)));
        assert_eq!(parse("t").unwrap(), var("t"));
    }

    #[test]
    fn trailing_garbage_and_bad_characters() {
        assert_eq!(parse("q1 q2").unwrap_err().offset, 4);
        assert_eq!(
            parse("q1 $ 2").unwrap_err().kind,
            ParseErrorKind::InvalidCharacter('$')
        );
        assert!(parse("").is_err());
        assert!(parse("()").is_err());
    }
}
