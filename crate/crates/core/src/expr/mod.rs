//! Arithmetic expressions over named phase-space variables.
//!
//! Expressions are parsed once into an immutable [`Expr`] tree and then
//! compiled against an ordered variable list into a postfix program
//! ([`CompiledExpr`]). The same program evaluates over plain complex numbers
//! or over [`DualValue`]s, which carry exact first-order partials.

mod dual;
mod eval;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;

pub use dual::DualValue;
pub use eval::{eval, eval_grad, Bindings, CompiledExpr, DomainKind, EvalError, Scalar};
pub use parse::{parse, ParseError, ParseErrorKind};

/// Names that can never be bound or declared as constants.
pub const RESERVED_IDENTS: [&str; 2] = ["i", "t"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl UnaryOp {
    pub fn function_name(self) -> Option<&'static str> {
        match self {
            UnaryOp::Neg => None,
            UnaryOp::Sin => Some("sin"),
            UnaryOp::Cos => Some("cos"),
            UnaryOp::Exp => Some("exp"),
            UnaryOp::Log => Some("log"),
            UnaryOp::Sqrt => Some("sqrt"),
        }
    }

    pub fn from_function_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

/// Expression tree. Constants are complex so that the imaginary unit `i`
/// is an ordinary leaf.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(Complex64),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn real(value: f64) -> Self {
        Expr::Const(Complex64::new(value, 0.0))
    }

    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn unary(op: UnaryOp, arg: Expr) -> Self {
        Expr::Unary(op, Box::new(arg))
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Set of variable names referenced anywhere in the tree.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Unary(_, arg) => arg.collect_variables(out),
            Expr::Binary(_, lhs, rhs) => {
                lhs.collect_variables(out);
                rhs.collect_variables(out);
            }
        }
    }

    pub fn references(&self, name: &str) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => v == name,
            Expr::Unary(_, arg) => arg.references(name),
            Expr::Binary(_, lhs, rhs) => lhs.references(name) || rhs.references(name),
        }
    }

    /// Replaces every variable found in `values` by a real constant leaf.
    pub fn substitute(&self, values: &BTreeMap<String, f64>) -> Expr {
        match self {
            Expr::Var(name) => match values.get(name) {
                Some(v) => Expr::real(*v),
                None => self.clone(),
            },
            Expr::Const(_) => self.clone(),
            Expr::Unary(op, arg) => Expr::unary(*op, arg.substitute(values)),
            Expr::Binary(op, lhs, rhs) => {
                Expr::binary(*op, lhs.substitute(values), rhs.substitute(values))
            }
        }
    }

    /// Renames variables according to `renames`; other leaves are untouched.
    pub fn rename(&self, renames: &BTreeMap<&str, &str>) -> Expr {
        match self {
            Expr::Var(name) => match renames.get(name.as_str()) {
                Some(new) => Expr::var(*new),
                None => self.clone(),
            },
            Expr::Const(_) => self.clone(),
            Expr::Unary(op, arg) => Expr::unary(*op, arg.rename(renames)),
            Expr::Binary(op, lhs, rhs) => {
                Expr::binary(*op, lhs.rename(renames), rhs.rename(renames))
            }
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, arg) => 1 + arg.size(),
            Expr::Binary(_, lhs, rhs) => 1 + lhs.size() + rhs.size(),
        }
    }

    /// Subtree at a pre-order index, if any.
    pub fn node(&self, index: usize) -> Option<&Expr> {
        fn walk<'a>(e: &'a Expr, target: usize, next: &mut usize) -> Option<&'a Expr> {
            if *next == target {
                return Some(e);
            }
            *next += 1;
            match e {
                Expr::Const(_) | Expr::Var(_) => None,
                Expr::Unary(_, arg) => walk(arg, target, next),
                Expr::Binary(_, lhs, rhs) => {
                    walk(lhs, target, next).or_else(|| walk(rhs, target, next))
                }
            }
        }
        walk(self, index, &mut 0)
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

fn fmt_real(x: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    // `{:?}` is the shortest representation that round-trips exactly.
    if x.is_sign_negative() {
        write!(f, "(-{:?})", -x)
    } else {
        write!(f, "{x:?}")
    }
}

/// Fully parenthesized form; parsing the output yields the same tree for
/// every tree the parser can produce.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.im == 0.0 {
                    fmt_real(c.re, f)
                } else if c.re == 0.0 && c.im == 1.0 {
                    write!(f, "i")
                } else {
                    write!(f, "(")?;
                    fmt_real(c.re, f)?;
                    write!(f, " + ")?;
                    fmt_real(c.im, f)?;
                    write!(f, " * i)")
                }
            }
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Unary(UnaryOp::Neg, arg) => write!(f, "(-{arg})"),
            Expr::Unary(op, arg) => {
                write!(f, "{}({arg})", op.function_name().unwrap_or_default())
            }
            Expr::Binary(op, lhs, rhs) => write!(f, "({lhs} {} {rhs})", op.symbol()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variables_are_collected_once() {
        let e = parse("q1*p1 + q1^2 - sin(t)").unwrap();
        let vars: Vec<_> = e.variables().into_iter().collect();
        assert_eq!(vars, vec!["p1", "q1", "t"]);
    }

    #[test]
    fn substitution_replaces_constants_only() {
        let e = parse("p1/m").unwrap();
        let consts = BTreeMap::from([("m".to_string(), 2.0)]);
        assert_eq!(
            e.substitute(&consts),
            Expr::binary(BinaryOp::Div, Expr::var("p1"), Expr::real(2.0))
        );
    }

    #[test]
    fn node_indexing_is_preorder() {
        let e = parse("a + sin(b)").unwrap();
        assert_eq!(e.size(), 4);
        assert_eq!(e.node(2), Some(&Expr::unary(UnaryOp::Sin, Expr::var("b"))));
        assert_eq!(e.node(3), Some(&Expr::var("b")));
        assert_eq!(e.node(4), None);
    }

    #[test]
    fn printing_negative_and_complex_constants() {
        assert_eq!(Expr::real(-2.5).to_string(), "(-2.5)");
        assert_eq!(Expr::Const(Complex64::new(0.0, 1.0)).to_string(), "i");
        assert_eq!(parse("1e-300").unwrap().to_string(), "1e-300");
    }
}
