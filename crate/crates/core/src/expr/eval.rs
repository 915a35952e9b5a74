//! Postfix evaluation over any [`Scalar`] type.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

use super::{BinaryOp, DualValue, Expr, UnaryOp};

/// Variable bindings for one-off evaluation.
pub type Bindings = BTreeMap<String, Complex64>;

/// Why an operation has no value at its argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    DivisionByZero,
    LogOfZero,
    /// Argument lies on the negative real axis of `log` or `sqrt`.
    BranchCut(&'static str),
    /// Negative real base raised to a non-integer exponent.
    NonIntegerPowerOfNegative,
    ZeroToNonPositivePower,
    /// Value is finite but the derivative is not (e.g. `sqrt` at 0).
    SingularDerivative,
    NonFinite,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainKind::DivisionByZero => write!(f, "division by zero"),
            DomainKind::LogOfZero => write!(f, "log of zero"),
            DomainKind::BranchCut(func) => {
                write!(f, "{func} of a negative real argument")
            }
            DomainKind::NonIntegerPowerOfNegative => {
                write!(f, "non-integer power of a negative real base")
            }
            DomainKind::ZeroToNonPositivePower => write!(f, "zero raised to a non-positive power"),
            DomainKind::SingularDerivative => write!(f, "derivative is singular"),
            DomainKind::NonFinite => write!(f, "non-finite result"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("{kind} in `{node}`")]
    Domain { kind: DomainKind, node: String },
    #[error("expected {expected} inputs, got {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("gradient requested with respect to no variables")]
    EmptyGradient,
}

/// Number type the expression interpreter can run on.
pub trait Scalar: Clone {
    /// Constant with the same derivative width as `self` would carry.
    fn lift(value: Complex64, width: usize) -> Self;
    fn width(&self) -> usize;
    fn value(&self) -> Complex64;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn scale(&self, k: Complex64) -> Self;
    fn neg(&self) -> Self;
    fn div(&self, rhs: &Self) -> Result<Self, DomainKind>;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn log(&self) -> Result<Self, DomainKind>;
    fn sqrt(&self) -> Result<Self, DomainKind>;
    fn pow(&self, exponent: &Self) -> Result<Self, DomainKind>;
}

fn on_negative_axis(z: Complex64) -> bool {
    z.im == 0.0 && z.re < 0.0
}

fn is_zero(z: Complex64) -> bool {
    z.re == 0.0 && z.im == 0.0
}

/// Integer value of `z` if it is a real integer of moderate size.
pub(crate) fn as_integer(z: Complex64) -> Option<i32> {
    if z.im == 0.0 && z.re.fract() == 0.0 && z.re.abs() <= (1u32 << 30) as f64 {
        Some(z.re as i32)
    } else {
        None
    }
}

pub(crate) fn complex_div(a: Complex64, b: Complex64) -> Result<Complex64, DomainKind> {
    if is_zero(b) {
        return Err(DomainKind::DivisionByZero);
    }
    if b.im == 0.0 {
        return Ok(Complex64::new(a.re / b.re, a.im / b.re));
    }
    Ok(a / b)
}

pub(crate) fn complex_log(z: Complex64) -> Result<Complex64, DomainKind> {
    if is_zero(z) {
        return Err(DomainKind::LogOfZero);
    }
    if on_negative_axis(z) {
        return Err(DomainKind::BranchCut("log"));
    }
    if z.im == 0.0 {
        return Ok(Complex64::new(z.re.ln(), 0.0));
    }
    Ok(z.ln())
}

pub(crate) fn complex_sqrt(z: Complex64) -> Result<Complex64, DomainKind> {
    if on_negative_axis(z) {
        return Err(DomainKind::BranchCut("sqrt"));
    }
    if z.im == 0.0 {
        return Ok(Complex64::new(z.re.sqrt(), 0.0));
    }
    Ok(z.sqrt())
}

fn integer_power(base: Complex64, n: i32) -> Result<Complex64, DomainKind> {
    if n < 0 && is_zero(base) {
        return Err(DomainKind::DivisionByZero);
    }
    if base.im == 0.0 {
        return Ok(Complex64::new(base.re.powi(n), 0.0));
    }
    let positive = {
        let mut acc = Complex64::new(1.0, 0.0);
        let mut b = base;
        let mut e = n.unsigned_abs();
        while e > 0 {
            if e & 1 == 1 {
                acc *= b;
            }
            b *= b;
            e >>= 1;
        }
        acc
    };
    if n < 0 {
        complex_div(Complex64::new(1.0, 0.0), positive)
    } else {
        Ok(positive)
    }
}

pub(crate) fn complex_pow(base: Complex64, exponent: Complex64) -> Result<Complex64, DomainKind> {
    if let Some(n) = as_integer(exponent) {
        return integer_power(base, n);
    }
    if is_zero(base) {
        return if exponent.re > 0.0 {
            Ok(Complex64::new(0.0, 0.0))
        } else {
            Err(DomainKind::ZeroToNonPositivePower)
        };
    }
    if on_negative_axis(base) {
        return Err(DomainKind::NonIntegerPowerOfNegative);
    }
    if base.im == 0.0 && exponent.im == 0.0 {
        return Ok(Complex64::new(base.re.powf(exponent.re), 0.0));
    }
    Ok((exponent * complex_log(base)?).exp())
}

impl Scalar for Complex64 {
    fn lift(value: Complex64, _width: usize) -> Self {
        value
    }
    fn width(&self) -> usize {
        0
    }
    fn value(&self) -> Complex64 {
        *self
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn scale(&self, k: Complex64) -> Self {
        self * k
    }
    fn neg(&self) -> Self {
        -self
    }
    fn div(&self, rhs: &Self) -> Result<Self, DomainKind> {
        complex_div(*self, *rhs)
    }
    fn sin(&self) -> Self {
        Complex64::sin(*self)
    }
    fn cos(&self) -> Self {
        Complex64::cos(*self)
    }
    fn exp(&self) -> Self {
        Complex64::exp(*self)
    }
    fn log(&self) -> Result<Self, DomainKind> {
        complex_log(*self)
    }
    fn sqrt(&self) -> Result<Self, DomainKind> {
        complex_sqrt(*self)
    }
    fn pow(&self, exponent: &Self) -> Result<Self, DomainKind> {
        complex_pow(*self, *exponent)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Const(Complex64),
    Slot(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

/// An expression resolved against an ordered list of input slots.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    expr: Expr,
    slots: Vec<String>,
    /// Each op carries the pre-order index of its node for error reports.
    ops: Vec<(Op, usize)>,
    max_depth: usize,
}

impl CompiledExpr {
    /// Resolves every variable in `expr` to its position in `slots`.
    pub fn new(expr: &Expr, slots: &[&str]) -> Result<Self, EvalError> {
        fn emit(
            e: &Expr,
            slots: &[&str],
            ops: &mut Vec<(Op, usize)>,
            next: &mut usize,
        ) -> Result<(), EvalError> {
            let id = *next;
            *next += 1;
            match e {
                Expr::Const(c) => ops.push((Op::Const(*c), id)),
                Expr::Var(name) => {
                    let slot = slots
                        .iter()
                        .position(|s| s == name)
                        .ok_or_else(|| EvalError::UnboundVariable(name.clone()))?;
                    ops.push((Op::Slot(slot), id));
                }
                Expr::Unary(op, arg) => {
                    emit(arg, slots, ops, next)?;
                    ops.push((Op::Unary(*op), id));
                }
                Expr::Binary(op, lhs, rhs) => {
                    emit(lhs, slots, ops, next)?;
                    emit(rhs, slots, ops, next)?;
                    ops.push((Op::Binary(*op), id));
                }
            }
            Ok(())
        }

        let mut ops = Vec::with_capacity(expr.size());
        emit(expr, slots, &mut ops, &mut 0)?;
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for (op, _) in &ops {
            match op {
                Op::Const(_) | Op::Slot(_) => depth += 1,
                Op::Unary(_) => {}
                Op::Binary(_) => depth -= 1,
            }
            max_depth = max_depth.max(depth);
        }
        Ok(Self {
            expr: expr.clone(),
            slots: slots.iter().map(|s| s.to_string()).collect(),
            ops,
            max_depth,
        })
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    /// True when the program never reads input slot `slot`.
    pub fn ignores_slot(&self, slot: usize) -> bool {
        !self.ops.iter().any(|(op, _)| *op == Op::Slot(slot))
    }

    fn domain_error(&self, kind: DomainKind, node: usize) -> EvalError {
        EvalError::Domain {
            kind,
            node: self
                .expr
                .node(node)
                .map(ToString::to_string)
                .unwrap_or_default(),
        }
    }

    /// Runs the program on `inputs`, one per slot.
    pub fn eval_scalar<S: Scalar>(&self, inputs: &[S]) -> Result<S, EvalError> {
        if inputs.len() != self.slots.len() {
            return Err(EvalError::ArityMismatch {
                expected: self.slots.len(),
                found: inputs.len(),
            });
        }
        let width = inputs.first().map_or(0, S::width);
        let mut stack: Vec<S> = Vec::with_capacity(self.max_depth);
        for (op, node) in &self.ops {
            let node = *node;
            match op {
                Op::Const(c) => stack.push(S::lift(*c, width)),
                Op::Slot(i) => stack.push(inputs[*i].clone()),
                Op::Unary(u) => {
                    let a = stack.pop().expect("stack underflow");
                    let r = match u {
                        UnaryOp::Neg => Ok(a.neg()),
                        UnaryOp::Sin => Ok(a.sin()),
                        UnaryOp::Cos => Ok(a.cos()),
                        UnaryOp::Exp => Ok(a.exp()),
                        UnaryOp::Log => a.log(),
                        UnaryOp::Sqrt => a.sqrt(),
                    };
                    stack.push(r.map_err(|k| self.domain_error(k, node))?);
                }
                Op::Binary(b) => {
                    let rhs = stack.pop().expect("stack underflow");
                    let lhs = stack.pop().expect("stack underflow");
                    let r = match b {
                        BinaryOp::Add => Ok(lhs.add(&rhs)),
                        BinaryOp::Sub => Ok(lhs.sub(&rhs)),
                        BinaryOp::Mul => Ok(lhs.mul(&rhs)),
                        BinaryOp::Div => lhs.div(&rhs),
                        BinaryOp::Pow => lhs.pow(&rhs),
                    };
                    stack.push(r.map_err(|k| self.domain_error(k, node))?);
                }
            }
        }
        let out = stack.pop().expect("empty program");
        let v = out.value();
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(self.domain_error(DomainKind::NonFinite, 0));
        }
        Ok(out)
    }

    pub fn eval(&self, inputs: &[Complex64]) -> Result<Complex64, EvalError> {
        self.eval_scalar(inputs)
    }

    /// Value and exact partials with respect to every slot.
    pub fn gradient(&self, inputs: &[Complex64]) -> Result<(Complex64, Vec<Complex64>), EvalError> {
        let n = inputs.len();
        let seeded: Vec<DualValue> = inputs
            .iter()
            .enumerate()
            .map(|(i, &v)| DualValue::variable(v, i, n))
            .collect();
        let out = self.eval_scalar(&seeded)?;
        if out.partials.iter().any(|d| !(d.re.is_finite() && d.im.is_finite())) {
            return Err(self.domain_error(DomainKind::SingularDerivative, 0));
        }
        Ok((out.value, out.partials))
    }
}

fn bound_inputs(vars: &[&str], bindings: &Bindings) -> Result<Vec<Complex64>, EvalError> {
    vars.iter()
        .map(|v| {
            bindings
                .get(*v)
                .copied()
                .ok_or_else(|| EvalError::UnboundVariable(v.to_string()))
        })
        .collect()
}

/// Evaluates `e` with every variable taken from `bindings`.
pub fn eval(e: &Expr, bindings: &Bindings) -> Result<Complex64, EvalError> {
    let names = e.variables();
    let vars: Vec<&str> = names.iter().map(String::as_str).collect();
    let inputs = bound_inputs(&vars, bindings)?;
    CompiledExpr::new(e, &vars)?.eval(&inputs)
}

/// Value of `e` and its exact partial derivatives with respect to `wrt`.
pub fn eval_grad(
    e: &Expr,
    bindings: &Bindings,
    wrt: &[&str],
) -> Result<(Complex64, Vec<Complex64>), EvalError> {
    if wrt.is_empty() {
        return Err(EvalError::EmptyGradient);
    }
    let names = e.variables();
    let mut vars: Vec<&str> = wrt.to_vec();
    for name in &names {
        if !vars.contains(&name.as_str()) {
            vars.push(name);
        }
    }
    let inputs = bound_inputs(&vars, bindings)?;
    let width = wrt.len();
    let seeded: Vec<DualValue> = inputs
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i < width {
                DualValue::variable(v, i, width)
            } else {
                DualValue::constant(v, width)
            }
        })
        .collect();
    let program = CompiledExpr::new(e, &vars)?;
    let out = program.eval_scalar(&seeded)?;
    if out.partials.iter().any(|d| !(d.re.is_finite() && d.im.is_finite())) {
        return Err(program.domain_error(DomainKind::SingularDerivative, 0));
    }
    Ok((out.value, out.partials))
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn bind(pairs: &[(&str, f64)]) -> Bindings {
        pairs.iter().map(|(k, v)| (k.to_string(), c(*v))).collect()
    }

    #[test]
    fn product_of_bound_variables() {
        let e = parse("q1*p1").unwrap();
        assert_eq!(eval(&e, &bind(&[("q1", 2.0), ("p1", 3.0)])).unwrap(), c(6.0));
    }

    #[test]
    fn exp_of_zero_is_one() {
        assert_eq!(eval(&parse("exp(0)").unwrap(), &Bindings::new()).unwrap(), c(1.0));
    }

    #[test]
    fn division_by_zero_names_the_node() {
        let err = eval(&parse("1/q1").unwrap(), &bind(&[("q1", 0.0)])).unwrap_err();
        assert_eq!(
            err,
            EvalError::Domain {
                kind: DomainKind::DivisionByZero,
                node: "(1.0 / q1)".into()
            }
        );
    }

    #[test]
    fn missing_binding_is_an_error() {
        let err = eval(&parse("q1 + q2").unwrap(), &bind(&[("q1", 1.0)])).unwrap_err();
        assert_eq!(err, EvalError::UnboundVariable("q2".into()));
    }

    #[test]
    fn branch_cuts_fail_loudly() {
        let b = bind(&[("x", -2.0)]);
        for (src, kind) in [
            ("log(x)", DomainKind::BranchCut("log")),
            ("sqrt(x)", DomainKind::BranchCut("sqrt")),
            ("x^0.5", DomainKind::NonIntegerPowerOfNegative),
            ("log(x + 2)", DomainKind::LogOfZero),
            ("(x + 2)^(-1)", DomainKind::DivisionByZero),
            ("(x+2)^(-0.5)", DomainKind::ZeroToNonPositivePower),
        ] {
            match eval(&parse(src).unwrap(), &b) {
                Err(EvalError::Domain { kind: k, .. }) => assert_eq!(k, kind, "{src}"),
                other => panic!("{src}: {other:?}"),
            }
        }
        // Integer powers of negative bases are fine.
        assert_eq!(eval(&parse("x^3").unwrap(), &b).unwrap(), c(-8.0));
        assert_eq!(eval(&parse("x^-1").unwrap(), &b).unwrap(), c(-0.5));
    }

    #[test]
    fn complex_arguments_use_principal_branch() {
        let mut b = Bindings::new();
        b.insert("p1".into(), Complex64::new(-1.0, 1e-300));
        let v = eval(&parse("sqrt(p1)").unwrap(), &b).unwrap();
        assert!((v - Complex64::new(0.0, 1.0)).norm() < 1e-12);
        let v = eval(&parse("i*i").unwrap(), &Bindings::new()).unwrap();
        assert_eq!(v, c(-1.0));
    }

    #[test]
    fn overflow_is_reported() {
        let err = eval(&parse("exp(1000)").unwrap(), &Bindings::new()).unwrap_err();
        assert!(matches!(err, EvalError::Domain { kind: DomainKind::NonFinite, .. }));
    }

    #[test]
    fn gradients_of_simple_expressions() {
        let (v, g) = eval_grad(
            &parse("q1*p1").unwrap(),
            &bind(&[("q1", 2.0), ("p1", 3.0)]),
            &["q1", "p1"],
        )
        .unwrap();
        assert_eq!(v, c(6.0));
        assert_eq!(g, vec![c(3.0), c(2.0)]);

        let (v, g) = eval_grad(&parse("sin(q1)").unwrap(), &bind(&[("q1", 0.0)]), &["q1"]).unwrap();
        assert_eq!(v, c(0.0));
        assert_eq!(g, vec![c(1.0)]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let e = parse("q1^2 + p1^2").unwrap();
        let b = bind(&[("q1", 1.0), ("p1", 2.0)]);
        let (v, g) = eval_grad(&e, &b, &["q1", "p1"]).unwrap();
        assert_eq!(v, c(5.0));
        assert_eq!(g, vec![c(2.0), c(4.0)]);
        let h = 1e-6;
        for (k, name) in ["q1", "p1"].iter().enumerate() {
            let mut plus = b.clone();
            let mut minus = b.clone();
            *plus.get_mut(*name).unwrap() += h;
            *minus.get_mut(*name).unwrap() -= h;
            let fd = (eval(&e, &plus).unwrap() - eval(&e, &minus).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).norm() < 1e-9, "{name}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn gradient_of_sqrt_at_zero_is_singular() {
        let err = eval_grad(&parse("sqrt(x)").unwrap(), &bind(&[("x", 0.0)]), &["x"]).unwrap_err();
        assert!(matches!(
            err,
            EvalError::Domain { kind: DomainKind::SingularDerivative, .. }
        ));
        // Value alone is fine.
        assert_eq!(eval(&parse("sqrt(x)").unwrap(), &bind(&[("x", 0.0)])).unwrap(), c(0.0));
    }

    #[test]
    fn unlisted_variables_are_held_constant() {
        let (_, g) = eval_grad(
            &parse("m*q1").unwrap(),
            &bind(&[("m", 4.0), ("q1", 1.0)]),
            &["q1"],
        )
        .unwrap();
        assert_eq!(g, vec![c(4.0)]);
        assert_eq!(
            eval_grad(&parse("q1").unwrap(), &Bindings::new(), &[]).unwrap_err(),
            EvalError::EmptyGradient
        );
    }

    #[test]
    fn compiled_arity_is_checked() {
        let p = CompiledExpr::new(&parse("a+b").unwrap(), &["a", "b"]).unwrap();
        assert!(matches!(
            p.eval(&[c(1.0)]),
            Err(EvalError::ArityMismatch { expected: 2, found: 1 })
        ));
        assert!(p.ignores_slot(5));
        assert!(!p.ignores_slot(1));
    }
}
