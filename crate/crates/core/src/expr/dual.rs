//! First-order truncated Taylor arithmetic.

use num_complex::Complex64;

use super::eval::{as_integer, complex_div, complex_log, complex_pow, complex_sqrt, DomainKind, Scalar};

/// A value together with its partial derivatives with respect to a fixed
/// set of seeded variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DualValue {
    pub value: Complex64,
    pub partials: Vec<Complex64>,
}

impl DualValue {
    pub fn constant(value: Complex64, width: usize) -> Self {
        Self {
            value,
            partials: vec![Complex64::new(0.0, 0.0); width],
        }
    }

    /// The `index`-th of `width` independent variables.
    pub fn variable(value: Complex64, index: usize, width: usize) -> Self {
        let mut d = Self::constant(value, width);
        d.partials[index] = Complex64::new(1.0, 0.0);
        d
    }

    fn is_constant(&self) -> bool {
        self.partials.iter().all(|d| d.re == 0.0 && d.im == 0.0)
    }

    /// `f(self)` given `f(value)` and `f'(value)`.
    fn chain(&self, value: Complex64, derivative: Complex64) -> Self {
        Self {
            value,
            partials: self.partials.iter().map(|d| d * derivative).collect(),
        }
    }

    fn combine(&self, rhs: &Self, value: Complex64, da: Complex64, db: Complex64) -> Self {
        Self {
            value,
            partials: self
                .partials
                .iter()
                .zip(&rhs.partials)
                .map(|(a, b)| a * da + b * db)
                .collect(),
        }
    }
}

impl Scalar for DualValue {
    fn lift(value: Complex64, width: usize) -> Self {
        Self::constant(value, width)
    }

    fn width(&self) -> usize {
        self.partials.len()
    }

    fn value(&self) -> Complex64 {
        self.value
    }

    fn add(&self, rhs: &Self) -> Self {
        Self {
            value: self.value + rhs.value,
            partials: self.partials.iter().zip(&rhs.partials).map(|(a, b)| a + b).collect(),
        }
    }

    fn sub(&self, rhs: &Self) -> Self {
        Self {
            value: self.value - rhs.value,
            partials: self.partials.iter().zip(&rhs.partials).map(|(a, b)| a - b).collect(),
        }
    }

    fn mul(&self, rhs: &Self) -> Self {
        self.combine(rhs, self.value * rhs.value, rhs.value, self.value)
    }

    fn scale(&self, k: Complex64) -> Self {
        self.chain(self.value * k, k)
    }

    fn neg(&self) -> Self {
        Self {
            value: -self.value,
            partials: self.partials.iter().map(|d| -d).collect(),
        }
    }

    fn div(&self, rhs: &Self) -> Result<Self, DomainKind> {
        let q = complex_div(self.value, rhs.value)?;
        let inv = complex_div(Complex64::new(1.0, 0.0), rhs.value)?;
        // (a/b)' = a'/b - (a/b) b'/b
        Ok(self.combine(rhs, q, inv, -q * inv))
    }

    fn sin(&self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }

    fn cos(&self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }

    fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }

    fn log(&self) -> Result<Self, DomainKind> {
        let v = complex_log(self.value)?;
        let d = complex_div(Complex64::new(1.0, 0.0), self.value)?;
        Ok(self.chain(v, d))
    }

    fn sqrt(&self) -> Result<Self, DomainKind> {
        let s = complex_sqrt(self.value)?;
        if s.re == 0.0 && s.im == 0.0 {
            if self.is_constant() {
                return Ok(Self::constant(s, self.width()));
            }
            return Err(DomainKind::SingularDerivative);
        }
        Ok(self.chain(s, 0.5 / s))
    }

    fn pow(&self, exponent: &Self) -> Result<Self, DomainKind> {
        let value = complex_pow(self.value, exponent.value)?;
        let base_slope = if self.is_constant() {
            Complex64::new(0.0, 0.0)
        } else if let Some(n) = as_integer(exponent.value) {
            if n == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                complex_pow(self.value, Complex64::new((n - 1) as f64, 0.0))? * n as f64
            }
        } else if self.value.re == 0.0 && self.value.im == 0.0 {
            if exponent.value.re > 1.0 {
                Complex64::new(0.0, 0.0)
            } else {
                return Err(DomainKind::SingularDerivative);
            }
        } else {
            exponent.value * complex_div(value, self.value)?
        };
        let exponent_slope = if exponent.is_constant() {
            Complex64::new(0.0, 0.0)
        } else {
            value * complex_log(self.value)?
        };
        Ok(self.combine(exponent, value, base_slope, exponent_slope))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn product_rule_holds_exactly() {
        let f = DualValue {
            value: c(1.5, -0.25),
            partials: vec![c(2.0, 0.5), c(-1.0, 0.0)],
        };
        let g = DualValue {
            value: c(-0.75, 2.0),
            partials: vec![c(0.125, 1.0), c(3.0, -2.0)],
        };
        let fg = f.mul(&g);
        for k in 0..2 {
            assert_eq!(fg.partials[k], f.partials[k] * g.value + f.value * g.partials[k]);
        }
    }

    #[test]
    fn quotient_and_power_rules() {
        let x = DualValue::variable(c(2.0, 0.0), 0, 1);
        let inv = DualValue::constant(c(1.0, 0.0), 1).div(&x).unwrap();
        assert_eq!(inv.partials[0], c(-0.25, 0.0));
        let cube = x.pow(&DualValue::constant(c(3.0, 0.0), 1)).unwrap();
        assert_eq!(cube.value, c(8.0, 0.0));
        assert_eq!(cube.partials[0], c(12.0, 0.0));
        // d/dx 2^x = 2^x ln 2
        let two = DualValue::constant(c(2.0, 0.0), 1);
        let e = two.pow(&x).unwrap();
        assert!((e.partials[0] - c(4.0 * 2f64.ln(), 0.0)).norm() < 1e-15);
        // d/dx x^x = x^x (ln x + 1)
        let xx = x.pow(&x).unwrap();
        assert!((xx.partials[0] - c(4.0 * (2f64.ln() + 1.0), 0.0)).norm() < 1e-14);
    }

    #[test]
    fn fractional_power_of_zero() {
        let x = DualValue::variable(c(0.0, 0.0), 0, 1);
        let half = DualValue::constant(c(0.5, 0.0), 1);
        assert_eq!(x.pow(&half).unwrap_err(), DomainKind::SingularDerivative);
        let three_halves = DualValue::constant(c(1.5, 0.0), 1);
        assert_eq!(x.pow(&three_halves).unwrap().partials[0], c(0.0, 0.0));
    }
}
