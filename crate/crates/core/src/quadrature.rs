//! Gauss–Legendre and trapezoid quadrature.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Rule with `n` nodes, exact for polynomials of degree `2n - 1`.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("Gauss-Legendre rule needs at least one node"));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi's initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    /// Shared 16-node rule.
    pub fn sixteen() -> &'static Self {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| Self::new(16).expect("16 nodes"))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(node, weight)` pairs mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    /// Integral of `f` over `[a, b]`; the first error aborts.
    pub fn integrate<E>(
        &self,
        a: f64,
        b: f64,
        mut f: impl FnMut(f64) -> std::result::Result<Complex64, E>,
    ) -> std::result::Result<Complex64, E> {
        let mut sum = Complex64::new(0.0, 0.0);
        for (x, w) in self.mapped(a, b) {
            sum += f(x)? * w;
        }
        Ok(sum)
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite trapezoid rule for samples spaced `h` apart.
pub fn trapezoid(values: &[Complex64], h: f64) -> Complex64 {
    match values.len() {
        0 | 1 => Complex64::new(0.0, 0.0),
        n => {
            let inner: Complex64 = values[1..n - 1].iter().sum();
            (inner + 0.5 * (values[0] + values[n - 1])) * h
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two_and_nodes_are_symmetric() {
        for n in [1, 2, 3, 8, 16, 64, 1024] {
            let rule = GaussLegendre::new(n).unwrap();
            let total: f64 = rule.weights().iter().sum();
            assert!((total - 2.0).abs() < 1e-13, "n={n}: {total}");
            for i in 0..n {
                assert_eq!(rule.nodes()[i], -rule.nodes()[n - 1 - i]);
            }
        }
    }

    #[test]
    fn two_point_rule_is_classical() {
        let rule = GaussLegendre::new(2).unwrap();
        assert!((rule.nodes()[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((rule.weights()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let rule = GaussLegendre::new(8).unwrap();
        for deg in 0..16 {
            let got = rule
                .integrate::<()>(0.0, 1.0, |x| Ok(Complex64::new(x.powi(deg), 0.0)))
                .unwrap();
            let exact = 1.0 / (deg as f64 + 1.0);
            assert!((got.re - exact).abs() < 1e-15, "degree {deg}");
        }
    }

    #[test]
    fn smooth_integrand() {
        let rule = GaussLegendre::sixteen();
        let got = rule
            .integrate::<()>(0.0, std::f64::consts::PI, |x| Ok(Complex64::new(x.sin(), 0.0)))
            .unwrap();
        assert!((got.re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_is_exact_for_linear_samples() {
        let v: Vec<Complex64> = (0..11).map(|k| Complex64::new(k as f64 * 0.1, 1.0)).collect();
        let got = trapezoid(&v, 0.1);
        assert!((got - Complex64::new(0.5, 1.0)).norm() < 1e-15);
        assert_eq!(trapezoid(&v[..1], 0.1), Complex64::new(0.0, 0.0));
    }
}
