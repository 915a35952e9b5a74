//! Test-side polynomial Hamiltonians with exact partial derivatives.
//!
//! Independent of the crate's expression evaluator: values and partials are
//! computed from monomial exponents directly.

#![allow(dead_code)]

use rand::Rng;

/// `coeff · Π z_k^{powers[k]}` over `z = [q1..qd, p1..pd]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    pub d: usize,
    pub terms: Vec<Monomial>,
}

impl Poly {
    /// Random polynomial with `terms` monomials of total degree `1..=max_degree`.
    pub fn random(d: usize, max_degree: u32, terms: usize, rng: &mut impl Rng) -> Self {
        let terms = (0..terms)
            .map(|_| {
                let degree = rng.gen_range(1..=max_degree);
                let mut powers = vec![0u32; 2 * d];
                for _ in 0..degree {
                    powers[rng.gen_range(0..2 * d)] += 1;
                }
                Monomial {
                    coeff: rng.gen_range(-1.0..=1.0),
                    powers,
                }
            })
            .collect();
        Self { d, terms }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|m| m.coeff * m.powers.iter().zip(z).map(|(k, x)| x.powi(*k as i32)).product::<f64>())
            .sum()
    }

    /// Exact partial derivative with respect to coordinate `k`.
    pub fn derivative(&self, k: usize) -> Poly {
        let terms = self
            .terms
            .iter()
            .filter(|m| m.powers[k] > 0)
            .map(|m| {
                let mut powers = m.powers.clone();
                powers[k] -= 1;
                Monomial {
                    coeff: m.coeff * m.powers[k] as f64,
                    powers,
                }
            })
            .collect();
        Poly { d: self.d, terms }
    }

    pub fn negated(&self) -> Poly {
        Poly {
            d: self.d,
            terms: self
                .terms
                .iter()
                .map(|m| Monomial {
                    coeff: -m.coeff,
                    powers: m.powers.clone(),
                })
                .collect(),
        }
    }

    /// Expression text over `q1..qd, p1..pd`.
    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let name = |k: usize| {
            if k < self.d {
                format!("q{}", k + 1)
            } else {
                format!("p{}", k - self.d + 1)
            }
        };
        self.terms
            .iter()
            .map(|m| {
                let mut factors = vec![format!("({:?})", m.coeff)];
                for (k, &e) in m.powers.iter().enumerate() {
                    match e {
                        0 => {}
                        1 => factors.push(name(k)),
                        _ => factors.push(format!("{}^{e}", name(k))),
                    }
                }
                factors.join("*")
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }

    /// Field-file text of `X = J∇H`: `X_q = ∂H/∂p`, `X_p = -∂H/∂q`.
    pub fn hamiltonian_field_text(&self) -> String {
        let mut text = format!("d = {}\n", self.d);
        for i in 0..self.d {
            text += &format!("Xq{} = {}\n", i + 1, self.derivative(self.d + i).render());
        }
        for i in 0..self.d {
            text += &format!("Xp{} = {}\n", i + 1, self.derivative(i).negated().render());
        }
        text
    }
}
