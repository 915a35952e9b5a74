//! Scale-derivative calculus on Hölder paths and the Hamiltonian inverse
//! problem for (possibly nondifferentiable) first-order systems.
//!
//! The crate is organized bottom-up:
//!
//! * [`expr`]: parsing and exact first-order differentiation of expressions.
//! * [`signals`]: uniform sampling, Weierstrass test signals, Hölder exponents.
//! * [`qderiv`]: sided and scale derivatives, the ε-mean, numerical
//!   extraction of ε → 0 limits, Leibniz and fundamental-theorem checks.
//! * [`field`]: phase-space vector fields, their Fréchet derivative operator
//!   and its symplectic adjoint.
//! * [`helmholtz`]: Hamiltonicity conditions, Hamiltonian reconstruction,
//!   gradient verification and the Legendre transform.
//! * [`dynamics`]: symplectic integration and residuals of the embedded
//!   Hamiltonian and Euler–Lagrange equations.

pub mod dynamics;
pub mod error;
pub mod expr;
pub mod field;
pub mod helmholtz;
pub mod io;
pub mod phase;
pub mod qderiv;
pub mod quadrature;
pub mod signals;

pub use error::{Error, Result};
pub use expr::{parse, DualValue, Expr};
pub use field::{DirectionPair, JacobianBlocks, PhaseVectorField};
pub use helmholtz::{HamiltonianFn, HelmholtzReport, QuadratureNodes, ReconstructedHamiltonian};
pub use phase::{PhasePoint, Trajectory};
pub use qderiv::{EpsilonFamily, EpsilonSweep, ExtractionResult, Mu, ScaleParams, Side};
pub use signals::{HolderParams, SampledPath, UniformGrid};

pub use num_complex::Complex64;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeExamples;
