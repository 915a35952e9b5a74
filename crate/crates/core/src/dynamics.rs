//! Classical trajectories of Hamiltonian fields, and residuals of the
//! embedded Hamiltonian and Euler–Lagrange equations along sampled paths.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{DualValue, EvalError, Scalar};
use crate::field::PhaseVectorField;
use crate::helmholtz::{check_default, HamiltonianFn, Lagrangian};
use crate::phase::{PhasePoint, Trajectory};
use crate::qderiv::{
    extract, extracted_scale_derivative, scale_derivative, EpsilonFamily, EpsilonSweep, EpsilonValue,
    ExtractionResult, Mu, ScaleParams,
};
use crate::quadrature::trapezoid;
use crate::signals::{SampledPath, UniformGrid};

/// Fixed-point tolerance of the implicit midpoint rule, relative to
/// `max(1, |z|)`.
pub const MIDPOINT_TOL: f64 = 1e-13;
pub const MIDPOINT_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Kick–drift–kick Störmer–Verlet; requires a separable field.
    Leapfrog,
    ImplicitMidpoint,
}

/// One-step map of a symplectic scheme for a fixed field.
#[derive(Debug, Clone, Copy)]
pub struct SymplecticStepper<'a> {
    field: &'a PhaseVectorField,
    scheme: Scheme,
}

fn lift_eval(e: EvalError, t: f64) -> Error {
    Error::AtPoint {
        point: format!("t = {t}"),
        source: e,
    }
}

impl<'a> SymplecticStepper<'a> {
    /// Leapfrog for separable fields, implicit midpoint otherwise.
    pub fn new(field: &'a PhaseVectorField) -> Self {
        let scheme = if field.is_separable() {
            Scheme::Leapfrog
        } else {
            Scheme::ImplicitMidpoint
        };
        Self { field, scheme }
    }

    pub fn with_scheme(field: &'a PhaseVectorField, scheme: Scheme) -> Result<Self> {
        if scheme == Scheme::Leapfrog && !field.is_separable() {
            return Err(Error::invalid("leapfrog needs X_q to depend on p only and X_p on q only"));
        }
        Ok(Self { field, scheme })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Advances `[q.., p..]` by `dt`; a negative `dt` steps backward.
    pub fn step<S: Scalar>(&self, z: &[S], dt: f64) -> Result<Vec<S>> {
        let d = self.field.dim();
        if z.len() != 2 * d {
            return Err(Error::invalid(format!("state of length {} for a field of dimension {d}", z.len())));
        }
        let axpy = |x: &S, k: f64, y: &S| x.add(&y.scale(Complex64::new(k, 0.0)));
        match self.scheme {
            Scheme::Leapfrog => {
                let mut s = z.to_vec();
                let x = self.field.eval_flat(&s).map_err(|e| lift_eval(e, 0.0))?;
                for i in 0..d {
                    s[d + i] = axpy(&s[d + i], 0.5 * dt, &x[d + i]);
                }
                let x = self.field.eval_flat(&s).map_err(|e| lift_eval(e, 0.0))?;
                for i in 0..d {
                    s[i] = axpy(&s[i], dt, &x[i]);
                }
                let x = self.field.eval_flat(&s).map_err(|e| lift_eval(e, 0.0))?;
                for i in 0..d {
                    s[d + i] = axpy(&s[d + i], 0.5 * dt, &x[d + i]);
                }
                Ok(s)
            }
            Scheme::ImplicitMidpoint => {
                let scale = z.iter().map(|s| s.value().norm()).fold(1.0, f64::max);
                let x0 = self.field.eval_flat(z).map_err(|e| lift_eval(e, 0.0))?;
                let mut next: Vec<S> = z.iter().zip(&x0).map(|(a, x)| axpy(a, dt, x)).collect();
                let mut change = f64::INFINITY;
                for _ in 0..MIDPOINT_MAX_ITER {
                    let mid: Vec<S> = z
                        .iter()
                        .zip(&next)
                        .map(|(a, b)| a.add(b).scale(Complex64::new(0.5, 0.0)))
                        .collect();
                    let x = self.field.eval_flat(&mid).map_err(|e| lift_eval(e, 0.0))?;
                    let updated: Vec<S> = z.iter().zip(&x).map(|(a, x)| axpy(a, dt, x)).collect();
                    change = updated
                        .iter()
                        .zip(&next)
                        .map(|(a, b)| (a.value() - b.value()).norm())
                        .fold(0.0, f64::max);
                    next = updated;
                    if change <= MIDPOINT_TOL * scale {
                        return Ok(next);
                    }
                }
                Err(Error::NoConvergence {
                    method: "implicit midpoint iteration",
                    iterations: MIDPOINT_MAX_ITER,
                    residual: change,
                })
            }
        }
    }

    /// Jacobian of the one-step map at `z`, by forward-mode differentiation
    /// through the step.
    pub fn step_jacobian(&self, z: &PhasePoint, dt: f64) -> Result<DMatrix<Complex64>> {
        let flat = z.flat();
        let n = flat.len();
        let seeded: Vec<DualValue> = flat
            .iter()
            .enumerate()
            .map(|(i, v)| DualValue::variable(*v, i, n))
            .collect();
        let out = self.step(&seeded, dt)?;
        Ok(DMatrix::from_fn(n, n, |r, c| out[r].partials[c]))
    }

    /// `steps + 1` states starting at `z0`.
    pub fn run(&self, z0: &PhasePoint, dt: f64, steps: usize) -> Result<Vec<PhasePoint>> {
        let mut states = Vec::with_capacity(steps + 1);
        let mut z = z0.flat();
        states.push(z0.clone());
        for k in 1..=steps {
            z = self.step(&z, dt).map_err(|e| match e {
                Error::AtPoint { source, .. } => lift_eval(source, (k - 1) as f64 * dt),
                other => other,
            })?;
            if z.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
                return Err(Error::NonFinite(k as f64 * dt));
            }
            states.push(PhasePoint::from_flat(&z)?);
        }
        Ok(states)
    }
}

/// Integrates a Hamiltonian field from a real initial state on the grid
/// `[0, dt·steps]`. The field must pass the default HC check.
pub fn integrate_symplectic(field: &PhaseVectorField, z0: &PhasePoint, dt: f64, steps: usize) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) || steps == 0 {
        return Err(Error::invalid(format!("need dt > 0 and at least one step, got dt = {dt}, steps = {steps}")));
    }
    if z0.dim() != field.dim() || !z0.is_real() || !z0.is_finite() {
        return Err(Error::invalid("initial state must be real, finite and match the field dimension"));
    }
    let report = check_default(field)?;
    if !report.verdict {
        return Err(Error::NotHamiltonian {
            hc1: report.hc1_normalized(),
            hc2: report.hc2_normalized(),
        });
    }
    let states = SymplecticStepper::new(field).run(z0, dt, steps)?;
    Trajectory::new(UniformGrid::new(0.0, dt * steps as f64, steps + 1)?, states)
}

/// `max_k |H(z_k) - H(z_0)|`.
pub fn energy_drift(h: &dyn HamiltonianFn, traj: &Trajectory) -> Result<f64> {
    let values = traj
        .states()
        .par_iter()
        .map(|z| h.value(z))
        .collect::<Result<Vec<_>>>()?;
    Ok(values.iter().map(|v| (v - values[0]).norm()).fold(0.0, f64::max))
}

/// Number of grid steps in `epsilon`, checking alignment.
fn aligned_steps(grid: &UniformGrid, epsilon: f64) -> Result<usize> {
    grid.steps_for(epsilon)
        .ok_or_else(|| Error::NotGridAligned(format!("epsilon = {epsilon} with step {}", grid.step())))
}

fn check_sweep(grid: &UniformGrid, sweep: &EpsilonSweep) -> Result<usize> {
    for &e in sweep.epsilons() {
        aligned_steps(grid, e)?;
    }
    aligned_steps(grid, sweep.max())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualAtEpsilon {
    pub epsilon: f64,
    pub q_residual: f64,
    pub p_residual: f64,
}

/// Outcome of [`nd_hamilton_residual`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NdHamiltonReport {
    /// `max |⟨□q/□t⟩ - X_q(z)|` over usable nodes.
    pub q_residual: f64,
    /// `max |⟨□p/□t⟩ - X_p(z)|` over usable nodes.
    pub p_residual: f64,
    pub nodes_used: usize,
    /// Window nodes where some extraction did not converge.
    pub nonconverged: usize,
    /// Set when more than half of the window did not converge.
    pub flagged: bool,
    pub dt: f64,
    pub epsilon_min: f64,
    pub epsilon_max: f64,
    pub window_start: f64,
    pub window_end: f64,
    /// Residuals at each single scale, same window.
    pub per_epsilon: Vec<ResidualAtEpsilon>,
}

fn component_paths(traj: &Trajectory) -> Vec<SampledPath> {
    (0..traj.dim())
        .map(|i| traj.q_path(i))
        .chain((0..traj.dim()).map(|i| traj.p_path(i)))
        .collect()
}

/// Residuals of `□q/□t = X_q`, `□p/□t = X_p` along a sampled trajectory,
/// with extracted scale derivatives on the window `[a + ε_max, b - ε_max]`.
pub fn nd_hamilton_residual(
    field: &PhaseVectorField,
    traj: &Trajectory,
    sweep: &EpsilonSweep,
    mu: Mu,
    tol: f64,
) -> Result<NdHamiltonReport> {
    if traj.dim() != field.dim() {
        return Err(Error::invalid("trajectory and field dimensions differ"));
    }
    let grid = *traj.grid();
    let m = check_sweep(&grid, sweep)?;
    let window = grid.shrink(m)?;
    let d = field.dim();
    let paths = component_paths(traj);

    struct NodeResult {
        extracted: Option<(f64, f64)>,
        fixed: Vec<(f64, f64)>,
    }
    let nodes: Vec<NodeResult> = (m..grid.len() - m)
        .into_par_iter()
        .map(|k| {
            let t = grid.node(k);
            let (xq, xp) = field.eval(&traj.states()[k])?;
            let x: Vec<Complex64> = xq.into_iter().chain(xp).collect();
            let split = |deriv: &[Complex64]| {
                let res = |r: std::ops::Range<usize>| r.map(|i| (deriv[i] - x[i]).norm()).fold(0.0, f64::max);
                (res(0..d), res(d..2 * d))
            };
            let mut values = Vec::with_capacity(2 * d);
            let mut converged = true;
            for path in &paths {
                let r = extracted_scale_derivative(path, t, sweep, mu, tol)?;
                converged &= r.converged;
                values.push(r.value);
            }
            let fixed = sweep
                .epsilons()
                .iter()
                .map(|&e| {
                    let sp = ScaleParams::new(e, mu)?;
                    let deriv = paths.iter().map(|p| scale_derivative(p, t, sp)).collect::<Result<Vec<_>>>()?;
                    Ok(split(&deriv))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(NodeResult {
                extracted: converged.then(|| split(&values)),
                fixed,
            })
        })
        .collect::<Result<_>>()?;

    let nonconverged = nodes.iter().filter(|n| n.extracted.is_none()).count();
    let used: Vec<(f64, f64)> = nodes.iter().filter_map(|n| n.extracted).collect();
    if used.is_empty() {
        return Err(Error::NoConvergedPoints { excluded: nonconverged });
    }
    let per_epsilon = sweep
        .epsilons()
        .iter()
        .enumerate()
        .map(|(j, &epsilon)| ResidualAtEpsilon {
            epsilon,
            q_residual: nodes.iter().map(|n| n.fixed[j].0).fold(0.0, f64::max),
            p_residual: nodes.iter().map(|n| n.fixed[j].1).fold(0.0, f64::max),
        })
        .collect();
    Ok(NdHamiltonReport {
        q_residual: used.iter().map(|r| r.0).fold(0.0, f64::max),
        p_residual: used.iter().map(|r| r.1).fold(0.0, f64::max),
        nodes_used: used.len(),
        nonconverged,
        flagged: 2 * nonconverged > nodes.len(),
        dt: grid.step(),
        epsilon_min: sweep.min(),
        epsilon_max: sweep.max(),
        window_start: window.start(),
        window_end: window.end(),
        per_epsilon,
    })
}

/// Window integral of `p·□q/□t - H` over nodes `m..n-m` at scale `sp`.
fn functional_on_window(h: &dyn HamiltonianFn, traj: &Trajectory, m: usize, sp: ScaleParams) -> Result<Complex64> {
    let grid = traj.grid();
    let d = traj.dim();
    let q_paths: Vec<SampledPath> = (0..d).map(|i| traj.q_path(i)).collect();
    let integrand = (m..grid.len() - m)
        .into_par_iter()
        .map(|k| {
            let t = grid.node(k);
            let z = &traj.states()[k];
            let mut sum = -h.value(z)?;
            for (i, q) in q_paths.iter().enumerate() {
                sum += z.p[i] * scale_derivative(q, t, sp)?;
            }
            Ok(sum)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid(&integrand, grid.step()))
}

/// `∫ [p·□q/□t - H(q, p)] dt` over `[a + ε, b - ε]` at a single scale.
pub fn embedded_functional(h: &dyn HamiltonianFn, traj: &Trajectory, sp: ScaleParams) -> Result<Complex64> {
    if h.dim() != traj.dim() {
        return Err(Error::invalid("Hamiltonian and trajectory dimensions differ"));
    }
    let m = aligned_steps(traj.grid(), sp.epsilon)?;
    traj.grid().shrink(m)?;
    functional_on_window(h, traj, m, sp)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalReport {
    pub extracted: ExtractionResult,
    pub window_start: f64,
    pub window_end: f64,
    pub per_epsilon: Vec<EpsilonValue>,
}

/// The embedded functional across a sweep on the fixed window
/// `[a + ε_max, b - ε_max]`, with the ε → 0 limit extracted.
pub fn embedded_functional_sweep(
    h: &dyn HamiltonianFn,
    traj: &Trajectory,
    sweep: &EpsilonSweep,
    mu: Mu,
    tol: f64,
) -> Result<FunctionalReport> {
    if h.dim() != traj.dim() {
        return Err(Error::invalid("Hamiltonian and trajectory dimensions differ"));
    }
    let grid = traj.grid();
    let m = check_sweep(grid, sweep)?;
    let window = grid.shrink(m)?;
    let family = EpsilonFamily::evaluate(sweep, |e| functional_on_window(h, traj, m, ScaleParams::new(e, mu)?))?;
    Ok(FunctionalReport {
        extracted: extract(&family, tol),
        window_start: window.start(),
        window_end: window.end(),
        per_epsilon: family
            .epsilons()
            .iter()
            .zip(family.values())
            .map(|(&epsilon, v)| EpsilonValue {
                epsilon,
                re: v.re,
                im: v.im,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElAtEpsilon {
    pub epsilon: f64,
    pub residual: f64,
}

/// Outcome of [`el_residual`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElReport {
    /// `max |⟨□/□t ∂L/∂v⟩ - ∂L/∂x|` over usable nodes.
    pub residual: f64,
    pub nodes_used: usize,
    pub nonconverged: usize,
    pub flagged: bool,
    pub dt: f64,
    pub epsilon_min: f64,
    pub epsilon_max: f64,
    pub window_start: f64,
    pub window_end: f64,
    /// Nested residual with both stencils at a single scale.
    pub per_epsilon: Vec<ElAtEpsilon>,
}

fn max_gap(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Residual of `□/□t [∂L/∂v(t, γ, □γ/□t)] = ∂L/∂x(t, γ, □γ/□t)` along the
/// sampled path `γ` (one [`SampledPath`] per coordinate).
///
/// The inner derivative `□γ/□t` is extracted on `[a + ε_max, b - ε_max]`;
/// the momentum built from it is differentiated again on the window
/// shrunk once more by `ε_max`. A node counts only if its own inner
/// extraction and the outer extraction converged.
pub fn el_residual(l: &Lagrangian, path: &[SampledPath], sweep: &EpsilonSweep, mu: Mu, tol: f64) -> Result<ElReport> {
    let d = l.dim();
    if path.len() != d {
        return Err(Error::invalid(format!("Lagrangian of dimension {d} given {} path components", path.len())));
    }
    let grid = *path[0].grid();
    if path.iter().any(|p| !p.grid().same_as(&grid)) {
        return Err(Error::GridMismatch("path components use different grids".into()));
    }
    let m = check_sweep(&grid, sweep)?;
    let inner = grid.shrink(m)?;
    let outer = inner.shrink(m).map_err(|_| Error::EmptyWindow)?;
    let position = |k: usize| -> Vec<Complex64> { path.iter().map(|p| p.values()[k]).collect() };

    // Inner stage: extracted velocities and, per scale, raw velocities.
    struct Inner {
        velocity: Vec<Complex64>,
        converged: bool,
        fixed: Vec<Vec<Complex64>>,
    }
    let inner_nodes: Vec<Inner> = (m..grid.len() - m)
        .into_par_iter()
        .map(|k| {
            let t = grid.node(k);
            let mut velocity = Vec::with_capacity(d);
            let mut converged = true;
            for p in path {
                let r = extracted_scale_derivative(p, t, sweep, mu, tol)?;
                converged &= r.converged;
                velocity.push(r.value);
            }
            let fixed = sweep
                .epsilons()
                .iter()
                .map(|&e| {
                    let sp = ScaleParams::new(e, mu)?;
                    path.iter().map(|p| scale_derivative(p, t, sp)).collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Inner {
                velocity,
                converged,
                fixed,
            })
        })
        .collect::<Result<_>>()?;

    let momenta = |velocity_of: &(dyn Fn(&Inner) -> &[Complex64] + Sync)| -> Result<Vec<SampledPath>> {
        let rows = inner_nodes
            .par_iter()
            .enumerate()
            .map(|(j, node)| {
                let k = m + j;
                let (_, _, dv) = l.partials(grid.node(k), &position(k), velocity_of(node))?;
                Ok(dv)
            })
            .collect::<Result<Vec<_>>>()?;
        (0..d)
            .map(|i| SampledPath::new(inner, rows.iter().map(|r| r[i]).collect()))
            .collect()
    };
    let force = |k: usize, velocity: &[Complex64]| -> Result<Vec<Complex64>> {
        let (_, dx, _) = l.partials(grid.node(k), &position(k), velocity)?;
        Ok(dx)
    };

    let extracted_momenta = momenta(&|n| &n.velocity)?;
    let per_node: Vec<Option<f64>> = (2 * m..grid.len() - 2 * m)
        .into_par_iter()
        .map(|k| {
            let node = &inner_nodes[k - m];
            let t = grid.node(k);
            let mut dp = Vec::with_capacity(d);
            let mut converged = node.converged;
            for p in &extracted_momenta {
                let r = extracted_scale_derivative(p, t, sweep, mu, tol)?;
                converged &= r.converged;
                dp.push(r.value);
            }
            if !converged {
                return Ok(None);
            }
            Ok(Some(max_gap(&dp, &force(k, &node.velocity)?)))
        })
        .collect::<Result<_>>()?;

    let mut per_epsilon = Vec::with_capacity(sweep.len());
    for (j, &epsilon) in sweep.epsilons().iter().enumerate() {
        let sp = ScaleParams::new(epsilon, mu)?;
        let moms = momenta(&|n| &n.fixed[j])?;
        let residual = (2 * m..grid.len() - 2 * m)
            .into_par_iter()
            .map(|k| {
                let t = grid.node(k);
                let dp = moms.iter().map(|p| scale_derivative(p, t, sp)).collect::<Result<Vec<_>>>()?;
                Ok(max_gap(&dp, &force(k, &inner_nodes[k - m].fixed[j])?))
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        per_epsilon.push(ElAtEpsilon { epsilon, residual });
    }

    let nonconverged = per_node.iter().filter(|r| r.is_none()).count();
    let used: Vec<f64> = per_node.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::NoConvergedPoints { excluded: nonconverged });
    }
    Ok(ElReport {
        residual: used.iter().copied().fold(0.0, f64::max),
        nodes_used: used.len(),
        nonconverged,
        flagged: 2 * nonconverged > per_node.len(),
        dt: grid.step(),
        epsilon_min: sweep.min(),
        epsilon_max: sweep.max(),
        window_start: outer.start(),
        window_end: outer.end(),
        per_epsilon,
    })
}
