//! Hamiltonicity conditions, Hamiltonian reconstruction along rays from
//! the origin, gradient verification and the Legendre transform.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::expr::{parse, CompiledExpr, EvalError, Expr, RESERVED_IDENTS};
use crate::field::{phase_variable_names, PhaseVectorField};
use crate::phase::PhasePoint;
use crate::quadrature::GaussLegendre;

/// Default tolerance on normalized HC residuals.
pub const DEFAULT_HC_TOL: f64 = 1e-9;

/// Default number of Gauss–Legendre nodes for reconstruction.
pub const DEFAULT_NODES: usize = 64;

/// Central-difference step used on reconstructed Hamiltonians.
pub const GRADIENT_STEP: f64 = 1e-6;

/// Seeded uniform cloud of phase points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CloudSpec {
    pub points: usize,
    /// Coordinates are drawn from `[-half_width, half_width]`.
    pub half_width: f64,
    pub seed: u64,
    /// Also draw imaginary parts of `p` from the same interval.
    pub complex_p: bool,
}

impl Default for CloudSpec {
    fn default() -> Self {
        Self {
            points: 256,
            half_width: 1.0,
            seed: 0,
            complex_p: false,
        }
    }
}

pub fn sample_cloud(d: usize, spec: &CloudSpec) -> Result<Vec<PhasePoint>> {
    if spec.points == 0 || d == 0 {
        return Err(Error::invalid("point cloud needs at least one point in positive dimension"));
    }
    if !(spec.half_width > 0.0 && spec.half_width.is_finite()) {
        return Err(Error::invalid(format!("box half-width must be positive, got {}", spec.half_width)));
    }
    let w = spec.half_width;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.points)
        .map(|_| {
            let q = (0..d).map(|_| Complex64::new(rng.gen_range(-w..=w), 0.0)).collect();
            let p = (0..d)
                .map(|_| {
                    let re = rng.gen_range(-w..=w);
                    let im = if spec.complex_p { rng.gen_range(-w..=w) } else { 0.0 };
                    Complex64::new(re, im)
                })
                .collect();
            PhasePoint { q, p }
        })
        .collect())
}

/// Tensor grid with `per_axis` points per coordinate on `[-w, w]^{2d}`,
/// last coordinate fastest.
pub fn tensor_grid(d: usize, per_axis: usize, half_width: f64) -> Result<Vec<PhasePoint>> {
    if d == 0 || per_axis < 2 {
        return Err(Error::invalid("tensor grid needs d >= 1 and at least 2 points per axis"));
    }
    let axis: Vec<f64> = (0..per_axis)
        .map(|k| -half_width + 2.0 * half_width * k as f64 / (per_axis - 1) as f64)
        .collect();
    let dims = 2 * d;
    let total = per_axis
        .checked_pow(dims as u32)
        .ok_or_else(|| Error::invalid("tensor grid is too large"))?;
    Ok((0..total)
        .map(|mut idx| {
            let mut coords = vec![0.0; dims];
            for c in coords.iter_mut().rev() {
                *c = axis[idx % per_axis];
                idx /= per_axis;
            }
            PhasePoint::real(&coords[..d], &coords[d..]).expect("matching halves")
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointFailure {
    pub point: PhasePoint,
    pub message: String,
}

/// Outcome of [`check_conditions`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HelmholtzReport {
    /// Largest entry of `∂X_q/∂q + (∂X_p/∂p)ᵀ` over the points.
    pub hc1_residual: f64,
    /// Largest antisymmetric entry of `∂X_q/∂p` or `∂X_p/∂q`.
    pub hc2_residual: f64,
    /// Largest Jacobian entry seen; the verdict compares residuals divided
    /// by this scale (or by 1 if the Jacobian vanishes) against `tol`.
    pub jacobian_scale: f64,
    pub tol: f64,
    pub verdict: bool,
    pub points_checked: usize,
    pub worst_point: PhasePoint,
    pub failures: Vec<PointFailure>,
}

impl HelmholtzReport {
    fn normalizer(&self) -> f64 {
        if self.jacobian_scale > 0.0 {
            self.jacobian_scale
        } else {
            1.0
        }
    }

    pub fn hc1_normalized(&self) -> f64 {
        self.hc1_residual / self.normalizer()
    }

    pub fn hc2_normalized(&self) -> f64 {
        self.hc2_residual / self.normalizer()
    }
}

/// Evaluates HC1 and HC2 with exact Jacobians at every point. Points where
/// the field cannot be differentiated are listed in `failures`; the check
/// fails outright only if no point could be evaluated.
pub fn check_conditions(field: &PhaseVectorField, points: &[PhasePoint], tol: f64) -> Result<HelmholtzReport> {
    if points.is_empty() {
        return Err(Error::invalid("no points to check"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let results: Vec<Result<(f64, f64, f64)>> = points
        .par_iter()
        .map(|z| {
            let j = field.jacobian(z)?;
            Ok((j.hc1_defect(), j.hc2_defect(), j.max_abs()))
        })
        .collect();
    let mut hc1 = 0.0f64;
    let mut hc2 = 0.0f64;
    let mut scale = 0.0f64;
    let mut worst: Option<(f64, usize)> = None;
    let mut failures = Vec::new();
    let mut first_error = None;
    let mut checked = 0;
    for (idx, (z, r)) in points.iter().zip(results).enumerate() {
        match r {
            Ok((a, b, s)) => {
                checked += 1;
                hc1 = hc1.max(a);
                hc2 = hc2.max(b);
                scale = scale.max(s);
                let defect = a.max(b);
                if worst.is_none_or(|(w, _)| defect > w) {
                    worst = Some((defect, idx));
                }
            }
            Err(e) => {
                failures.push(PointFailure {
                    point: z.clone(),
                    message: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    let Some((_, worst_idx)) = worst else {
        return Err(first_error.expect("every point failed"));
    };
    let mut report = HelmholtzReport {
        hc1_residual: hc1,
        hc2_residual: hc2,
        jacobian_scale: scale,
        tol,
        verdict: false,
        points_checked: checked,
        worst_point: points[worst_idx].clone(),
        failures,
    };
    report.verdict = report.hc1_normalized() <= tol && report.hc2_normalized() <= tol;
    Ok(report)
}

/// HC check on the default seeded cloud.
pub fn check_default(field: &PhaseVectorField) -> Result<HelmholtzReport> {
    check_conditions(field, &sample_cloud(field.dim(), &CloudSpec::default())?, DEFAULT_HC_TOL)
}

/// Checked reconstruction; same as [`ReconstructedHamiltonian::new`].
pub fn reconstruct_hamiltonian(field: &PhaseVectorField, nodes: QuadratureNodes) -> Result<ReconstructedHamiltonian> {
    ReconstructedHamiltonian::new(field.clone(), nodes)
}

/// Number of Gauss–Legendre nodes on `λ ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureNodes {
    Fixed(usize),
    /// Double from 8 nodes until successive values agree to `1e-13`
    /// (relative to `max(1, |H|)`), at most 1024 nodes.
    Auto,
}

impl Default for QuadratureNodes {
    fn default() -> Self {
        QuadratureNodes::Fixed(DEFAULT_NODES)
    }
}

impl fmt::Display for QuadratureNodes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuadratureNodes::Fixed(n) => write!(f, "{n}"),
            QuadratureNodes::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for QuadratureNodes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "auto" {
            return Ok(QuadratureNodes::Auto);
        }
        match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(QuadratureNodes::Fixed(n)),
            _ => Err(Error::invalid(format!("nodes must be a positive integer or `auto`, got `{s}`"))),
        }
    }
}

impl Serialize for QuadratureNodes {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

const AUTO_START: usize = 8;
const AUTO_CAP: usize = 1024;
const AUTO_TOL: f64 = 1e-13;

fn auto_rules() -> &'static [GaussLegendre] {
    static RULES: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
    RULES.get_or_init(|| {
        let mut n = AUTO_START;
        let mut out = Vec::new();
        while n <= AUTO_CAP {
            out.push(GaussLegendre::new(n).expect("positive node count"));
            n *= 2;
        }
        out
    })
}

/// Values and partials of a Hamiltonian on phase space.
pub trait HamiltonianFn: Sync {
    fn dim(&self) -> usize;

    fn value(&self, z: &PhasePoint) -> Result<Complex64>;

    /// `(∂H/∂q, ∂H/∂p)`.
    fn gradient(&self, z: &PhasePoint) -> Result<(Vec<Complex64>, Vec<Complex64>)>;
}

/// `H(z) = ∫_0^1 [p·X_q(λz) - q·X_p(λz)] dλ`, normalized so `H(0) = 0`.
#[derive(Debug, Clone)]
pub struct ReconstructedHamiltonian {
    field: PhaseVectorField,
    nodes: QuadratureNodes,
    rule: Option<GaussLegendre>,
}

impl ReconstructedHamiltonian {
    /// Checks HC1/HC2 on the default cloud first; fails with
    /// [`Error::NotHamiltonian`] if they do not hold.
    pub fn new(field: PhaseVectorField, nodes: QuadratureNodes) -> Result<Self> {
        let report = check_default(&field)?;
        if !report.verdict {
            return Err(Error::NotHamiltonian {
                hc1: report.hc1_normalized(),
                hc2: report.hc2_normalized(),
            });
        }
        Self::unchecked(field, nodes)
    }

    /// Skips the HC check; for diagnosing non-Hamiltonian fields.
    pub fn unchecked(field: PhaseVectorField, nodes: QuadratureNodes) -> Result<Self> {
        let rule = match nodes {
            QuadratureNodes::Fixed(0) => return Err(Error::invalid("quadrature needs at least one node")),
            QuadratureNodes::Fixed(n) => Some(GaussLegendre::new(n)?),
            QuadratureNodes::Auto => None,
        };
        Ok(Self { field, nodes, rule })
    }

    pub fn field(&self) -> &PhaseVectorField {
        &self.field
    }

    pub fn nodes(&self) -> QuadratureNodes {
        self.nodes
    }

    fn ray_integral(&self, z: &PhasePoint, rule: &GaussLegendre) -> Result<Complex64> {
        let flat = z.flat();
        let d = self.field.dim();
        rule.integrate(0.0, 1.0, |lambda| {
            let scaled: Vec<Complex64> = flat.iter().map(|c| c * lambda).collect();
            let x = self.field.eval_flat(&scaled).map_err(|source| Error::AtPoint {
                point: format!("λ = {lambda} on the ray to {z}"),
                source,
            })?;
            let mut sum = Complex64::new(0.0, 0.0);
            for i in 0..d {
                sum += z.p[i] * x[i] - z.q[i] * x[d + i];
            }
            Ok(sum)
        })
    }

    /// Value together with the number of nodes actually used.
    pub fn evaluate_counted(&self, z: &PhasePoint) -> Result<(Complex64, usize)> {
        if z.dim() != self.field.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, field has {}",
                z.dim(),
                self.field.dim()
            )));
        }
        if z.is_origin() {
            return Ok((Complex64::new(0.0, 0.0), 0));
        }
        if let Some(rule) = &self.rule {
            return Ok((self.ray_integral(z, rule)?, rule.len()));
        }
        let rules = auto_rules();
        let mut prev = self.ray_integral(z, &rules[0])?;
        for rule in &rules[1..] {
            let next = self.ray_integral(z, rule)?;
            if (next - prev).norm() < AUTO_TOL * next.norm().max(1.0) {
                return Ok((next, rule.len()));
            }
            prev = next;
        }
        Ok((prev, AUTO_CAP))
    }

    pub fn evaluate(&self, z: &PhasePoint) -> Result<Complex64> {
        Ok(self.evaluate_counted(z)?.0)
    }
}

fn central_gradient(h: &impl HamiltonianFn, z: &PhasePoint) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let flat = z.flat();
    let mut partials = Vec::with_capacity(flat.len());
    for k in 0..flat.len() {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[k] += GRADIENT_STEP;
        minus[k] -= GRADIENT_STEP;
        let hp = h.value(&PhasePoint::from_flat(&plus)?)?;
        let hm = h.value(&PhasePoint::from_flat(&minus)?)?;
        partials.push((hp - hm) / (2.0 * GRADIENT_STEP));
    }
    let p = partials.split_off(z.dim());
    Ok((partials, p))
}

impl HamiltonianFn for ReconstructedHamiltonian {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn value(&self, z: &PhasePoint) -> Result<Complex64> {
        self.evaluate(z)
    }

    /// Central differences with step [`GRADIENT_STEP`].
    fn gradient(&self, z: &PhasePoint) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        central_gradient(self, z)
    }
}

fn check_names(expr: &Expr, allowed: &[String], constants: &BTreeMap<String, f64>, what: &str) -> Result<()> {
    for (name, value) in constants {
        if RESERVED_IDENTS.contains(&name.as_str()) || allowed.contains(name) {
            return Err(Error::invalid(format!("`{name}` cannot be used as a constant name")));
        }
        if !value.is_finite() {
            return Err(Error::invalid(format!("constant `{name}` is not finite")));
        }
    }
    for var in expr.variables() {
        if !allowed.contains(&var) && !constants.contains_key(&var) {
            return Err(Error::invalid(format!(
                "{what} references `{var}`; expected one of {} or a declared constant",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

/// A Hamiltonian given as an expression in `q1..qd, p1..pd`.
#[derive(Debug, Clone)]
pub struct ExprHamiltonian {
    d: usize,
    program: CompiledExpr,
}

impl ExprHamiltonian {
    pub fn new(expr: &Expr, d: usize, constants: &BTreeMap<String, f64>) -> Result<Self> {
        let names = phase_variable_names(d);
        check_names(expr, &names, constants, "Hamiltonian")?;
        let slots: Vec<&str> = names.iter().map(String::as_str).collect();
        Ok(Self {
            d,
            program: CompiledExpr::new(&expr.substitute(constants), &slots)?,
        })
    }

    pub fn parse(source: &str, d: usize, constants: &[(&str, f64)]) -> Result<Self> {
        let consts = constants.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Self::new(&parse(source)?, d, &consts)
    }

    fn at(z: &PhasePoint, source: EvalError) -> Error {
        Error::AtPoint {
            point: z.to_string(),
            source,
        }
    }
}

impl HamiltonianFn for ExprHamiltonian {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, z: &PhasePoint) -> Result<Complex64> {
        self.program.eval(&z.flat()).map_err(|e| Self::at(z, e))
    }

    /// Exact partials.
    fn gradient(&self, z: &PhasePoint) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let (_, mut g) = self.program.gradient(&z.flat()).map_err(|e| Self::at(z, e))?;
        let p = g.split_off(self.d);
        Ok((g, p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    /// `max |∂H/∂p - X_q|`.
    pub p_residual: f64,
    /// `max |∂H/∂q + X_p|`.
    pub q_residual: f64,
    pub points_checked: usize,
    pub failures: Vec<PointFailure>,
}

/// Compares the gradient of `h` with the field on `points`.
pub fn verify_gradients(h: &dyn HamiltonianFn, field: &PhaseVectorField, points: &[PhasePoint]) -> Result<GradientReport> {
    if points.is_empty() {
        return Err(Error::invalid("no points to verify"));
    }
    if h.dim() != field.dim() {
        return Err(Error::invalid("Hamiltonian and field dimensions differ"));
    }
    let results: Vec<Result<(f64, f64)>> = points
        .par_iter()
        .map(|z| {
            let (dq, dp) = h.gradient(z)?;
            let (xq, xp) = field.eval(z)?;
            let p_res = dp.iter().zip(&xq).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            let q_res = dq.iter().zip(&xp).map(|(a, b)| (a + b).norm()).fold(0.0, f64::max);
            Ok((p_res, q_res))
        })
        .collect();
    let mut report = GradientReport {
        p_residual: 0.0,
        q_residual: 0.0,
        points_checked: 0,
        failures: Vec::new(),
    };
    let mut first_error = None;
    for (z, r) in points.iter().zip(results) {
        match r {
            Ok((p, q)) => {
                report.points_checked += 1;
                report.p_residual = report.p_residual.max(p);
                report.q_residual = report.q_residual.max(q);
            }
            Err(e) => {
                report.failures.push(PointFailure {
                    point: z.clone(),
                    message: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if report.points_checked == 0 {
        return Err(first_error.expect("every point failed"));
    }
    Ok(report)
}

/// Lagrangian `L(t, x, v)` in variables `t, x1..xd, v1..vd`; for `d = 1`
/// the names `x` and `v` are accepted as aliases.
#[derive(Debug, Clone)]
pub struct Lagrangian {
    d: usize,
    expr: Expr,
    program: CompiledExpr,
}

impl Lagrangian {
    pub fn new(expr: &Expr, d: usize, constants: &BTreeMap<String, f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("Lagrangian dimension must be positive"));
        }
        let expr = if d == 1 {
            expr.rename(&BTreeMap::from([("x", "x1"), ("v", "v1")]))
        } else {
            expr.clone()
        };
        let names = Self::slot_names(d);
        check_names(&expr, &names, constants, "Lagrangian")?;
        let slots: Vec<&str> = names.iter().map(String::as_str).collect();
        let program = CompiledExpr::new(&expr.substitute(constants), &slots)?;
        Ok(Self { d, expr, program })
    }

    pub fn parse(source: &str, d: usize, constants: &[(&str, f64)]) -> Result<Self> {
        let consts = constants.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Self::new(&parse(source)?, d, &consts)
    }

    fn slot_names(d: usize) -> Vec<String> {
        std::iter::once("t".to_string())
            .chain((1..=d).map(|i| format!("x{i}")))
            .chain((1..=d).map(|i| format!("v{i}")))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    fn inputs(&self, t: f64, x: &[Complex64], v: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.d || v.len() != self.d {
            return Err(Error::invalid(format!("Lagrangian of dimension {} got wrong-sized state", self.d)));
        }
        Ok(std::iter::once(Complex64::new(t, 0.0))
            .chain(x.iter().copied())
            .chain(v.iter().copied())
            .collect())
    }

    fn at(t: f64, x: &[Complex64], v: &[Complex64], source: EvalError) -> Error {
        Error::AtPoint {
            point: format!("t = {t}, x = {x:?}, v = {v:?}"),
            source,
        }
    }

    pub fn value(&self, t: f64, x: &[Complex64], v: &[Complex64]) -> Result<Complex64> {
        self.program
            .eval(&self.inputs(t, x, v)?)
            .map_err(|e| Self::at(t, x, v, e))
    }

    /// `(L, ∂L/∂x, ∂L/∂v)`, exact.
    pub fn partials(&self, t: f64, x: &[Complex64], v: &[Complex64]) -> Result<(Complex64, Vec<Complex64>, Vec<Complex64>)> {
        let (value, g) = self
            .program
            .gradient(&self.inputs(t, x, v)?)
            .map_err(|e| Self::at(t, x, v, e))?;
        Ok((value, g[1..=self.d].to_vec(), g[self.d + 1..].to_vec()))
    }
}

/// Result of [`legendre_transform`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LegendreSolution {
    pub h_re: f64,
    pub h_im: f64,
    /// Real parts of the velocity solving `p = ∂L/∂v`.
    pub v_re: Vec<f64>,
    pub v_im: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl LegendreSolution {
    pub fn h(&self) -> Complex64 {
        Complex64::new(self.h_re, self.h_im)
    }
}

pub const LEGENDRE_MAX_ITER: usize = 100;
pub const LEGENDRE_TOL: f64 = 1e-12;
/// Smallest singular value of `∂²L/∂v²` below which the map is degenerate.
pub const LEGENDRE_DEGENERACY: f64 = 1e-8;

fn max_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `H = p·v - L(t, q, v)` with `v` solving `p = ∂L/∂v(t, q, v)` by damped
/// Newton iteration from `v = p`. The Hessian in `v` is a central
/// difference of the exact gradient.
pub fn legendre_transform(l: &Lagrangian, t: f64, q: &[f64], p: &[Complex64]) -> Result<LegendreSolution> {
    let d = l.dim();
    if q.len() != d || p.len() != d {
        return Err(Error::invalid(format!("Legendre transform of dimension {d} got wrong-sized q or p")));
    }
    let x: Vec<Complex64> = q.iter().map(|x| Complex64::new(*x, 0.0)).collect();
    let residual_at = |v: &[Complex64]| -> Result<Vec<Complex64>> {
        let (_, _, dv) = l.partials(t, &x, v)?;
        Ok(dv.iter().zip(p).map(|(a, b)| a - b).collect())
    };
    let hessian = |v: &[Complex64]| -> Result<DMatrix<Complex64>> {
        let mut h = DMatrix::zeros(d, d);
        for j in 0..d {
            let step = 1e-6 * v[j].norm().max(1.0);
            let mut plus = v.to_vec();
            let mut minus = v.to_vec();
            plus[j] += step;
            minus[j] -= step;
            let gp = residual_at(&plus)?;
            let gm = residual_at(&minus)?;
            for i in 0..d {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        Ok(h)
    };
    let smallest_singular = |h: &DMatrix<Complex64>| h.singular_values().min();
    let tol = LEGENDRE_TOL * max_norm(p).max(1.0);

    let mut v: Vec<Complex64> = p.to_vec();
    let mut g = residual_at(&v)?;
    let mut r = max_norm(&g);
    let mut iterations = 0;
    while r > tol {
        if iterations == LEGENDRE_MAX_ITER {
            return Err(Error::NoConvergence {
                method: "Legendre Newton iteration",
                iterations,
                residual: r,
            });
        }
        iterations += 1;
        let h = hessian(&v)?;
        let rhs = DMatrix::from_iterator(d, 1, g.iter().map(|z| -z));
        let step = match h.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => s,
            _ => return Err(Error::LegendreDegenerate(smallest_singular(&h))),
        };
        let mut damping = 1.0;
        loop {
            let trial: Vec<Complex64> = v.iter().zip(step.iter()).map(|(a, s)| a + s * damping).collect();
            let trial_g = residual_at(&trial);
            if let Ok(tg) = trial_g {
                let tr = max_norm(&tg);
                if tr < r || damping < 1e-9 {
                    v = trial;
                    g = tg;
                    r = tr;
                    break;
                }
            } else if damping < 1e-9 {
                return Err(trial_g.unwrap_err());
            }
            damping *= 0.5;
        }
    }
    let sigma = smallest_singular(&hessian(&v)?);
    if sigma < LEGENDRE_DEGENERACY {
        return Err(Error::LegendreDegenerate(sigma));
    }
    let lv = l.value(t, &x, &v)?;
    let pv: Complex64 = p.iter().zip(&v).map(|(a, b)| a * b).sum();
    let h = pv - lv;
    Ok(LegendreSolution {
        h_re: h.re,
        h_im: h.im,
        v_re: v.iter().map(|z| z.re).collect(),
        v_im: v.iter().map(|z| z.im).collect(),
        iterations,
        residual: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn newton(m: f64, k: f64) -> PhaseVectorField {
        PhaseVectorField::from_strs(1, &["p1/m"], &["-k*q1"], &[("m", m), ("k", k)]).unwrap()
    }

    #[test]
    fn linear_conditions() {
        let pts = sample_cloud(1, &CloudSpec::default()).unwrap();
        let r = check_conditions(&PhaseVectorField::linear(2.0, 1.0, 4.0, -2.0), &pts, DEFAULT_HC_TOL).unwrap();
        assert!(r.verdict && r.hc1_residual <= 1e-15 && r.hc2_residual <= 1e-15);
        assert_eq!(r.points_checked, 256);
        let r = check_conditions(&PhaseVectorField::linear(1.0, 2.0, 3.0, 1.0), &pts, DEFAULT_HC_TOL).unwrap();
        assert!(!r.verdict);
        assert_eq!(r.hc1_residual, 2.0);
        assert!(check_default(&newton(2.0, 5.0)).unwrap().verdict);
    }

    #[test]
    fn hc2_detects_asymmetric_coupling() {
        let x = PhaseVectorField::from_strs(2, &["p1", "p2 + p1"], &["-q1", "-q2"], &[]).unwrap();
        let r = check_default(&x).unwrap();
        assert!(!r.verdict);
        assert_eq!(r.hc1_residual, 0.0);
        assert_eq!(r.hc2_residual, 1.0);
    }

    #[test]
    fn failures_are_reported_and_skipped() {
        let x = PhaseVectorField::from_strs(1, &["sqrt(p1)"], &["0"], &[]).unwrap();
        let pts = vec![
            PhasePoint::real(&[0.0], &[1.0]).unwrap(),
            PhasePoint::real(&[0.0], &[-1.0]).unwrap(),
        ];
        let r = check_conditions(&x, &pts, DEFAULT_HC_TOL).unwrap();
        assert_eq!(r.points_checked, 1);
        assert_eq!(r.failures.len(), 1);
        assert!(r.failures[0].message.contains("sqrt"));
        assert!(check_conditions(&x, &pts[1..], DEFAULT_HC_TOL).is_err());
    }

    #[test]
    fn verdict_is_scale_invariant() {
        let pts = sample_cloud(1, &CloudSpec::default()).unwrap();
        for x in [PhaseVectorField::linear(1.0, 2.0, 3.0, -1.0), PhaseVectorField::linear(1.0, 2.0, 3.0, 1.0)] {
            let base = check_conditions(&x, &pts, DEFAULT_HC_TOL).unwrap();
            for k in [-1e6, -3.0, 1e-7, 42.0] {
                let r = check_conditions(&x.scaled(k), &pts, DEFAULT_HC_TOL).unwrap();
                assert_eq!(r.verdict, base.verdict);
            }
        }
    }

    #[test]
    fn reconstruction_examples() {
        let (a, b, g) = (1.0, 2.0, 3.0);
        let h = ReconstructedHamiltonian::new(PhaseVectorField::linear(a, b, g, -a), QuadratureNodes::default()).unwrap();
        let z = PhasePoint::real(&[1.0], &[1.0]).unwrap();
        assert!((h.evaluate(&z).unwrap() - c(0.5)).norm() < 1e-12);
        for (q, p) in [(0.3, -0.7), (-1.0, 0.25)] {
            let exact = 0.5 * (b * p * p - g * q * q) + a * q * p;
            let got = h.evaluate(&PhasePoint::real(&[q], &[p]).unwrap()).unwrap();
            assert!((got - c(exact)).norm() < 1e-12);
        }
        let h = ReconstructedHamiltonian::new(newton(1.0, 1.0), QuadratureNodes::Auto).unwrap();
        let got = h.evaluate(&PhasePoint::real(&[0.6], &[-0.8]).unwrap()).unwrap();
        assert!((got - c(0.5)).norm() < 1e-12);
        let h = ReconstructedHamiltonian::new(PhaseVectorField::zero(2), QuadratureNodes::Fixed(4)).unwrap();
        assert_eq!(h.evaluate(&PhasePoint::real(&[1.0, 2.0], &[3.0, 4.0]).unwrap()).unwrap(), c(0.0));
        assert_eq!(h.evaluate(&PhasePoint::origin(2)).unwrap(), c(0.0));
    }

    #[test]
    fn reconstruction_refuses_non_hamiltonian_fields() {
        let x = PhaseVectorField::linear(1.0, 2.0, 3.0, 1.0);
        assert!(matches!(
            ReconstructedHamiltonian::new(x.clone(), QuadratureNodes::default()),
            Err(Error::NotHamiltonian { .. })
        ));
        assert!(ReconstructedHamiltonian::unchecked(x, QuadratureNodes::default()).is_ok());
    }

    #[test]
    fn auto_nodes_stop_early_for_polynomials() {
        let h = ReconstructedHamiltonian::new(newton(2.0, 5.0), QuadratureNodes::Auto).unwrap();
        let (v, n) = h.evaluate_counted(&PhasePoint::real(&[1.0], &[2.0]).unwrap()).unwrap();
        assert_eq!(n, 16);
        assert!((v - c(1.0 + 2.5)).norm() < 1e-13);
        assert_eq!("auto".parse::<QuadratureNodes>().unwrap(), QuadratureNodes::Auto);
        assert_eq!("12".parse::<QuadratureNodes>().unwrap(), QuadratureNodes::Fixed(12));
        assert!("0".parse::<QuadratureNodes>().is_err());
    }

    #[test]
    fn gradients_of_reconstructions() {
        let grid = tensor_grid(1, 5, 1.0).unwrap();
        assert_eq!(grid.len(), 25);
        let x = PhaseVectorField::linear(1.0, 2.0, 3.0, -1.0);
        let h = ReconstructedHamiltonian::new(x.clone(), QuadratureNodes::default()).unwrap();
        let r = verify_gradients(&h, &x, &grid).unwrap();
        assert!(r.p_residual <= 1e-6 && r.q_residual <= 1e-6, "{r:?}");

        let x = newton(2.0, 5.0);
        let h = ReconstructedHamiltonian::new(x.clone(), QuadratureNodes::default()).unwrap();
        let r = verify_gradients(&h, &x, &grid).unwrap();
        assert!(r.p_residual <= 1e-6 && r.q_residual <= 1e-6, "{r:?}");

        let exact = ExprHamiltonian::parse("p1^2/4 + 2.5*q1^2", 1, &[]).unwrap();
        let r = verify_gradients(&exact, &x, &grid).unwrap();
        assert!(r.p_residual <= 1e-15 && r.q_residual <= 1e-15, "{r:?}");

        let perturbed = ExprHamiltonian::parse("p1^2/4 + 2.5*q1^2 + 0.1*q1", 1, &[]).unwrap();
        let r = verify_gradients(&perturbed, &x, &grid).unwrap();
        assert!((r.q_residual - 0.1).abs() < 1e-12 && r.p_residual < 1e-15, "{r:?}");
    }

    #[test]
    fn complex_momenta_are_supported() {
        let spec = CloudSpec {
            complex_p: true,
            ..CloudSpec::default()
        };
        let pts = sample_cloud(1, &spec).unwrap();
        assert!(pts.iter().any(|z| z.p[0].im != 0.0));
        let x = newton(1.0, 1.0);
        assert!(check_conditions(&x, &pts, DEFAULT_HC_TOL).unwrap().verdict);
        let h = ReconstructedHamiltonian::new(x, QuadratureNodes::default()).unwrap();
        for z in &pts[..10] {
            let exact = 0.5 * (z.p[0] * z.p[0] + z.q[0] * z.q[0]);
            assert!((h.evaluate(z).unwrap() - exact).norm() < 1e-12);
        }
    }

    #[test]
    fn legendre_examples() {
        let l = Lagrangian::parse("0.5*m*v^2 - 0.5*x^2", 1, &[("m", 1.0)]).unwrap();
        for (q, p) in [(0.0, 3.0), (0.4, -1.5), (1.0, 0.0)] {
            let s = legendre_transform(&l, 0.0, &[q], &[c(p)]).unwrap();
            assert!((s.h() - c(0.5 * p * p + 0.5 * q * q)).norm() < 1e-12);
        }
        let free = Lagrangian::parse("0.5*v^2", 1, &[]).unwrap();
        let s = legendre_transform(&free, 0.0, &[0.0], &[c(3.0)]).unwrap();
        assert!((s.v_re[0] - 3.0).abs() < 1e-12 && (s.h_re - 4.5).abs() < 1e-12);

        let quartic = Lagrangian::parse("v^4/4", 1, &[]).unwrap();
        let s = legendre_transform(&quartic, 0.0, &[0.0], &[c(8.0)]).unwrap();
        assert!((s.v_re[0] - 2.0).abs() < 1e-12 && (s.h_re - 12.0).abs() < 1e-10, "{s:?}");
    }

    #[test]
    fn legendre_detects_degeneracy() {
        let linear = Lagrangian::parse("v - x", 1, &[]).unwrap();
        assert!(matches!(
            legendre_transform(&linear, 0.0, &[0.0], &[c(1.0)]),
            Err(Error::LegendreDegenerate(_))
        ));
    }

    #[test]
    fn legendre_in_two_dimensions() {
        let l = Lagrangian::parse("0.5*(2*v1^2 + 2*v1*v2 + v2^2) - x1*x2 + t", 2, &[]).unwrap();
        let (q, v) = ([0.5, -0.25], [0.3, -0.7]);
        let x: Vec<Complex64> = q.iter().map(|z| c(*z)).collect();
        let vv: Vec<Complex64> = v.iter().map(|z| c(*z)).collect();
        let (lv, _, p) = l.partials(1.5, &x, &vv).unwrap();
        let s = legendre_transform(&l, 1.5, &q, &p).unwrap();
        let expected: Complex64 = vv.iter().zip(&p).map(|(a, b)| a * b).sum::<Complex64>() - lv;
        assert!((s.h() - expected).norm() < 1e-10);
        assert!((s.v_re[0] - 0.3).abs() < 1e-10 && (s.v_re[1] + 0.7).abs() < 1e-10);
    }

    #[test]
    fn lagrangian_rejects_unknown_names() {
        assert!(Lagrangian::parse("0.5*v^2 - q1", 1, &[]).is_err());
        assert!(Lagrangian::parse("0.5*v1^2 - x1 + t", 1, &[]).is_ok());
        assert!(ExprHamiltonian::parse("p1^2 + t", 1, &[]).is_err());
    }
}
