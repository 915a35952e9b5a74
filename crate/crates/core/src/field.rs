//! Phase-space vector fields `X = (X_q, X_p)`, their Jacobian blocks, the
//! linearized operator `DO` along a trajectory and its symplectic adjoint.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::expr::{parse, BinaryOp, CompiledExpr, EvalError, Expr, Scalar, RESERVED_IDENTS};
use crate::phase::{PhasePoint, Trajectory};
use crate::qderiv::{
    extracted_scale_derivative, scale_derivative, EpsilonSweep, FnSignal, Mu, ScaleParams,
    DEFAULT_EXTRACTION_TOL,
};
use crate::quadrature::trapezoid;
use crate::signals::{SampledPath, UniformGrid};

/// Names of the phase variables, `q1..qd` then `p1..pd`.
pub fn phase_variable_names(d: usize) -> Vec<String> {
    (1..=d)
        .map(|i| format!("q{i}"))
        .chain((1..=d).map(|i| format!("p{i}")))
        .collect()
}

fn is_phase_like(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some('q' | 'p'))
        && !name[1..].is_empty()
        && name[1..].chars().all(|c| c.is_ascii_digit())
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Time-independent vector field on a `2d`-dimensional phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVectorField {
    d: usize,
    xq: Vec<Expr>,
    xp: Vec<Expr>,
    constants: BTreeMap<String, f64>,
    /// `X_q` then `X_p` components, constants folded in, slots `q.., p..`.
    programs: Vec<CompiledExpr>,
}

impl PhaseVectorField {
    pub fn new(d: usize, xq: Vec<Expr>, xp: Vec<Expr>, constants: BTreeMap<String, f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("field dimension must be positive"));
        }
        if xq.len() != d || xp.len() != d {
            return Err(Error::invalid(format!(
                "field of dimension {d} needs {d} Xq and {d} Xp components, got {} and {}",
                xq.len(),
                xp.len()
            )));
        }
        for (name, value) in &constants {
            Self::check_constant(name, *value)?;
        }
        let names = phase_variable_names(d);
        let slots: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut programs = Vec::with_capacity(2 * d);
        for (label, e) in component_labels(d).iter().zip(xq.iter().chain(&xp)) {
            for var in e.variables() {
                if !slots.contains(&var.as_str()) && !constants.contains_key(&var) {
                    let why = if var == "t" {
                        "fields must be time-independent".to_string()
                    } else {
                        format!("expected q1..q{d}, p1..p{d} or a declared constant")
                    };
                    return Err(Error::invalid(format!("{label} references `{var}`: {why}")));
                }
            }
            programs.push(CompiledExpr::new(&e.substitute(&constants), &slots)?);
        }
        Ok(Self {
            d,
            xq,
            xp,
            constants,
            programs,
        })
    }

    fn check_constant(name: &str, value: f64) -> Result<()> {
        if !is_identifier(name) || RESERVED_IDENTS.contains(&name) || is_phase_like(name) {
            return Err(Error::invalid(format!("`{name}` cannot be used as a constant name")));
        }
        if !value.is_finite() {
            return Err(Error::invalid(format!("constant `{name}` is not finite")));
        }
        Ok(())
    }

    /// Parses each component from text.
    pub fn from_strs(d: usize, xq: &[&str], xp: &[&str], constants: &[(&str, f64)]) -> Result<Self> {
        let parse_all =
            |v: &[&str]| v.iter().map(|s| parse(s).map_err(Error::from)).collect::<Result<Vec<_>>>();
        Self::new(
            d,
            parse_all(xq)?,
            parse_all(xp)?,
            constants.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        )
    }

    /// `X_q = αq + βp`, `X_p = γq + δp` in one dimension.
    pub fn linear(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Self {
        Self::from_strs(
            1,
            &["alpha*q1 + beta*p1"],
            &["gamma*q1 + delta*p1"],
            &[("alpha", alpha), ("beta", beta), ("gamma", gamma), ("delta", delta)],
        )
        .expect("well-formed linear field")
    }

    /// The zero field in dimension `d`.
    pub fn zero(d: usize) -> Self {
        Self::new(d, vec![Expr::real(0.0); d], vec![Expr::real(0.0); d], BTreeMap::new())
            .expect("well-formed zero field")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn xq(&self) -> &[Expr] {
        &self.xq
    }

    pub fn xp(&self) -> &[Expr] {
        &self.xp
    }

    pub fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }

    /// `k X`.
    pub fn scaled(&self, k: f64) -> Self {
        let scale = |v: &[Expr]| {
            v.iter()
                .map(|e| Expr::binary(BinaryOp::Mul, Expr::real(k), e.clone()))
                .collect()
        };
        Self::new(self.d, scale(&self.xq), scale(&self.xp), self.constants.clone())
            .expect("scaling preserves well-formedness")
    }

    /// True when `X_q` depends on `p` only and `X_p` on `q` only.
    pub fn is_separable(&self) -> bool {
        let d = self.d;
        (0..d).all(|i| (0..d).all(|j| self.programs[i].ignores_slot(j)))
            && (0..d).all(|i| (d..2 * d).all(|j| self.programs[d + i].ignores_slot(j)))
    }

    fn check_point(&self, z: &PhasePoint) -> Result<()> {
        if z.dim() != self.d {
            return Err(Error::invalid(format!(
                "point has dimension {}, field has {}",
                z.dim(),
                self.d
            )));
        }
        Ok(())
    }

    fn at(z: &PhasePoint, source: EvalError) -> Error {
        Error::AtPoint {
            point: z.to_string(),
            source,
        }
    }

    /// `(X_q(z), X_p(z))`.
    pub fn eval(&self, z: &PhasePoint) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        self.check_point(z)?;
        let out = self.eval_flat(&z.flat()).map_err(|e| Self::at(z, e))?;
        let (q, p) = out.split_at(self.d);
        Ok((q.to_vec(), p.to_vec()))
    }

    /// All `2d` components over any scalar type; `inputs` is `[q.., p..]`.
    pub fn eval_flat<S: Scalar>(&self, inputs: &[S]) -> Result<Vec<S>, EvalError> {
        self.programs.iter().map(|p| p.eval_scalar(inputs)).collect()
    }

    /// Exact partial derivatives at `z`.
    pub fn jacobian(&self, z: &PhasePoint) -> Result<JacobianBlocks> {
        self.check_point(z)?;
        let d = self.d;
        let inputs = z.flat();
        let mut full = DMatrix::zeros(2 * d, 2 * d);
        for (row, program) in self.programs.iter().enumerate() {
            let (_, partials) = program.gradient(&inputs).map_err(|e| Self::at(z, e))?;
            for (col, v) in partials.into_iter().enumerate() {
                full[(row, col)] = v;
            }
        }
        Ok(JacobianBlocks {
            dxq_dq: full.view((0, 0), (d, d)).into_owned(),
            dxq_dp: full.view((0, d), (d, d)).into_owned(),
            dxp_dq: full.view((d, 0), (d, d)).into_owned(),
            dxp_dp: full.view((d, d), (d, d)).into_owned(),
        })
    }
}

fn component_labels(d: usize) -> Vec<String> {
    (1..=d)
        .map(|i| format!("Xq{i}"))
        .chain((1..=d).map(|i| format!("Xp{i}")))
        .collect()
}

impl fmt::Display for PhaseVectorField {
    /// Field-file text.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "d = {}", self.d)?;
        for (name, value) in &self.constants {
            writeln!(f, "const {name} = {value:?}")?;
        }
        for (label, e) in component_labels(self.d).iter().zip(self.xq.iter().chain(&self.xp)) {
            writeln!(f, "{label} = {e}")?;
        }
        Ok(())
    }
}

impl Serialize for PhaseVectorField {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let text = |v: &[Expr]| v.iter().map(ToString::to_string).collect::<Vec<_>>();
        let mut st = s.serialize_struct("PhaseVectorField", 4)?;
        st.serialize_field("d", &self.d)?;
        st.serialize_field("constants", &self.constants)?;
        st.serialize_field("xq", &text(&self.xq))?;
        st.serialize_field("xp", &text(&self.xp))?;
        st.end()
    }
}

impl FromStr for PhaseVectorField {
    type Err = Error;

    /// Field-file format: `key = value` lines with `#` comments, keys
    /// `d`, `const <name>`, `Xq<i>`, `Xp<i>`.
    fn from_str(text: &str) -> Result<Self> {
        let fail = |line: usize, message: String| Error::FieldFile { line, message };
        let mut d: Option<(usize, usize)> = None;
        let mut constants: BTreeMap<String, f64> = BTreeMap::new();
        let mut components: BTreeMap<(char, usize), (usize, Expr)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| fail(line, "expected `key = value`".into()))?;
            let key = key.trim();
            let value = value.trim();
            if key == "d" {
                if d.is_some() {
                    return Err(fail(line, "duplicate `d`".into()));
                }
                let n = value
                    .parse::<usize>()
                    .ok()
                    .filter(|n| *n > 0)
                    .ok_or_else(|| fail(line, format!("`d` must be a positive integer, got `{value}`")))?;
                d = Some((n, line));
            } else if let Some(name) = key.strip_prefix("const ") {
                let name = name.trim();
                let v = value
                    .parse::<f64>()
                    .map_err(|_| fail(line, format!("constant `{name}` needs a real value, got `{value}`")))?;
                Self::check_constant(name, v).map_err(|e| fail(line, e.to_string()))?;
                if constants.insert(name.to_string(), v).is_some() {
                    return Err(fail(line, format!("duplicate constant `{name}`")));
                }
            } else if let Some((kind, index)) = component_key(key) {
                let e = parse(value).map_err(|e| fail(line, e.to_string()))?;
                if components.insert((kind, index), (line, e)).is_some() {
                    return Err(fail(line, format!("duplicate `{key}`")));
                }
            } else {
                return Err(fail(line, format!("unknown key `{key}`")));
            }
        }
        let (d, d_line) = d.ok_or_else(|| fail(0, "missing `d`".into()))?;
        if let Some(((kind, index), (line, _))) = components.iter().find(|((_, i), _)| *i == 0 || *i > d) {
            return Err(fail(*line, format!("X{kind}{index} is out of range for d = {d}")));
        }
        let mut take = |kind: char| -> Result<Vec<Expr>> {
            (1..=d)
                .map(|i| {
                    components
                        .remove(&(kind, i))
                        .map(|(_, e)| e)
                        .ok_or_else(|| fail(d_line, format!("missing X{kind}{i}")))
                })
                .collect()
        };
        let xq = take('q')?;
        let xp = take('p')?;
        let line_of = |label: &str| {
            text.lines()
                .position(|l| l.split('=').next().map(str::trim) == Some(label))
                .map_or(0, |i| i + 1)
        };
        Self::new(d, xq, xp, constants).map_err(|e| match e {
            Error::InvalidArgument(msg) => {
                let label = msg.split_whitespace().next().unwrap_or("");
                fail(line_of(label), msg)
            }
            other => other,
        })
    }
}

fn component_key(key: &str) -> Option<(char, usize)> {
    let rest = key.strip_prefix('X')?;
    let kind = rest.chars().next().filter(|c| *c == 'q' || *c == 'p')?;
    let index = rest[1..].parse::<usize>().ok()?;
    Some((kind, index))
}

/// Jacobian blocks of `field` at `z`; same as [`PhaseVectorField::jacobian`].
pub fn jacobian_blocks(field: &PhaseVectorField, z: &PhasePoint) -> Result<JacobianBlocks> {
    field.jacobian(z)
}

/// The four `d × d` blocks of the Jacobian of `X`. Entry `(i, j)` of
/// `dxq_dq` is `∂X_q^i / ∂q_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    pub dxq_dq: DMatrix<Complex64>,
    pub dxq_dp: DMatrix<Complex64>,
    pub dxp_dq: DMatrix<Complex64>,
    pub dxp_dp: DMatrix<Complex64>,
}

fn max_entry(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl JacobianBlocks {
    pub fn zeros(d: usize) -> Self {
        let z = DMatrix::zeros(d, d);
        Self {
            dxq_dq: z.clone(),
            dxq_dp: z.clone(),
            dxp_dq: z.clone(),
            dxp_dp: z,
        }
    }

    pub fn dim(&self) -> usize {
        self.dxq_dq.nrows()
    }

    /// Largest entry of `∂X_q/∂q + (∂X_p/∂p)ᵀ`.
    pub fn hc1_defect(&self) -> f64 {
        max_entry(&(&self.dxq_dq + self.dxp_dp.transpose()))
    }

    /// Largest entry of the antisymmetric parts of `∂X_q/∂p` and `∂X_p/∂q`.
    pub fn hc2_defect(&self) -> f64 {
        max_entry(&(&self.dxq_dp - self.dxq_dp.transpose()))
            .max(max_entry(&(&self.dxp_dq - self.dxp_dq.transpose())))
    }

    /// Largest entry over all four blocks.
    pub fn max_abs(&self) -> f64 {
        [&self.dxq_dq, &self.dxq_dp, &self.dxp_dq, &self.dxp_dp]
            .into_iter()
            .map(max_entry)
            .fold(0.0, f64::max)
    }
}

type Components = (Vec<Complex64>, Vec<Complex64>);

/// `DO` (or `DO*` when `adjoint`) at one time, given the direction values
/// and their time derivatives.
fn operator_at(
    blocks: &JacobianBlocks,
    u: &[Complex64],
    v: &[Complex64],
    du: &[Complex64],
    dv: &[Complex64],
    adjoint: bool,
) -> Components {
    let u = DVector::from_column_slice(u);
    let v = DVector::from_column_slice(v);
    let du = DVector::from_column_slice(du);
    let dv = DVector::from_column_slice(dv);
    let JacobianBlocks {
        dxq_dq: a,
        dxq_dp: b,
        dxp_dq: c,
        dxp_dp: d,
    } = blocks;
    let (first, second) = if adjoint {
        (
            du + d.transpose() * &u - b.transpose() * &v,
            dv - c.transpose() * &u + a.transpose() * &v,
        )
    } else {
        (du - a * &u - b * &v, dv - c * &u - d * &v)
    };
    (first.iter().copied().collect(), second.iter().copied().collect())
}

/// A pair of `d`-component paths on a shared grid, e.g. `(δq, δp)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePathPair {
    pub q: Vec<SampledPath>,
    pub p: Vec<SampledPath>,
}

impl PhasePathPair {
    pub fn new(q: Vec<SampledPath>, p: Vec<SampledPath>) -> Result<Self> {
        if q.is_empty() || q.len() != p.len() {
            return Err(Error::invalid("path pair needs matching nonempty components"));
        }
        let grid = *q[0].grid();
        if q.iter().chain(&p).any(|c| !c.grid().same_as(&grid)) {
            return Err(Error::GridMismatch("path pair components use different grids".into()));
        }
        Ok(Self { q, p })
    }

    pub fn grid(&self) -> &UniformGrid {
        self.q[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn scaled(&self, k: Complex64) -> Self {
        Self {
            q: self.q.iter().map(|c| c.scaled(k)).collect(),
            p: self.p.iter().map(|c| c.scaled(k)).collect(),
        }
    }

    fn from_rows(grid: UniformGrid, rows: Vec<Components>) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.0.len());
        let column = |i: usize, second: bool| {
            SampledPath::new(
                grid,
                rows.iter().map(|r| if second { r.1[i] } else { r.0[i] }).collect(),
            )
        };
        Self::new(
            (0..d).map(|i| column(i, false)).collect::<Result<_>>()?,
            (0..d).map(|i| column(i, true)).collect::<Result<_>>()?,
        )
    }
}

/// Test directions `(u, v)` vanishing at both ends of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionPair(PhasePathPair);

impl DirectionPair {
    pub fn new(u: Vec<SampledPath>, v: Vec<SampledPath>) -> Result<Self> {
        let pair = PhasePathPair::new(u, v)?;
        let zero = Complex64::new(0.0, 0.0);
        for c in pair.q.iter().chain(&pair.p) {
            let vals = c.values();
            if vals[0] != zero || vals[vals.len() - 1] != zero {
                return Err(Error::invalid("direction components must vanish at both endpoints"));
            }
        }
        Ok(Self(pair))
    }

    /// Random sine series for every component; see [`SineSeries::random`].
    pub fn random(grid: UniformGrid, d: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || {
            let s = SineSeries::random(grid.start(), grid.end(), SineSeries::DEFAULT_TERMS, rng);
            s.sample(&grid)
        };
        let u = (0..d).map(|_| draw()).collect();
        let v = (0..d).map(|_| draw()).collect();
        Self::new(u, v).expect("sine series vanish at the endpoints")
    }

    pub fn u(&self) -> &[SampledPath] {
        &self.0.q
    }

    pub fn v(&self) -> &[SampledPath] {
        &self.0.p
    }

    pub fn as_pair(&self) -> &PhasePathPair {
        &self.0
    }

    pub fn grid(&self) -> &UniformGrid {
        self.0.grid()
    }
}

/// `Σ_k c_k sin(kπ(t - a)/(b - a))`, zero at `a` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SineSeries {
    a: f64,
    b: f64,
    coeffs: Vec<f64>,
}

impl SineSeries {
    pub const DEFAULT_TERMS: usize = 8;

    pub fn new(a: f64, b: f64, coeffs: Vec<f64>) -> Self {
        Self { a, b, coeffs }
    }

    /// Coefficients drawn uniformly from `[-1, 1]`.
    pub fn random(a: f64, b: f64, terms: usize, rng: &mut impl Rng) -> Self {
        Self::new(a, b, (0..terms).map(|_| rng.gen_range(-1.0..=1.0)).collect())
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t == self.a || t == self.b {
            return 0.0;
        }
        let x = std::f64::consts::PI * (t - self.a) / (self.b - self.a);
        // sin((k+1)x) = 2 cos(x) sin(kx) - sin((k-1)x)
        let (s1, c1) = x.sin_cos();
        let (mut prev, mut cur) = (0.0, s1);
        let mut sum = 0.0;
        for c in &self.coeffs {
            sum += c * cur;
            (prev, cur) = (cur, 2.0 * c1 * cur - prev);
        }
        sum
    }

    pub fn sample(&self, grid: &UniformGrid) -> SampledPath {
        SampledPath::sample_real(|t| self.eval(t), grid.start(), grid.end(), grid.len())
            .expect("sine series are finite")
    }

    fn signal(&self) -> FnSignal<impl Fn(f64) -> Complex64 + Sync + '_> {
        FnSignal::unbounded(move |t| Complex64::new(self.eval(t), 0.0))
    }
}

fn blocks_along(field: &PhaseVectorField, traj: &Trajectory, nodes: std::ops::Range<usize>) -> Result<Vec<JacobianBlocks>> {
    if traj.dim() != field.dim() {
        return Err(Error::invalid(format!(
            "trajectory has dimension {}, field has {}",
            traj.dim(),
            field.dim()
        )));
    }
    traj.states()[nodes].par_iter().map(|z| field.jacobian(z)).collect()
}

fn apply(
    field: &PhaseVectorField,
    traj: &Trajectory,
    dir: &PhasePathPair,
    sp: ScaleParams,
    adjoint: bool,
) -> Result<PhasePathPair> {
    let grid = *traj.grid();
    if !dir.grid().same_as(&grid) {
        return Err(Error::GridMismatch("directions and trajectory use different grids".into()));
    }
    if dir.dim() != field.dim() {
        return Err(Error::invalid("direction dimension does not match the field"));
    }
    let m = grid
        .steps_for(sp.epsilon)
        .ok_or_else(|| Error::NotGridAligned(format!("epsilon = {}", sp.epsilon)))?;
    let window = grid.shrink(m)?;
    let blocks = blocks_along(field, traj, m..grid.len() - m)?;
    let rows = blocks
        .par_iter()
        .enumerate()
        .map(|(j, b)| {
            let k = m + j;
            let t = grid.node(k);
            let value = |c: &SampledPath| c.values()[k];
            let deriv = |c: &SampledPath| scale_derivative(c, t, sp);
            let u: Vec<_> = dir.q.iter().map(value).collect();
            let v: Vec<_> = dir.p.iter().map(value).collect();
            let du = dir.q.iter().map(deriv).collect::<Result<Vec<_>>>()?;
            let dv = dir.p.iter().map(deriv).collect::<Result<Vec<_>>>()?;
            Ok(operator_at(b, &u, &v, &du, &dv, adjoint))
        })
        .collect::<Result<Vec<_>>>()?;
    PhasePathPair::from_rows(window, rows)
}

/// `(□u/□t - A u - B v, □v/□t - C u - D v)` on the interior window
/// `[a + ε, b - ε]`, with `A..D` the Jacobian blocks along `traj`.
pub fn frechet_apply(
    field: &PhaseVectorField,
    traj: &Trajectory,
    dir: &DirectionPair,
    sp: ScaleParams,
) -> Result<PhasePathPair> {
    apply(field, traj, dir.as_pair(), sp, false)
}

/// `(□w/□t + Dᵀw - Bᵀx, □x/□t - Cᵀw + Aᵀx)` on the interior window.
pub fn adjoint_apply(
    field: &PhaseVectorField,
    traj: &Trajectory,
    dir: &DirectionPair,
    sp: ScaleParams,
) -> Result<PhasePathPair> {
    apply(field, traj, dir.as_pair(), sp, true)
}

/// `∫ ⟨F, J G⟩ dt = ∫ (F_q·G_p - F_p·G_q) dt` by the trapezoid rule.
/// The pairing is bilinear; nothing is conjugated.
pub fn symplectic_inner(f: &PhasePathPair, g: &PhasePathPair) -> Result<Complex64> {
    if !f.grid().same_as(g.grid()) || f.dim() != g.dim() {
        return Err(Error::GridMismatch("symplectic product of paths on different grids".into()));
    }
    let n = f.grid().len();
    let pointwise: Vec<Complex64> = (0..n)
        .map(|k| {
            (0..f.dim())
                .map(|i| f.q[i].values()[k] * g.p[i].values()[k] - f.p[i].values()[k] * g.q[i].values()[k])
                .sum()
        })
        .collect();
    Ok(trapezoid(&pointwise, f.grid().step()))
}

/// Settings for [`self_adjointness_residual`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjointCheck {
    pub trials: usize,
    pub seed: u64,
    pub sweep: EpsilonSweep,
    pub mu: Mu,
    pub extraction_tol: f64,
}

impl Default for AdjointCheck {
    fn default() -> Self {
        Self {
            trials: 16,
            seed: 0,
            sweep: EpsilonSweep::default(),
            mu: Mu::One,
            extraction_tol: DEFAULT_EXTRACTION_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfAdjointnessReport {
    /// `max |⟨DO*(w,x) - DO(w,x), (u,v)⟩_J|` over trials, extracted regime.
    pub residual: f64,
    /// `max |⟨DO(u,v),(w,x)⟩_J - ⟨DO*(w,x),(u,v)⟩_J|`, extracted regime.
    /// Zero up to quadrature error for every field.
    pub adjoint_identity_extracted: f64,
    /// The same pairing at the single scale `fixed_epsilon`.
    pub adjoint_identity_fixed: f64,
    pub fixed_epsilon: f64,
    pub trials: usize,
    pub seed: u64,
    pub window_start: f64,
    pub window_end: f64,
    /// Extractions of direction derivatives that did not converge.
    pub nonconverged: usize,
}

struct TrialPaths {
    values: Vec<Vec<Complex64>>,
    extracted: Vec<Vec<Complex64>>,
    fixed: Vec<Vec<Complex64>>,
    nonconverged: usize,
}

/// Compares `DO` with its symplectic adjoint on random sine-series
/// directions along `traj`.
///
/// Direction derivatives are extracted analytically per node, so the
/// pairings integrate over the whole grid. The gating `residual` pairs
/// `(DO* - DO)(w, x)` with `(u, v)`; for a Hamiltonian field the
/// derivative parts cancel and the algebraic parts vanish by HC1/HC2.
pub fn self_adjointness_residual(
    field: &PhaseVectorField,
    traj: &Trajectory,
    opts: &AdjointCheck,
) -> Result<SelfAdjointnessReport> {
    if opts.trials == 0 {
        return Err(Error::invalid("self-adjointness check needs at least one trial"));
    }
    let grid = *traj.grid();
    let d = field.dim();
    let blocks = blocks_along(field, traj, 0..grid.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // Four d-component directions per trial, in the order u, v, w, x.
    let series: Vec<Vec<SineSeries>> = (0..opts.trials)
        .map(|_| {
            (0..4 * d)
                .map(|_| SineSeries::random(grid.start(), grid.end(), SineSeries::DEFAULT_TERMS, &mut rng))
                .collect()
        })
        .collect();
    let fixed_sp = ScaleParams::new(opts.sweep.max(), opts.mu)?;

    let per_trial = series
        .par_iter()
        .map(|trial| {
            let paths = sample_trial(trial, &grid, opts, fixed_sp)?;
            let pairs = |derivs: &Vec<Vec<Complex64>>| -> Result<(f64, f64)> {
                let comp = |block: usize, i: usize| block * d + i;
                let mut do_uv = Vec::with_capacity(grid.len());
                let mut do_wx = Vec::with_capacity(grid.len());
                let mut ad_wx = Vec::with_capacity(grid.len());
                for (k, b) in blocks.iter().enumerate() {
                    let pick = |src: &Vec<Vec<Complex64>>, block: usize| -> Vec<Complex64> {
                        (0..d).map(|i| src[comp(block, i)][k]).collect()
                    };
                    let (u, v, w, x) = (
                        pick(&paths.values, 0),
                        pick(&paths.values, 1),
                        pick(&paths.values, 2),
                        pick(&paths.values, 3),
                    );
                    let (du, dv, dw, dx) = (pick(derivs, 0), pick(derivs, 1), pick(derivs, 2), pick(derivs, 3));
                    do_uv.push(operator_at(b, &u, &v, &du, &dv, false));
                    do_wx.push(operator_at(b, &w, &x, &dw, &dx, false));
                    ad_wx.push(operator_at(b, &w, &x, &dw, &dx, true));
                }
                let uv = pair_of(&grid, &paths.values, 0, d)?;
                let wx = pair_of(&grid, &paths.values, 2, d)?;
                let do_uv = PhasePathPair::from_rows(grid, do_uv)?;
                let do_wx = PhasePathPair::from_rows(grid, do_wx)?;
                let ad_wx = PhasePathPair::from_rows(grid, ad_wx)?;
                let gap = symplectic_inner(&ad_wx, &uv)? - symplectic_inner(&do_wx, &uv)?;
                let identity = symplectic_inner(&do_uv, &wx)? - symplectic_inner(&ad_wx, &uv)?;
                Ok((gap.norm(), identity.norm()))
            };
            let (gap, identity) = pairs(&paths.extracted)?;
            let (_, identity_fixed) = pairs(&paths.fixed)?;
            Ok((gap, identity, identity_fixed, paths.nonconverged))
        })
        .collect::<Result<Vec<_>>>()?;

    let max = |f: fn(&(f64, f64, f64, usize)) -> f64| per_trial.iter().map(f).fold(0.0, f64::max);
    Ok(SelfAdjointnessReport {
        residual: max(|r| r.0),
        adjoint_identity_extracted: max(|r| r.1),
        adjoint_identity_fixed: max(|r| r.2),
        fixed_epsilon: fixed_sp.epsilon,
        trials: opts.trials,
        seed: opts.seed,
        window_start: grid.start(),
        window_end: grid.end(),
        nonconverged: per_trial.iter().map(|r| r.3).sum(),
    })
}

fn sample_trial(
    trial: &[SineSeries],
    grid: &UniformGrid,
    opts: &AdjointCheck,
    fixed_sp: ScaleParams,
) -> Result<TrialPaths> {
    let mut out = TrialPaths {
        values: Vec::with_capacity(trial.len()),
        extracted: Vec::with_capacity(trial.len()),
        fixed: Vec::with_capacity(trial.len()),
        nonconverged: 0,
    };
    for s in trial {
        let signal = s.signal();
        let mut extracted = Vec::with_capacity(grid.len());
        let mut fixed = Vec::with_capacity(grid.len());
        for t in grid.nodes() {
            let r = extracted_scale_derivative(&signal, t, &opts.sweep, opts.mu, opts.extraction_tol)?;
            if !r.converged {
                out.nonconverged += 1;
            }
            extracted.push(r.value);
            fixed.push(scale_derivative(&signal, t, fixed_sp)?);
        }
        out.values.push(grid.nodes().map(|t| Complex64::new(s.eval(t), 0.0)).collect());
        out.extracted.push(extracted);
        out.fixed.push(fixed);
    }
    Ok(out)
}

fn pair_of(grid: &UniformGrid, values: &[Vec<Complex64>], first_block: usize, d: usize) -> Result<PhasePathPair> {
    let path = |idx: usize| SampledPath::new(*grid, values[idx].clone());
    PhasePathPair::new(
        (0..d).map(|i| path(first_block * d + i)).collect::<Result<_>>()?,
        (0..d).map(|i| path((first_block + 1) * d + i)).collect::<Result<_>>()?,
    )
}
