//! Sided and scale derivatives at finite ε, the ε-mean, and numerical
//! extraction of ε → 0 limits.
//!
//! The extraction fits `value + slope·ε + curvature·ε²` to the four smallest
//! scales of a sweep. For a C³ function the scale derivative is
//! `f'(t) + iμ f''(t) ε/2 + O(ε²)`, so the fitted constant is the classical
//! derivative and the slope and curvature terms stay bounded. For a
//! nondifferentiable path the values blow up like `ε^(α-1)` and the fit is
//! flagged as non-converged. The result is a numerical extraction, not an
//! exact projection onto the regular part.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4x2, Matrix4x3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::quadrature::{trapezoid, GaussLegendre};
use crate::signals::SampledPath;

/// Default tolerance of [`extract`], relative to `max(1, |value|)`.
pub const DEFAULT_EXTRACTION_TOL: f64 = 1e-3;

/// Number of smallest scales used by [`extract`].
pub const EXTRACTION_POINTS: usize = 4;

/// The five admissible values of μ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mu {
    MinusOne,
    #[default]
    One,
    Zero,
    MinusI,
    I,
}

impl Mu {
    pub const ALL: [Mu; 5] = [Mu::MinusOne, Mu::One, Mu::Zero, Mu::MinusI, Mu::I];

    pub fn value(self) -> Complex64 {
        match self {
            Mu::MinusOne => Complex64::new(-1.0, 0.0),
            Mu::One => Complex64::new(1.0, 0.0),
            Mu::Zero => Complex64::new(0.0, 0.0),
            Mu::MinusI => Complex64::new(0.0, -1.0),
            Mu::I => Complex64::new(0.0, 1.0),
        }
    }

    pub fn negated(self) -> Mu {
        match self {
            Mu::MinusOne => Mu::One,
            Mu::One => Mu::MinusOne,
            Mu::Zero => Mu::Zero,
            Mu::MinusI => Mu::I,
            Mu::I => Mu::MinusI,
        }
    }
}

impl fmt::Display for Mu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mu::MinusOne => "-1",
            Mu::One => "1",
            Mu::Zero => "0",
            Mu::MinusI => "-i",
            Mu::I => "i",
        })
    }
}

impl FromStr for Mu {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "-1" => Mu::MinusOne,
            "1" | "+1" => Mu::One,
            "0" => Mu::Zero,
            "-i" => Mu::MinusI,
            "i" | "+i" => Mu::I,
            other => {
                return Err(Error::invalid(format!(
                    "mu must be one of -1, 1, 0, -i, i; got `{other}`"
                )))
            }
        })
    }
}

impl Serialize for Mu {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Direction of a one-sided difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleParams {
    pub epsilon: f64,
    pub mu: Mu,
}

impl ScaleParams {
    pub fn new(epsilon: f64, mu: Mu) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon, mu })
    }
}

/// Something that can be evaluated on a three-point stencil `t`, `t ± ε`.
pub trait Signal: Sync {
    /// Interval on which the signal may be evaluated.
    fn domain(&self) -> (f64, f64);

    /// Value at `t + k ε` for `k` in `{-1, 0, 1}`.
    fn shifted(&self, t: f64, epsilon: f64, k: i32) -> Result<Complex64>;
}

impl<S: Signal + ?Sized> Signal for &S {
    fn domain(&self) -> (f64, f64) {
        (**self).domain()
    }

    fn shifted(&self, t: f64, epsilon: f64, k: i32) -> Result<Complex64> {
        (**self).shifted(t, epsilon, k)
    }
}

/// A closure of time restricted to `[a, b]` (possibly unbounded).
#[derive(Clone, Copy)]
pub struct FnSignal<F> {
    f: F,
    a: f64,
    b: f64,
}

impl<F: Fn(f64) -> Complex64 + Sync> FnSignal<F> {
    pub fn new(f: F, a: f64, b: f64) -> Result<Self> {
        if a.is_nan() || b.is_nan() || a >= b {
            return Err(Error::invalid(format!("signal domain needs a < b, got [{a}, {b}]")));
        }
        Ok(Self { f, a, b })
    }

    pub fn unbounded(f: F) -> Self {
        Self {
            f,
            a: f64::NEG_INFINITY,
            b: f64::INFINITY,
        }
    }

    fn contains(&self, s: f64) -> bool {
        let slack = 1e-12 * s.abs().max(1.0);
        s >= self.a - slack && s <= self.b + slack
    }

    /// Value at `t`, checked against the domain and for finiteness.
    pub fn eval(&self, t: f64) -> Result<Complex64> {
        if !self.contains(t) {
            return Err(Error::OutOfDomain {
                t,
                epsilon: 0.0,
                a: self.a,
                b: self.b,
            });
        }
        let v = (self.f)(t);
        if v.re.is_finite() && v.im.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(t))
        }
    }

    fn call(&self, t: f64) -> Complex64 {
        (self.f)(t)
    }
}

/// Real-valued closure as a signal on `[a, b]`.
pub fn real_signal(
    f: impl Fn(f64) -> f64 + Sync,
    a: f64,
    b: f64,
) -> Result<FnSignal<impl Fn(f64) -> Complex64 + Sync>> {
    FnSignal::new(move |t| Complex64::new(f(t), 0.0), a, b)
}

impl<F: Fn(f64) -> Complex64 + Sync> Signal for FnSignal<F> {
    fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    fn shifted(&self, t: f64, epsilon: f64, k: i32) -> Result<Complex64> {
        let s = t + k as f64 * epsilon;
        if !self.contains(s) {
            return Err(Error::OutOfDomain {
                t,
                epsilon,
                a: self.a,
                b: self.b,
            });
        }
        self.eval(s)
    }
}

impl Signal for SampledPath {
    fn domain(&self) -> (f64, f64) {
        (self.grid().start(), self.grid().end())
    }

    fn shifted(&self, t: f64, epsilon: f64, k: i32) -> Result<Complex64> {
        let grid = self.grid();
        let node = grid
            .index_of(t)
            .ok_or_else(|| Error::NotGridAligned(format!("t = {t}")))?;
        let m = grid
            .steps_for(epsilon)
            .ok_or_else(|| Error::NotGridAligned(format!("epsilon = {epsilon}")))?;
        let target = node as i64 + k as i64 * m as i64;
        if target < 0 || target >= grid.len() as i64 {
            return Err(Error::OutOfDomain {
                t,
                epsilon,
                a: grid.start(),
                b: grid.end(),
            });
        }
        Ok(self.values()[target as usize])
    }
}

/// `(f(t+ε) - f(t))/ε` for [`Side::Plus`], `(f(t) - f(t-ε))/ε` for
/// [`Side::Minus`].
pub fn sided_derivative<S: Signal + ?Sized>(f: &S, t: f64, epsilon: f64, side: Side) -> Result<Complex64> {
    ScaleParams::new(epsilon, Mu::One)?;
    let here = f.shifted(t, epsilon, 0)?;
    Ok(match side {
        Side::Plus => (f.shifted(t, epsilon, 1)? - here) / epsilon,
        Side::Minus => (here - f.shifted(t, epsilon, -1)?) / epsilon,
    })
}

/// `½[(d⁺ + d⁻) + iμ(d⁺ - d⁻)]`. Complex-valued signals are handled by
/// linearity, which is the same as treating real and imaginary parts
/// separately.
pub fn scale_derivative<S: Signal + ?Sized>(f: &S, t: f64, sp: ScaleParams) -> Result<Complex64> {
    let plus = sided_derivative(f, t, sp.epsilon, Side::Plus)?;
    let minus = sided_derivative(f, t, sp.epsilon, Side::Minus)?;
    let i_mu = Complex64::new(0.0, 1.0) * sp.mu.value();
    Ok(0.5 * ((plus + minus) + i_mu * (plus - minus)))
}

/// `(σ/ε) ∫_t^{t+σε} f(s) ds` by 16-node Gauss–Legendre quadrature.
pub fn epsilon_mean<F: Fn(f64) -> Complex64 + Sync>(
    f: &FnSignal<F>,
    t: f64,
    epsilon: f64,
    side: Side,
) -> Result<Complex64> {
    ScaleParams::new(epsilon, Mu::One)?;
    let (lo, hi) = match side {
        Side::Plus => (t, t + epsilon),
        Side::Minus => (t - epsilon, t),
    };
    if !(f.contains(lo) && f.contains(hi)) {
        return Err(Error::OutOfDomain {
            t,
            epsilon,
            a: f.a,
            b: f.b,
        });
    }
    let integral = GaussLegendre::sixteen().integrate(lo, hi, |s| f.eval(s))?;
    Ok(integral / epsilon)
}

/// Strictly decreasing positive scales, at least [`EXTRACTION_POINTS`] long.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EpsilonSweep {
    epsilons: Vec<f64>,
}

impl EpsilonSweep {
    pub fn new(epsilons: Vec<f64>) -> Result<Self> {
        if epsilons.len() < EXTRACTION_POINTS {
            return Err(Error::invalid(format!(
                "epsilon sweep needs at least {EXTRACTION_POINTS} values, got {}",
                epsilons.len()
            )));
        }
        if epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::invalid("epsilon sweep values must be positive and finite"));
        }
        if epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("epsilon sweep must be strictly decreasing"));
        }
        Ok(Self { epsilons })
    }

    /// `start · ratio^k` for `k = 0..count`.
    pub fn geometric(start: f64, ratio: f64, count: usize) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::invalid(format!("sweep ratio must lie in (0, 1), got {ratio}")));
        }
        Self::new((0..count).map(|k| start * ratio.powi(k as i32)).collect())
    }

    /// Dyadic sweep of grid multiples: `coarsest·h, coarsest·h/2, ...`.
    /// `coarsest` must be divisible by `2^(count-1)`.
    pub fn dyadic_steps(step: f64, coarsest: usize, count: usize) -> Result<Self> {
        if count == 0 || coarsest % (1usize << (count - 1)) != 0 {
            return Err(Error::invalid(format!(
                "{coarsest} grid steps cannot be halved {} times",
                count.saturating_sub(1)
            )));
        }
        Self::new((0..count).map(|k| (coarsest >> k) as f64 * step).collect())
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.epsilons[0]
    }

    pub fn min(&self) -> f64 {
        self.epsilons[self.epsilons.len() - 1]
    }
}

impl Default for EpsilonSweep {
    /// `1e-2 · 2^-k`, `k = 0..8`.
    fn default() -> Self {
        Self::geometric(1e-2, 0.5, 8).expect("valid default sweep")
    }
}

impl FromStr for EpsilonSweep {
    type Err = Error;

    /// `geo:start,ratio,count` or a comma-separated list.
    fn from_str(s: &str) -> Result<Self> {
        let number = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number `{x}` in epsilon sweep")))
        };
        if let Some(rest) = s.strip_prefix("geo:") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::invalid("geometric sweep is `geo:start,ratio,count`"));
            }
            let count = parts[2]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad count `{}` in epsilon sweep", parts[2])))?;
            return Self::geometric(number(parts[0])?, number(parts[1])?, count);
        }
        Self::new(s.split(',').map(number).collect::<Result<_>>()?)
    }
}

/// Values of some ε-dependent quantity along a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonFamily {
    sweep: EpsilonSweep,
    values: Vec<Complex64>,
}

impl EpsilonFamily {
    pub fn new(epsilons: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        let sweep = EpsilonSweep::new(epsilons)?;
        Self::on_sweep(sweep, values)
    }

    pub fn on_sweep(sweep: EpsilonSweep, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != sweep.len() {
            return Err(Error::invalid(format!(
                "{} values for {} scales",
                values.len(),
                sweep.len()
            )));
        }
        Ok(Self { sweep, values })
    }

    /// Evaluates `f` at every scale of `sweep`.
    pub fn evaluate(sweep: &EpsilonSweep, f: impl FnMut(f64) -> Result<Complex64>) -> Result<Self> {
        let values = sweep.epsilons().iter().copied().map(f).collect::<Result<_>>()?;
        Self::on_sweep(sweep.clone(), values)
    }

    pub fn epsilons(&self) -> &[f64] {
        self.sweep.epsilons()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn sweep(&self) -> &EpsilonSweep {
        &self.sweep
    }
}

/// Outcome of [`extract`]. A non-converged `value` is still the fitted
/// constant but must not be treated as a limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionResult {
    pub value: Complex64,
    pub converged: bool,
    /// Largest absolute deviation of the family from the fitted model.
    pub fit_residual: f64,
    /// Coefficient of ε in the fit.
    pub divergent_slope: Complex64,
    /// Coefficient of ε² in the fit.
    pub curvature: Complex64,
}

impl Serialize for ExtractionResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Flat {
            method: &'static str,
            value_re: f64,
            value_im: f64,
            converged: bool,
            fit_residual: f64,
            divergent_slope_re: f64,
            divergent_slope_im: f64,
            curvature_re: f64,
            curvature_im: f64,
        }
        Flat {
            method: "numerical extraction",
            value_re: self.value.re,
            value_im: self.value.im,
            converged: self.converged,
            fit_residual: self.fit_residual,
            divergent_slope_re: self.divergent_slope.re,
            divergent_slope_im: self.divergent_slope.im,
            curvature_re: self.curvature.re,
            curvature_im: self.curvature.im,
        }
        .serialize(s)
    }
}

/// Least-squares fit of `value + slope·ε + curvature·ε²` over the four
/// smallest scales. Converged when the fit residual and the curvature
/// contribution at the smallest scale are both within
/// `tol · max(1, |value|)`. The slope is the divergent part being removed
/// and is not constrained.
pub fn extract(family: &EpsilonFamily, tol: f64) -> ExtractionResult {
    let n = family.values.len();
    let eps = &family.epsilons()[n - EXTRACTION_POINTS..];
    let vals = &family.values[n - EXTRACTION_POINTS..];
    let eps_min = eps[EXTRACTION_POINTS - 1];
    // Scaled abscissae keep the design matrix well conditioned.
    let s: Vec<f64> = eps.iter().map(|e| e / eps_min).collect();
    let design = Matrix4x3::from_fn(|r, c| s[r].powi(c as i32));
    let rhs = Matrix4x2::from_fn(|r, c| if c == 0 { vals[r].re } else { vals[r].im });
    let qr = design.qr();
    let coef = qr
        .r()
        .solve_upper_triangular(&(qr.q().transpose() * rhs))
        .expect("distinct scales give a full-rank design");
    let c = |k: usize| Complex64::new(coef[(k, 0)], coef[(k, 1)]);
    let (c0, c1, c2) = (c(0), c(1), c(2));
    let fit_residual = (0..EXTRACTION_POINTS)
        .map(|r| (vals[r] - (c0 + c1 * s[r] + c2 * s[r] * s[r])).norm())
        .fold(0.0, f64::max);
    let bound = tol * c0.norm().max(1.0);
    let converged = fit_residual.is_finite() && fit_residual <= bound && c2.norm() <= bound;
    ExtractionResult {
        value: c0,
        converged,
        fit_residual,
        divergent_slope: c1 / eps_min,
        curvature: c2 / (eps_min * eps_min),
    }
}

/// Scale derivatives of `f` at `t` across `sweep`.
pub fn scale_derivative_family<S: Signal + ?Sized>(
    f: &S,
    t: f64,
    sweep: &EpsilonSweep,
    mu: Mu,
) -> Result<EpsilonFamily> {
    EpsilonFamily::evaluate(sweep, |e| scale_derivative(f, t, ScaleParams::new(e, mu)?))
}

/// Extracted ε → 0 scale derivative of `f` at `t`.
pub fn extracted_scale_derivative<S: Signal + ?Sized>(
    f: &S,
    t: f64,
    sweep: &EpsilonSweep,
    mu: Mu,
    tol: f64,
) -> Result<ExtractionResult> {
    Ok(extract(&scale_derivative_family(f, t, sweep, mu)?, tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeibnizReport {
    /// Largest `|⟨□(fg)⟩ - ⟨□f⟩g - f⟨□g⟩|` over usable points.
    pub residual: f64,
    pub points_used: usize,
    /// Points where some extraction did not converge.
    pub excluded: usize,
}

fn product_signal<'s, F, G>(
    f: &'s FnSignal<F>,
    g: &'s FnSignal<G>,
) -> Result<FnSignal<impl Fn(f64) -> Complex64 + Sync + 's>>
where
    F: Fn(f64) -> Complex64 + Sync,
    G: Fn(f64) -> Complex64 + Sync,
{
    FnSignal::new(move |t| f.call(t) * g.call(t), f.a.max(g.a), f.b.min(g.b))
}

/// Defect of the Leibniz rule for extracted scale derivatives, maximized
/// over `grid`.
pub fn leibniz_residual<F, G>(
    f: &FnSignal<F>,
    g: &FnSignal<G>,
    grid: &[f64],
    sweep: &EpsilonSweep,
    mu: Mu,
    tol: f64,
) -> Result<LeibnizReport>
where
    F: Fn(f64) -> Complex64 + Sync,
    G: Fn(f64) -> Complex64 + Sync,
{
    let fg = product_signal(f, g)?;
    let per_point: Vec<Option<f64>> = grid
        .par_iter()
        .map(|&t| {
            let dfg = extracted_scale_derivative(&fg, t, sweep, mu, tol)?;
            let df = extracted_scale_derivative(f, t, sweep, mu, tol)?;
            let dg = extracted_scale_derivative(g, t, sweep, mu, tol)?;
            if !(dfg.converged && df.converged && dg.converged) {
                return Ok(None);
            }
            let defect = dfg.value - df.value * g.eval(t)? - f.eval(t)? * dg.value;
            Ok(Some(defect.norm()))
        })
        .collect::<Result<_>>()?;
    let excluded = per_point.iter().filter(|r| r.is_none()).count();
    let used: Vec<f64> = per_point.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::NoConvergedPoints { excluded });
    }
    Ok(LeibnizReport {
        residual: used.iter().copied().fold(0.0, f64::max),
        points_used: used.len(),
        excluded,
    })
}

/// The same defect at a single finite scale, without extraction.
pub fn leibniz_defect<F, G>(f: &FnSignal<F>, g: &FnSignal<G>, grid: &[f64], sp: ScaleParams) -> Result<f64>
where
    F: Fn(f64) -> Complex64 + Sync,
    G: Fn(f64) -> Complex64 + Sync,
{
    let fg = product_signal(f, g)?;
    let defects: Vec<f64> = grid
        .par_iter()
        .map(|&t| {
            let d = scale_derivative(&fg, t, sp)?
                - scale_derivative(f, t, sp)? * g.eval(t)?
                - f.eval(t)? * scale_derivative(g, t, sp)?;
            Ok(d.norm())
        })
        .collect::<Result<_>>()?;
    Ok(defects.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonValue {
    pub epsilon: f64,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FtcReport {
    /// `|⟨∫ □f⟩ - (f(b) - f(a))|`, or against the finest scale when the
    /// extraction did not converge.
    pub residual: f64,
    pub exact_re: f64,
    pub exact_im: f64,
    pub integral: ExtractionResult,
    pub integration_nodes: usize,
    pub per_epsilon: Vec<EpsilonValue>,
}

/// Integrates the scale derivative of `f` over `[a, b]` by the trapezoid
/// rule on `nodes` points for each scale, extracts the ε → 0 limit and
/// compares with `f(b) - f(a)`. Stencils reach `ε` beyond both ends.
pub fn ftc_residual<F: Fn(f64) -> Complex64 + Sync>(
    f: &FnSignal<F>,
    a: f64,
    b: f64,
    sweep: &EpsilonSweep,
    mu: Mu,
    nodes: usize,
    tol: f64,
) -> Result<FtcReport> {
    let grid = crate::signals::UniformGrid::new(a, b, nodes)?;
    let integrals: Vec<Complex64> = sweep
        .epsilons()
        .par_iter()
        .map(|&e| {
            let sp = ScaleParams::new(e, mu)?;
            let samples = grid
                .nodes()
                .map(|t| scale_derivative(f, t, sp))
                .collect::<Result<Vec<_>>>()?;
            Ok(trapezoid(&samples, grid.step()))
        })
        .collect::<Result<_>>()?;
    let family = EpsilonFamily::on_sweep(sweep.clone(), integrals.clone())?;
    let integral = extract(&family, tol);
    let exact = f.eval(b)? - f.eval(a)?;
    let estimate = if integral.converged {
        integral.value
    } else {
        integrals[integrals.len() - 1]
    };
    Ok(FtcReport {
        residual: (estimate - exact).norm(),
        exact_re: exact.re,
        exact_im: exact.im,
        integral,
        integration_nodes: nodes,
        per_epsilon: sweep
            .epsilons()
            .iter()
            .zip(&integrals)
            .map(|(&epsilon, v)| EpsilonValue {
                epsilon,
                re: v.re,
                im: v.im,
            })
            .collect(),
    })
}
