//! Uniformly sampled paths, Weierstrass test signals and Hölder exponent
//! estimation.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// Relative tolerance (in grid steps) for deciding that a time or a scale
/// sits on the grid.
const ALIGN_TOL: f64 = 1e-9;

/// Uniform grid with `n` nodes on `[a, b]`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformGrid {
    a: f64,
    b: f64,
    n: usize,
}

impl UniformGrid {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::invalid(format!("grid needs a < b, got [{a}, {b}]")));
        }
        if n < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 nodes, got {n}")));
        }
        Ok(Self { a, b, n })
    }

    pub fn start(&self) -> f64 {
        self.a
    }

    pub fn end(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.b - self.a) / (self.n - 1) as f64
    }

    /// Time of node `k`; the last node is `b` exactly.
    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.n {
            self.b
        } else {
            self.a + k as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|k| self.node(k))
    }

    /// Index of the node at time `t`, if `t` is a node.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let h = self.step();
        let x = (t - self.a) / h;
        let k = x.round();
        if k < 0.0 || k > (self.n - 1) as f64 || (x - k).abs() > ALIGN_TOL * x.abs().max(1.0) {
            return None;
        }
        Some(k as usize)
    }

    /// Number of grid steps spanned by `epsilon`, if it is a positive
    /// integer multiple of the step.
    pub fn steps_for(&self, epsilon: f64) -> Option<usize> {
        let x = epsilon / self.step();
        let m = x.round();
        if m < 1.0 || (x - m).abs() > ALIGN_TOL * x {
            return None;
        }
        Some(m as usize)
    }

    /// Sub-grid obtained by dropping `m` nodes at each end.
    pub fn shrink(&self, m: usize) -> Result<Self> {
        if 2 * m + 2 > self.n {
            return Err(Error::EmptyWindow);
        }
        Ok(Self {
            a: self.node(m),
            b: self.node(self.n - 1 - m),
            n: self.n - 2 * m,
        })
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.a == other.a && self.b == other.b && self.n == other.n
    }
}

/// Complex samples of a function on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    grid: UniformGrid,
    values: Vec<Complex64>,
}

impl SampledPath {
    pub fn new(grid: UniformGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite(grid.node(k)));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at `a + k h`, `h = (b - a)/(n - 1)`.
    pub fn sample(f: impl Fn(f64) -> Complex64, a: f64, b: f64, n: usize) -> Result<Self> {
        let grid = UniformGrid::new(a, b, n)?;
        Self::new(grid, grid.nodes().map(f).collect())
    }

    pub fn sample_real(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> Result<Self> {
        Self::sample(|t| Complex64::new(f(t), 0.0), a, b, n)
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, k: Complex64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }

    /// Writes `t,re,im` rows, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,re,im")?;
        for (t, v) in self.grid.nodes().zip(&self.values) {
            writeln!(out, "{},{},{}", fmt_f64(t), fmt_f64(v.re), fmt_f64(v.im))?;
        }
        Ok(())
    }

    /// Reads the format written by [`SampledPath::write_csv`]. The `im`
    /// column is optional. Times must form a uniform grid.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::invalid(e.to_string()))?
            .unwrap_or_default();
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        if columns.len() < 2 || columns[0] != "t" || columns[1] != "re" {
            return Err(Error::invalid(format!("path CSV header must start with `t,re`, got `{header}`")));
        }
        for (row, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::invalid(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("path CSV row {}: {e}", row + 2)))?;
            if fields.len() != columns.len() {
                return Err(Error::invalid(format!("path CSV row {} has {} fields", row + 2, fields.len())));
            }
            times.push(fields[0]);
            values.push(Complex64::new(fields[1], fields.get(2).copied().unwrap_or(0.0)));
        }
        if times.len() < 2 {
            return Err(Error::invalid("path CSV needs at least two rows"));
        }
        let grid = UniformGrid::new(times[0], times[times.len() - 1], times.len())?;
        let h = grid.step();
        for (k, t) in times.iter().enumerate() {
            if (t - grid.node(k)).abs() > 1e-9 * h.max(t.abs() * 1e-7) {
                return Err(Error::NotGridAligned(format!("path CSV time {t} (row {})", k + 2)));
            }
        }
        Self::new(grid, values)
    }
}

/// Hölder exponent and constant, `|f(t) - f(s)| <= c |t - s|^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderParams {
    pub alpha: f64,
    pub c: f64,
}

impl HolderParams {
    pub fn new(alpha: f64, c: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("Hölder exponent must lie in (0, 1), got {alpha}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("Hölder constant must be positive, got {c}")));
        }
        Ok(Self { alpha, c })
    }

    pub fn bound(&self, dt: f64) -> f64 {
        self.c * dt.abs().powf(self.alpha)
    }
}

/// Weierstrass function `sum_k a^k cos(b^k pi t)`, continuous and nowhere
/// differentiable for `a b > 1`, with Hölder exponent `ln(1/a) / ln b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Weierstrass {
    amplitude: f64,
    frequency: u32,
    last_term: usize,
}

impl Weierstrass {
    /// Truncation point: the series stops at the first `K` with `a^K < 1e-16`
    /// whose tail bound `a^(K+1) / (1 - a)` is also below `TAIL_CUTOFF`.
    /// The second condition only matters for `a > 10/11`.
    pub const TERM_CUTOFF: f64 = 1e-16;
    pub const TAIL_CUTOFF: f64 = 1e-15;

    pub fn new(amplitude: f64, frequency: u32) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude < 1.0) {
            return Err(Error::invalid(format!("Weierstrass amplitude must lie in (0, 1), got {amplitude}")));
        }
        if frequency < 3 || frequency % 2 == 0 {
            return Err(Error::invalid(format!("Weierstrass frequency must be an odd integer >= 3, got {frequency}")));
        }
        if amplitude * frequency as f64 <= 1.0 {
            return Err(Error::invalid(format!(
                "Weierstrass parameters need a*b > 1, got {}",
                amplitude * frequency as f64
            )));
        }
        let mut last_term = 0;
        while amplitude.powi(last_term as i32) >= Self::TERM_CUTOFF
            || amplitude.powi(last_term as i32 + 1) / (1.0 - amplitude) >= Self::TAIL_CUTOFF
        {
            last_term += 1;
        }
        Ok(Self {
            amplitude,
            frequency,
            last_term,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn frequency(&self) -> u32 {
        self.frequency
    }

    /// Index `K` of the last retained term.
    pub fn last_term(&self) -> usize {
        self.last_term
    }

    pub fn holder_exponent(&self) -> f64 {
        (1.0 / self.amplitude).ln() / (self.frequency as f64).ln()
    }

    /// Bound on the discarded tail, `a^(K+1) / (1 - a)`.
    pub fn truncation_bound(&self) -> f64 {
        self.amplitude.powi(self.last_term as i32 + 1) / (1.0 - self.amplitude)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_terms(t, self.last_term)
    }

    /// Partial sum through term `last`.
    pub fn eval_terms(&self, t: f64, last: usize) -> f64 {
        // cos(b^k pi t) depends on b^k t modulo 2; reducing as we go keeps
        // the argument bounded for any number of terms.
        let b = self.frequency as f64;
        let mut phase = t.rem_euclid(2.0);
        let mut weight = 1.0;
        let mut sum = 0.0;
        for _ in 0..=last {
            sum += weight * (std::f64::consts::PI * phase).cos();
            weight *= self.amplitude;
            phase = (b * phase).rem_euclid(2.0);
        }
        sum
    }
}

/// Weierstrass function value; see [`Weierstrass`].
pub fn weierstrass(amplitude: f64, frequency: u32, t: f64) -> Result<f64> {
    Ok(Weierstrass::new(amplitude, frequency)?.eval(t))
}

/// Result of the increment regression in [`holder_exponent_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderEstimate {
    /// Regression slope clamped to `(0, 1]`.
    pub alpha: f64,
    /// `exp(intercept)`, so increments behave like `constant * dt^alpha`.
    pub constant: f64,
    pub raw_slope: f64,
    /// Set when the path is constant or Lipschitz-like at the sampled scales.
    pub smooth: bool,
}

/// Raw slopes at or above this value are reported as smooth.
pub const SMOOTH_SLOPE: f64 = 0.98;

/// Least-squares slope of `log max_k |x[k+l] - x[k]|` against `log(l h)` over
/// dyadic lags `l = 1, 2, 4, ..., n/8`.
pub fn holder_exponent_estimate(path: &SampledPath) -> Result<HolderEstimate> {
    let n = path.len();
    if n < 64 {
        return Err(Error::invalid(format!("Hölder estimate needs at least 64 samples, got {n}")));
    }
    let h = path.grid.step();
    let v = &path.values;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut lag = 1;
    while lag <= n / 8 {
        let max_inc = (0..n - lag)
            .map(|k| (v[k + lag] - v[k]).norm())
            .fold(0.0f64, f64::max);
        if max_inc > 0.0 {
            xs.push((lag as f64 * h).ln());
            ys.push(max_inc.ln());
        }
        lag *= 2;
    }
    if xs.len() < 2 {
        return Ok(HolderEstimate {
            alpha: 1.0,
            constant: 0.0,
            raw_slope: f64::INFINITY,
            smooth: true,
        });
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok(HolderEstimate {
        alpha: slope.clamp(f64::MIN_POSITIVE, 1.0),
        constant: intercept.exp(),
        raw_slope: slope,
        smooth: slope >= SMOOTH_SLOPE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_and_alignment() {
        let g = UniformGrid::new(0.0, 1.0, 5).unwrap();
        assert_eq!(g.step(), 0.25);
        assert_eq!(g.node(4), 1.0);
        assert_eq!(g.index_of(0.75), Some(3));
        assert_eq!(g.index_of(0.7), None);
        assert_eq!(g.index_of(1.25), None);
        assert_eq!(g.steps_for(0.5), Some(2));
        assert_eq!(g.steps_for(0.3), None);
        assert_eq!(g.steps_for(0.1), None);
        let w = g.shrink(1).unwrap();
        assert_eq!((w.start(), w.end(), w.len()), (0.25, 0.75, 3));
        assert!(g.shrink(2).is_err());
        assert!(UniformGrid::new(1.0, 1.0, 3).is_err());
        assert!(UniformGrid::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn sampling_linear_and_constant_functions() {
        let p = SampledPath::sample_real(|t| t, 0.0, 1.0, 3).unwrap();
        let re: Vec<f64> = p.values().iter().map(|v| v.re).collect();
        assert_eq!(re, vec![0.0, 0.5, 1.0]);
        let p = SampledPath::sample_real(|_| 1.0, 0.0, 1.0, 5).unwrap();
        assert!(p.values().iter().all(|v| *v == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn sampling_rejects_non_finite_values() {
        let err = SampledPath::sample_real(|t| 1.0 / (t - 0.5), 0.0, 1.0, 3).unwrap_err();
        assert!(matches!(err, Error::NonFinite(t) if t == 0.5));
    }

    #[test]
    fn sampling_is_exact_at_nodes() {
        let f = |t: f64| Complex64::new(t.sin() * 3.7, t.exp());
        let p = SampledPath::sample(f, -1.3, 2.9, 1001).unwrap();
        for (k, v) in p.values().iter().enumerate() {
            assert_eq!(*v, f(p.grid().node(k)));
        }
    }

    #[test]
    fn weierstrass_at_zero_is_geometric_sum() {
        let w = Weierstrass::new(0.5, 3).unwrap();
        let k = w.last_term() as i32;
        assert_eq!(k, 54);
        let expected = 2.0 * (1.0 - 0.5f64.powi(k + 1));
        assert!((w.eval(0.0) - expected).abs() < 1e-15);
        assert!((w.eval(0.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn weierstrass_parameters_are_validated() {
        assert!(Weierstrass::new(0.5, 4).is_err());
        assert!(Weierstrass::new(0.2, 3).is_err());
        assert!(Weierstrass::new(1.0, 3).is_err());
        assert!(Weierstrass::new(0.5, 1).is_err());
        assert!(weierstrass(0.5, 3, 0.25).is_ok());
    }

    #[test]
    fn weierstrass_truncation_bound() {
        for (a, b) in [(0.5, 3), (0.6, 5), (0.9, 7), (0.35, 3)] {
            let w = Weierstrass::new(a, b).unwrap();
            assert!(w.truncation_bound() < 1e-15, "a={a}");
            for t in [0.0, 0.1234, 0.5, 0.77] {
                let longer = w.eval_terms(t, w.last_term() + 200);
                assert!((longer - w.eval(t)).abs() <= w.truncation_bound() + 1e-15);
            }
        }
    }

    #[test]
    fn sampled_weierstrass_is_bounded() {
        let w = Weierstrass::new(0.5, 3).unwrap();
        let p = SampledPath::sample_real(|t| w.eval(t), 0.0, 1.0, 4097).unwrap();
        assert!(p.values().iter().all(|v| v.re.abs() <= 2.0 + 1e-15));
    }

    #[test]
    fn holder_estimate_of_smooth_and_constant_paths() {
        let p = SampledPath::sample_real(|t| t, 0.0, 1.0, 1025).unwrap();
        let e = holder_exponent_estimate(&p).unwrap();
        assert!((e.alpha - 1.0).abs() < 1e-12 && e.smooth);
        let p = SampledPath::sample_real(|_| 3.0, 0.0, 1.0, 1025).unwrap();
        let e = holder_exponent_estimate(&p).unwrap();
        assert_eq!(e.alpha, 1.0);
        assert!(e.smooth);
        let short = SampledPath::sample_real(|t| t, 0.0, 1.0, 63).unwrap();
        assert!(holder_exponent_estimate(&short).is_err());
    }

    #[test]
    fn holder_estimate_of_weierstrass() {
        let w = Weierstrass::new(0.5, 3).unwrap();
        let p = SampledPath::sample_real(|t| w.eval(t), 0.0, 1.0, 65537).unwrap();
        let e = holder_exponent_estimate(&p).unwrap();
        let exact = 2f64.ln() / 3f64.ln();
        assert!((e.alpha - exact).abs() < 0.05, "estimate {} vs {exact}", e.alpha);
        assert!(!e.smooth);
    }

    #[test]
    fn weierstrass_small_increment_obeys_fitted_bound() {
        let w = Weierstrass::new(0.9, 7).unwrap();
        let p = SampledPath::sample_real(|t| w.eval(t), 0.0, 1.0, 65537).unwrap();
        let e = holder_exponent_estimate(&p).unwrap();
        let fitted = HolderParams::new(e.alpha, e.constant).unwrap();
        for t in [0.1, 0.25, 0.3333, 0.5, 0.618, 0.9] {
            let inc = (w.eval(t + 1e-9) - w.eval(t)).abs();
            assert!(inc < fitted.bound(1e-9), "t={t}: {inc} vs {}", fitted.bound(1e-9));
        }
    }

    #[test]
    fn holder_estimate_is_scale_invariant() {
        let w = Weierstrass::new(0.6, 5).unwrap();
        let p = SampledPath::sample_real(|t| w.eval(t), 0.0, 1.0, 4097).unwrap();
        let base = holder_exponent_estimate(&p).unwrap().raw_slope;
        for k in [-3.0, 1e-6, 2.5, 1e8] {
            let s = holder_exponent_estimate(&p.scaled(Complex64::new(k, 0.0))).unwrap();
            assert!((s.raw_slope - base).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let p = SampledPath::sample(|t| Complex64::new(t.cos(), -t), 0.0, 2.0, 9).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,re,im\n0.0000000000000000e0,1.0000000000000000e0,"));
        let back = SampledPath::read_csv(&buf[..]).unwrap();
        assert_eq!(back, p);
    }
}
