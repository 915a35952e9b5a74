//! Phase-space points and sampled trajectories.

use std::fmt;
use std::io::Write;

use num_complex::Complex64;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::signals::{SampledPath, UniformGrid};

/// `z = (q, p)` with complex coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<Complex64>,
    pub p: Vec<Complex64>,
}

impl PhasePoint {
    pub fn new(q: Vec<Complex64>, p: Vec<Complex64>) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(Error::invalid(format!(
                "phase point needs matching nonempty q and p, got {} and {}",
                q.len(),
                p.len()
            )));
        }
        Ok(Self { q, p })
    }

    pub fn real(q: &[f64], p: &[f64]) -> Result<Self> {
        let lift = |v: &[f64]| v.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        Self::new(lift(q), lift(p))
    }

    pub fn origin(d: usize) -> Self {
        Self {
            q: vec![Complex64::new(0.0, 0.0); d],
            p: vec![Complex64::new(0.0, 0.0); d],
        }
    }

    /// Splits `[q1..qd, p1..pd]`.
    pub fn from_flat(z: &[Complex64]) -> Result<Self> {
        if z.len() % 2 != 0 {
            return Err(Error::invalid(format!("phase vector has odd length {}", z.len())));
        }
        let d = z.len() / 2;
        Self::new(z[..d].to_vec(), z[d..].to_vec())
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `[q1..qd, p1..pd]`.
    pub fn flat(&self) -> Vec<Complex64> {
        self.q.iter().chain(&self.p).copied().collect()
    }

    pub fn is_origin(&self) -> bool {
        self.q.iter().chain(&self.p).all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn is_real(&self) -> bool {
        self.q.iter().chain(&self.p).all(|z| z.im == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest coordinate modulus.
    pub fn max_norm(&self) -> f64 {
        self.q.iter().chain(&self.p).map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            q: self.q.iter().map(|z| z * k).collect(),
            p: self.p.iter().map(|z| z * k).collect(),
        }
    }
}

impl fmt::Display for PhasePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[Complex64]| {
            v.iter()
                .map(|z| if z.im == 0.0 { format!("{}", z.re) } else { format!("{z}") })
                .collect::<Vec<_>>()
                .join(", ")
        };
        write!(f, "(q = [{}], p = [{}])", list(&self.q), list(&self.p))
    }
}

/// `{q, p}` real parts, plus `q_im, p_im` when any imaginary part is nonzero.
impl Serialize for PhasePoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let re = |v: &[Complex64]| v.iter().map(|z| z.re).collect::<Vec<_>>();
        let im = |v: &[Complex64]| v.iter().map(|z| z.im).collect::<Vec<_>>();
        let complex = !self.is_real();
        let mut st = s.serialize_struct("PhasePoint", if complex { 4 } else { 2 })?;
        st.serialize_field("q", &re(&self.q))?;
        st.serialize_field("p", &re(&self.p))?;
        if complex {
            st.serialize_field("q_im", &im(&self.q))?;
            st.serialize_field("p_im", &im(&self.p))?;
        }
        st.end()
    }
}

/// States of a phase-space curve on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: UniformGrid,
    states: Vec<PhasePoint>,
}

impl Trajectory {
    pub fn new(grid: UniformGrid, states: Vec<PhasePoint>) -> Result<Self> {
        if states.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} states for {} nodes",
                states.len(),
                grid.len()
            )));
        }
        let d = states[0].dim();
        if states.iter().any(|s| s.dim() != d) {
            return Err(Error::invalid("trajectory states have different dimensions"));
        }
        if let Some(k) = states.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(grid.node(k)));
        }
        Ok(Self { grid, states })
    }

    /// Samples `z(t)` on `n` nodes of `[a, b]`.
    pub fn sample(z: impl Fn(f64) -> PhasePoint, a: f64, b: f64, n: usize) -> Result<Self> {
        let grid = UniformGrid::new(a, b, n)?;
        Self::new(grid, grid.nodes().map(z).collect())
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn states(&self) -> &[PhasePoint] {
        &self.states
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Component `q_i` as a sampled path (0-based `i`).
    pub fn q_path(&self, i: usize) -> SampledPath {
        SampledPath::new(self.grid, self.states.iter().map(|s| s.q[i]).collect())
            .expect("trajectory states are finite and match the grid")
    }

    /// Component `p_i` as a sampled path (0-based `i`).
    pub fn p_path(&self, i: usize) -> SampledPath {
        SampledPath::new(self.grid, self.states.iter().map(|s| s.p[i]).collect())
            .expect("trajectory states are finite and match the grid")
    }

    /// Writes `t,q1..qd,p1..pd`, then `q1_im..,p1_im..` when any state has
    /// a nonzero imaginary part.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        let complex = self.states.iter().any(|s| !s.is_real());
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("q{i}")));
        header.extend((1..=d).map(|i| format!("p{i}")));
        if complex {
            header.extend((1..=d).map(|i| format!("q{i}_im")));
            header.extend((1..=d).map(|i| format!("p{i}_im")));
        }
        writeln!(out, "{}", header.join(","))?;
        for (t, s) in self.grid.nodes().zip(&self.states) {
            let mut row = vec![fmt_f64(t)];
            row.extend(s.q.iter().chain(&s.p).map(|z| fmt_f64(z.re)));
            if complex {
                row.extend(s.q.iter().chain(&s.p).map(|z| fmt_f64(z.im)));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip() {
        let z = PhasePoint::real(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(PhasePoint::from_flat(&z.flat()).unwrap(), z);
        assert!(PhasePoint::real(&[1.0], &[]).is_err());
        assert!(PhasePoint::origin(3).is_origin());
    }

    #[test]
    fn json_omits_zero_imaginary_parts() {
        let z = PhasePoint::real(&[1.0], &[-0.5]).unwrap();
        let v = serde_json::to_value(&z).unwrap();
        assert_eq!(v, serde_json::json!({"q": [1.0], "p": [-0.5]}));
        let w = PhasePoint::new(vec![Complex64::new(1.0, 0.0)], vec![Complex64::new(0.0, 2.0)]).unwrap();
        let v = serde_json::to_value(&w).unwrap();
        assert_eq!(v["p_im"], serde_json::json!([2.0]));
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let traj = Trajectory::sample(|t| PhasePoint::real(&[t], &[-t]).unwrap(), 0.0, 1.0, 3).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,q1,p1");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "5.0000000000000000e-1,5.0000000000000000e-1,-5.0000000000000000e-1");
        assert_eq!(traj.q_path(0).values()[2], Complex64::new(1.0, 0.0));
    }
}
