//! Acceptance suite: one line per criterion with the measured quantity and
//! its pinned tolerance. Runs without the libtest harness so the table is
//! always printed; exits nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scalehelm_core::dynamics::{energy_drift, integrate_symplectic, nd_hamilton_residual, SymplecticStepper};
use scalehelm_core::field::{self_adjointness_residual, AdjointCheck};
use scalehelm_core::helmholtz::{
    check_conditions, sample_cloud, tensor_grid, verify_gradients, CloudSpec, ExprHamiltonian, DEFAULT_HC_TOL,
};
use scalehelm_core::qderiv::{
    extracted_scale_derivative, ftc_residual, leibniz_defect, leibniz_residual, scale_derivative, FnSignal,
};
use scalehelm_core::signals::Weierstrass;
use scalehelm_core::{
    EpsilonSweep, Mu, PhasePoint, PhaseVectorField, QuadratureNodes, ReconstructedHamiltonian, SampledPath,
    ScaleParams, Trajectory,
};

use common::Poly;

struct Outcome {
    id: &'static str,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn run(id: &'static str, name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let in_budget = budget.is_none_or(|b| elapsed <= b);
    let detail = match budget {
        Some(b) => format!("{detail}; runtime {:.3}s (budget {:.0}s)", elapsed.as_secs_f64(), b.as_secs_f64()),
        None => format!("{detail}; runtime {:.3}s", elapsed.as_secs_f64()),
    };
    Outcome {
        id,
        name,
        passed: ok && in_budget,
        detail,
        elapsed,
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn newton(m: f64, k: f64) -> PhaseVectorField {
    PhaseVectorField::from_strs(1, &["p1/m"], &["-k*q1"], &[("m", m), ("k", k)]).unwrap()
}

fn grid_21() -> Vec<PhasePoint> {
    tensor_grid(1, 21, 1.0).unwrap()
}

fn linear_theorem() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points = sample_cloud(1, &CloudSpec::default()).unwrap();
    let mut worst_true = 0.0f64;
    let mut all_true = true;
    for _ in 0..100 {
        let (a, b, g) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let r = check_conditions(&PhaseVectorField::linear(a, b, g, -a), &points, DEFAULT_HC_TOL).unwrap();
        all_true &= r.verdict;
        worst_true = worst_true.max(r.hc1_residual).max(r.hc2_residual);
    }
    let mut worst_gap = 0.0f64;
    let mut all_false = true;
    let mut drawn = 0;
    while drawn < 100 {
        let (a, b, g, d): (f64, f64, f64, f64) = (
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        );
        if (a + d).abs() < 0.1 {
            continue;
        }
        drawn += 1;
        let r = check_conditions(&PhaseVectorField::linear(a, b, g, d), &points, DEFAULT_HC_TOL).unwrap();
        all_false &= !r.verdict;
        worst_gap = worst_gap.max((r.hc1_residual - (a + d).abs()).abs());
    }
    (
        all_true && all_false && worst_true <= 1e-12 && worst_gap <= 1e-12,
        format!(
            "100/100 true: {all_true}, max residual {worst_true:.3e} (tol 1e-12); 100/100 false: {all_false}, max |hc1 - |α+δ|| {worst_gap:.3e} (tol 1e-12)"
        ),
    )
}

fn linear_formula() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = grid_21();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (a, b, g) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let h = ReconstructedHamiltonian::new(PhaseVectorField::linear(a, b, g, -a), QuadratureNodes::default()).unwrap();
        for z in &grid {
            let (q, p) = (z.q[0].re, z.p[0].re);
            let exact = 0.5 * (b * p * p - g * q * q) + a * q * p;
            worst = worst.max((h.evaluate(z).unwrap() - c(exact)).norm());
        }
    }
    (worst <= 1e-10, format!("max |H - closed form| {worst:.3e} over 20 tuples × 441 points (tol 1e-10)"))
}

/// Potential `U(q)` paired with the `X_p` expression `-U'(q)`.
type Potential = Box<dyn Fn(f64) -> f64>;

fn newton_equation() -> (bool, String) {
    let grid = grid_21();
    let mut worst_h = 0.0f64;
    let mut worst_grad = 0.0f64;
    for m in [1.0, 2.0, 5.0] {
        let k = 3.0;
        let cases: [(&str, Potential); 2] = [
            ("-k*q1", Box::new(move |q: f64| 0.5 * k * q * q)),
            ("-q1^3", Box::new(|q: f64| q.powi(4) / 4.0)),
        ];
        for (xp, u) in cases {
            let x = PhaseVectorField::from_strs(1, &["p1/m"], &[xp], &[("m", m), ("k", k)]).unwrap();
            let h = ReconstructedHamiltonian::new(x.clone(), QuadratureNodes::default()).unwrap();
            for z in &grid {
                let (q, p) = (z.q[0].re, z.p[0].re);
                let exact = p * p / (2.0 * m) + u(q);
                worst_h = worst_h.max((h.evaluate(z).unwrap() - c(exact)).norm());
            }
            let r = verify_gradients(&h, &x, &grid).unwrap();
            worst_grad = worst_grad.max(r.p_residual).max(r.q_residual);
        }
    }
    (
        worst_h <= 1e-10 && worst_grad <= 1e-6,
        format!("max |H - p²/2m - U| {worst_h:.3e} (tol 1e-10); max gradient residual {worst_grad:.3e} (tol 1e-6)"),
    )
}

fn polynomial_round_trip() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut all_pass_hc = true;
    for case in 0..50 {
        let d = 1 + case % 3;
        let poly = Poly::random(d, 4, rng.gen_range(2..=6), &mut rng);
        let x: PhaseVectorField = poly.hamiltonian_field_text().parse().unwrap();
        let h = match ReconstructedHamiltonian::new(x, QuadratureNodes::Fixed(16)) {
            Ok(h) => h,
            Err(_) => {
                all_pass_hc = false;
                continue;
            }
        };
        let per_axis = if d <= 2 { 7 } else { 5 };
        for z in tensor_grid(d, per_axis, 1.0).unwrap() {
            let flat: Vec<f64> = z.flat().iter().map(|v| v.re).collect();
            worst = worst.max((h.evaluate(&z).unwrap() - c(poly.eval(&flat))).norm());
        }
    }
    (
        all_pass_hc && worst <= 1e-9,
        format!("50/50 pass HC: {all_pass_hc}; max reconstruction error {worst:.3e} (tol 1e-9)"),
    )
}

fn scale_derivative_exactness() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = FnSignal::unbounded(|t: f64| c(t * t));
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = rng.gen_range(-1.0..=1.0);
        let eps = rng.gen_range(1e-2..=1e-1);
        let mu = if rng.gen_bool(0.5) { Mu::One } else { Mu::MinusOne };
        let got = scale_derivative(&f, t, ScaleParams::new(eps, mu).unwrap()).unwrap();
        let exact = Complex64::new(2.0 * t, 0.0) + Complex64::i() * mu.value() * eps;
        worst = worst.max((got - exact).norm());
    }
    (worst <= 1e-13, format!("max |□f - (2t + iμε)| {worst:.3e} over 1000 triples (tol 1e-13)"))
}

fn quantum_ftc() -> (bool, String) {
    let sweep = EpsilonSweep::default();
    let tol = scalehelm_core::qderiv::DEFAULT_EXTRACTION_TOL;
    let runs = [
        ftc_residual(&FnSignal::unbounded(|t: f64| c(t * t)), 0.0, 1.0, &sweep, Mu::One, 10_000, tol),
        ftc_residual(&FnSignal::unbounded(|t: f64| c(t.sin())), 0.0, 1.0, &sweep, Mu::One, 10_000, tol),
        ftc_residual(&FnSignal::unbounded(|t: f64| c(t.exp())), 0.0, 1.0, &sweep, Mu::One, 10_000, tol),
    ];
    let residuals: Vec<f64> = runs.into_iter().map(|r| r.unwrap().residual).collect();
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    (
        worst <= 1e-8,
        format!("residuals t² {:.3e}, sin {:.3e}, exp {:.3e} (tol 1e-8)", residuals[0], residuals[1], residuals[2]),
    )
}

fn quantum_leibniz() -> (bool, String) {
    let sweep = EpsilonSweep::default();
    let tol = scalehelm_core::qderiv::DEFAULT_EXTRACTION_TOL;
    let grid: Vec<f64> = (0..=100).map(|k| 0.01 * k as f64).collect();
    let sq = FnSignal::unbounded(|t: f64| c(t * t));
    let sin = FnSignal::unbounded(|t: f64| c(t.sin()));
    let cos = FnSignal::unbounded(|t: f64| c(t.cos()));
    let exp = FnSignal::unbounded(|t: f64| c(t.exp()));
    let id = FnSignal::unbounded(c);
    let mut worst = 0.0f64;
    let mut excluded = 0;
    for mu in [Mu::One, Mu::MinusOne, Mu::Zero] {
        for r in [
            leibniz_residual(&sq, &sq, &grid, &sweep, mu, tol),
            leibniz_residual(&sq, &sin, &grid, &sweep, mu, tol),
            leibniz_residual(&sin, &exp, &grid, &sweep, mu, tol),
            leibniz_residual(&cos, &exp, &grid, &sweep, mu, tol),
            leibniz_residual(&id, &cos, &grid, &sweep, mu, tol),
        ] {
            let r = r.unwrap();
            worst = worst.max(r.residual);
            excluded += r.excluded;
        }
    }
    let raw = leibniz_defect(&sq, &sq, &grid, ScaleParams::new(1e-2, Mu::One).unwrap()).unwrap();
    (
        worst <= 1e-8 && raw >= 1e-5,
        format!("max extracted defect {worst:.3e} (tol 1e-8, {excluded} points excluded); raw defect at ε=1e-2 for t²·t² {raw:.3e} (≥ 1e-5)"),
    )
}

fn self_adjointness() -> (bool, String) {
    let traj = Trajectory::sample(|t| PhasePoint::real(&[t.cos()], &[-t.sin()]).unwrap(), 0.0, 1.0, 2001).unwrap();
    let opts = AdjointCheck::default();
    let res = |x: PhaseVectorField| self_adjointness_residual(&x, &traj, &opts).unwrap().residual;
    let newton = res(newton(1.0, 1.0));
    let linear = res(PhaseVectorField::linear(1.0, 2.0, 3.0, -1.0));
    let bad = res(PhaseVectorField::linear(1.0, 2.0, 3.0, 1.0));
    (
        newton <= 1e-6 && linear <= 1e-6 && bad >= 1e-2,
        format!(
            "{} trials, 2001 nodes: Newton {newton:.3e}, Hamiltonian linear {linear:.3e} (tol 1e-6); α=δ=1 {bad:.3e} (≥ 1e-2)",
            opts.trials
        ),
    )
}

fn nd_residual_order() -> (bool, String) {
    let dt = 2f64.powi(-12);
    let n = 4 * 4096 + 1;
    let traj = Trajectory::sample(|t| PhasePoint::real(&[t.cos()], &[-t.sin()]).unwrap(), 0.0, 4.0, n).unwrap();
    let x = newton(1.0, 1.0);
    let mut rows = Vec::new();
    for level in 0..4 {
        let sweep = EpsilonSweep::dyadic_steps(dt, 1 << (9 - level), 4).unwrap();
        let r = nd_hamilton_residual(&x, &traj, &sweep, Mu::One, 1e-3).unwrap();
        rows.push((sweep.min(), r.q_residual.max(r.p_residual), r.nonconverged));
    }
    let orders: Vec<f64> = rows.windows(2).map(|w| (w[0].1 / w[1].1).log2()).collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    let table = rows
        .iter()
        .map(|(e, r, nc)| format!("ε_min {e:.2e}: {r:.3e} ({nc} excl.)"))
        .collect::<Vec<_>>()
        .join(", ");
    (
        min_order >= 1.0,
        format!("{table}; observed orders {orders:.2?}, min {min_order:.2} (≥ 1)"),
    )
}

fn weierstrass_nonconvergence() -> (bool, String) {
    let n = (1 << 16) + 1;
    let w = Weierstrass::new(0.5, 3).unwrap();
    let path = SampledPath::sample_real(|t| w.eval(t), 0.0, 1.0, n).unwrap();
    let h = path.grid().step();
    let sweep = EpsilonSweep::dyadic_steps(h, 1024, 8).unwrap();
    let margin = 1024;
    let stride = (n - 2 * margin) / 1000;
    let probes: Vec<usize> = (margin..n - margin).step_by(stride).collect();
    let nonconverged = probes
        .iter()
        .filter(|&&k| {
            !extracted_scale_derivative(&path, path.grid().node(k), &sweep, Mu::One, 1e-3)
                .unwrap()
                .converged
        })
        .count();
    let frac = nonconverged as f64 / probes.len() as f64;
    (
        frac >= 0.9,
        format!("{nonconverged}/{} probes non-converged = {:.1}% (≥ 90%)", probes.len(), 100.0 * frac),
    )
}

fn energy_conservation() -> (bool, String) {
    let x = newton(1.0, 1.0);
    let z0 = PhasePoint::real(&[1.0], &[0.0]).unwrap();
    let traj = integrate_symplectic(&x, &z0, 1e-3, 10_000).unwrap();
    let h = ExprHamiltonian::parse("(q1^2 + p1^2)/2", 1, &[]).unwrap();
    let drift = energy_drift(&h, &traj).unwrap();
    let stepper = SymplecticStepper::new(&x);
    let det_err = traj
        .states()
        .iter()
        .step_by(500)
        .map(|z| (stepper.step_jacobian(z, 1e-3).unwrap().determinant() - c(1.0)).norm())
        .fold(0.0, f64::max);
    (
        drift <= 1e-6 && det_err <= 1e-12,
        format!("|H drift| {drift:.3e} (tol 1e-6); max |det - 1| {det_err:.3e} (tol 1e-12)"),
    )
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let outcomes = [
        run("A1", "linear-case HC theorem", Some(secs(1)), linear_theorem),
        run("A2", "linear Hamiltonian formula", Some(secs(1)), linear_formula),
        run("A3", "Newton reconstruction and gradients", None, newton_equation),
        run("A4", "polynomial round trip", Some(secs(30)), polynomial_round_trip),
        run("A5", "scale-derivative exactness", None, scale_derivative_exactness),
        run("A6", "fundamental theorem of calculus", None, quantum_ftc),
        run("A7", "Leibniz rule", None, quantum_leibniz),
        run("A8", "self-adjointness dichotomy", Some(secs(5)), self_adjointness),
        run("A9", "embedded Hamiltonian residual order", None, nd_residual_order),
        run("A10", "Weierstrass non-convergence", None, weierstrass_nonconvergence),
        run("A11", "energy conservation", None, energy_conservation),
    ];
    for o in &outcomes {
        println!(
            "{} {:<4} {:<38} {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail
        );
    }
    let total: Duration = outcomes.iter().map(|o| o.elapsed).sum();
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!("{}/{} criteria passed in {:.2}s", outcomes.len() - failed.len(), outcomes.len(), total.as_secs_f64());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
