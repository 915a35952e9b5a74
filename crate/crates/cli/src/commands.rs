//! One function per subcommand. Each returns the report it produced; the
//! caller owns all output.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use scalehelm_core::dynamics::{energy_drift, el_residual, ElReport, Scheme, SymplecticStepper};
use scalehelm_core::expr::CompiledExpr;
use scalehelm_core::field::{self_adjointness_residual, AdjointCheck, SelfAdjointnessReport};
use scalehelm_core::helmholtz::{
    check_conditions, sample_cloud, tensor_grid, verify_gradients, CloudSpec, GradientReport, Lagrangian,
};
use scalehelm_core::io::fmt_f64;
use scalehelm_core::qderiv::{extract, scale_derivative_family, EpsilonValue, FnSignal};
use scalehelm_core::signals::Weierstrass;
use scalehelm_core::{
    parse, EpsilonSweep, ExtractionResult, HelmholtzReport, Mu, PhasePoint, PhaseVectorField, QuadratureNodes,
    ReconstructedHamiltonian, SampledPath, Trajectory, UniformGrid,
};

use crate::args::{CheckArgs, CloudArgs, DeriveArgs, ElArgs, Format, ReconstructArgs, SimulateArgs, VerifyArgs};
use crate::report::{write_text, CliError, Outcome};

type Run<R> = Result<Outcome<R>, CliError>;

fn read_field(path: &Path) -> Result<PhaseVectorField, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.parse::<PhaseVectorField>()
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn parse_reals(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::usage(format!("bad number `{s}` in {what}")))
        })
        .collect()
}

fn parse_point(text: &str, d: usize) -> Result<PhasePoint, CliError> {
    let xs = parse_reals(text, "phase point")?;
    if xs.len() != 2 * d {
        return Err(CliError::usage(format!(
            "phase point `{text}` has {} coordinates, the field needs {}",
            xs.len(),
            2 * d
        )));
    }
    Ok(PhasePoint::real(&xs[..d], &xs[d..])?)
}

fn parse_constants(items: &[String]) -> Result<BTreeMap<String, f64>, CliError> {
    let mut out = BTreeMap::new();
    for item in items {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("constant `{item}` is not `name=value`")))?;
        let v = parse_reals(value, "constant")?;
        if v.len() != 1 || out.insert(name.trim().to_string(), v[0]).is_some() {
            return Err(CliError::usage(format!("bad or duplicate constant `{item}`")));
        }
    }
    Ok(out)
}

fn parse_sweep(text: &str) -> Result<EpsilonSweep, CliError> {
    text.parse::<EpsilonSweep>()
        .map_err(|e| CliError::usage(format!("epsilon sweep `{text}`: {e}")))
}

fn cloud_spec(args: &CloudArgs, seed: u64) -> CloudSpec {
    CloudSpec {
        points: args.points,
        half_width: args.half_width,
        seed,
        complex_p: args.complex_p,
    }
}

fn helmholtz(field: &PhaseVectorField, args: &CloudArgs, seed: u64) -> Result<(CloudSpec, Vec<PhasePoint>, HelmholtzReport), CliError> {
    let spec = cloud_spec(args, seed);
    let points = sample_cloud(field.dim(), &spec).map_err(|e| CliError::usage(e.to_string()))?;
    let report = check_conditions(field, &points, args.tol)?;
    Ok((spec, points, report))
}

/// An expression in `t` with constants substituted, compiled once.
fn time_expression(source: &str, constants: &BTreeMap<String, f64>) -> Result<CompiledExpr, CliError> {
    let e = parse(source)
        .map_err(|e| CliError::usage(format!("`{source}`: {e}")))?
        .substitute(constants);
    if let Some(name) = e.variables().into_iter().find(|v| v != "t") {
        return Err(CliError::usage(format!("`{source}` uses unbound variable `{name}`")));
    }
    CompiledExpr::new(&e, &["t"]).map_err(|e| CliError::usage(e.to_string()))
}

fn eval_at(e: &CompiledExpr, t: f64) -> Complex64 {
    e.eval(&[Complex64::new(t, 0.0)])
        .unwrap_or(Complex64::new(f64::NAN, f64::NAN))
}

#[derive(Serialize)]
pub struct DerivePoint {
    pub t: f64,
    pub extraction: ExtractionResult,
    pub sweep: Vec<EpsilonValue>,
}

#[derive(Serialize)]
pub struct DeriveReport {
    pub function: String,
    pub mu: Mu,
    pub epsilons: Vec<f64>,
    pub tol: f64,
    pub converged: usize,
    pub nonconverged: usize,
    pub points: Vec<DerivePoint>,
}

enum Function {
    Weierstrass(Weierstrass),
    Expression(CompiledExpr),
}

fn parse_function(text: &str, constants: &BTreeMap<String, f64>) -> Result<Function, CliError> {
    if let Some(rest) = text.strip_prefix("weierstrass:") {
        let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        let (a, b) = match parts.as_slice() {
            [a, b] => (a.parse::<f64>().ok(), b.parse::<u32>().ok()),
            _ => (None, None),
        };
        let (Some(a), Some(b)) = (a, b) else {
            return Err(CliError::usage(format!("`{text}` is not `weierstrass:a,b` with integer b")));
        };
        return Weierstrass::new(a, b)
            .map(Function::Weierstrass)
            .map_err(|e| CliError::usage(e.to_string()));
    }
    time_expression(text, constants).map(Function::Expression)
}

pub fn derive(args: &DeriveArgs, format: Format) -> Run<DeriveReport> {
    if args.n == 0 || !(args.t0 <= args.t1) {
        return Err(CliError::usage("derive needs n >= 1 and t0 <= t1"));
    }
    let sweep = parse_sweep(&args.eps)?;
    let function = parse_function(&args.function, &parse_constants(&args.constants)?)?;
    let signal = FnSignal::unbounded(move |t: f64| match &function {
        Function::Weierstrass(w) => Complex64::new(w.eval(t), 0.0),
        Function::Expression(e) => eval_at(e, t),
    });
    let probes: Vec<f64> = if args.n == 1 {
        vec![args.t0]
    } else {
        let grid = UniformGrid::new(args.t0, args.t1, args.n).map_err(|e| CliError::usage(e.to_string()))?;
        grid.nodes().collect()
    };
    let mut points = Vec::with_capacity(probes.len());
    for t in probes {
        let family = scale_derivative_family(&signal, t, &sweep, args.mu)?;
        let extraction = extract(&family, args.tol);
        let values = family
            .epsilons()
            .iter()
            .zip(family.values())
            .map(|(&epsilon, v)| EpsilonValue { epsilon, re: v.re, im: v.im })
            .collect();
        points.push(DerivePoint {
            t,
            extraction,
            sweep: values,
        });
    }
    let converged = points.iter().filter(|p| p.extraction.converged).count();
    let nonconverged = points.len() - converged;

    if let Some(path) = &args.sweep_csv {
        let mut text = String::from("t,epsilon,re,im\n");
        for p in &points {
            for v in &p.sweep {
                text.push_str(&format!("{},{},{},{}\n", fmt_f64(p.t), fmt_f64(v.epsilon), fmt_f64(v.re), fmt_f64(v.im)));
            }
        }
        write_text(Some(path), &text)?;
    }
    let table = (format == Format::Csv).then(|| {
        let mut text = String::from("t,value_re,value_im,converged,fit_residual\n");
        for p in &points {
            let x = &p.extraction;
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_f64(p.t),
                fmt_f64(x.value.re),
                fmt_f64(x.value.im),
                x.converged,
                fmt_f64(x.fit_residual)
            ));
        }
        text
    });
    let mut outcome = Outcome::new(DeriveReport {
        function: args.function.clone(),
        mu: args.mu,
        epsilons: sweep.epsilons().to_vec(),
        tol: args.tol,
        converged,
        nonconverged,
        points,
    });
    if nonconverged > 0 {
        outcome.failure = Some(format!("extraction did not converge at {nonconverged} of {} points", converged + nonconverged));
    }
    outcome.table = table;
    Ok(outcome)
}

#[derive(Serialize)]
pub struct CheckReport {
    pub field: PhaseVectorField,
    pub cloud: CloudSpec,
    #[serde(flatten)]
    pub helmholtz: HelmholtzReport,
    pub hc1_normalized: f64,
    pub hc2_normalized: f64,
}

pub fn check(args: &CheckArgs, seed: u64) -> Run<CheckReport> {
    let field = read_field(&args.field)?;
    let (cloud, _, helmholtz) = helmholtz(&field, &args.cloud, seed)?;
    let verdict = helmholtz.verdict;
    let mut outcome = Outcome::new(CheckReport {
        field,
        cloud,
        hc1_normalized: helmholtz.hc1_normalized(),
        hc2_normalized: helmholtz.hc2_normalized(),
        helmholtz,
    });
    outcome.verdict = Some(verdict);
    Ok(outcome)
}

#[derive(Serialize)]
pub struct ValueAt {
    pub point: PhasePoint,
    pub h_re: f64,
    pub h_im: f64,
    pub nodes_used: usize,
}

#[derive(Serialize)]
pub struct ReconstructReport {
    pub field: PhaseVectorField,
    pub nodes: QuadratureNodes,
    pub helmholtz: HelmholtzReport,
    pub values: Vec<ValueAt>,
}

fn parse_grid(text: &str, d: usize) -> Result<Vec<PhasePoint>, CliError> {
    let bad = || CliError::usage(format!("grid `{text}` is not `n` or `n:r`"));
    let (n, r) = match text.split_once(':') {
        Some((n, r)) => (n, r.trim().parse::<f64>().map_err(|_| bad())?),
        None => (text, 1.0),
    };
    let n = n.trim().parse::<usize>().map_err(|_| bad())?;
    tensor_grid(d, n, r).map_err(|e| CliError::usage(e.to_string()))
}

pub fn reconstruct(args: &ReconstructArgs, seed: u64, format: Format) -> Run<ReconstructReport> {
    let field = read_field(&args.field)?;
    let d = field.dim();
    let points = match &args.grid {
        Some(g) => parse_grid(g, d)?,
        None => args.at.iter().map(|s| parse_point(s, d)).collect::<Result<_, _>>()?,
    };
    let (_, _, helmholtz) = helmholtz(&field, &args.cloud, seed)?;
    let verdict = helmholtz.verdict;
    let mut values = Vec::new();
    if verdict {
        let h = ReconstructedHamiltonian::unchecked(field.clone(), args.nodes)?;
        for z in points {
            let (v, nodes_used) = h.evaluate_counted(&z)?;
            values.push(ValueAt {
                point: z,
                h_re: v.re,
                h_im: v.im,
                nodes_used,
            });
        }
    }
    let table = (format == Format::Csv).then(|| {
        let mut header: Vec<String> = (1..=d).map(|i| format!("q{i}")).collect();
        header.extend((1..=d).map(|i| format!("p{i}")));
        header.extend(["h_re", "h_im", "nodes_used"].map(String::from));
        let mut text = header.join(",") + "\n";
        for v in &values {
            let mut row: Vec<String> = v.point.q.iter().chain(&v.point.p).map(|c| fmt_f64(c.re)).collect();
            row.extend([fmt_f64(v.h_re), fmt_f64(v.h_im), v.nodes_used.to_string()]);
            text.push_str(&(row.join(",") + "\n"));
        }
        text
    });
    let mut outcome = Outcome::new(ReconstructReport {
        field,
        nodes: args.nodes,
        helmholtz,
        values,
    });
    outcome.verdict = Some(verdict);
    outcome.table = table;
    Ok(outcome)
}

#[derive(Serialize)]
pub struct VerifyChecks {
    pub helmholtz: bool,
    /// Absent when the field fails the Helmholtz conditions.
    pub gradients: Option<bool>,
    pub self_adjoint: bool,
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub field: PhaseVectorField,
    pub cloud: CloudSpec,
    pub helmholtz: HelmholtzReport,
    pub gradients: Option<GradientReport>,
    pub gradient_tol: f64,
    pub self_adjointness: SelfAdjointnessReport,
    pub adjoint_tol: f64,
    pub trajectory_start: PhasePoint,
    pub trajectory_end: PhasePoint,
    pub checks: VerifyChecks,
}

pub fn verify(args: &VerifyArgs, seed: u64) -> Run<VerifyReport> {
    let field = read_field(&args.field)?;
    let d = field.dim();
    if args.n < 3 || !(args.t1 > 0.0) {
        return Err(CliError::usage("verify needs n >= 3 and t1 > 0"));
    }
    let (cloud, points, helmholtz) = helmholtz(&field, &args.cloud, seed)?;

    let gradients = if helmholtz.verdict {
        let h = ReconstructedHamiltonian::unchecked(field.clone(), args.nodes)?;
        Some(verify_gradients(&h, &field, &points)?)
    } else {
        None
    };

    let z0 = match &args.z0 {
        Some(s) => parse_point(s, d)?,
        None => PhasePoint::real(&vec![0.5; d], &vec![0.5; d])?,
    };
    let grid = UniformGrid::new(0.0, args.t1, args.n).map_err(|e| CliError::usage(e.to_string()))?;
    let states = SymplecticStepper::new(&field).run(&z0, grid.step(), args.n - 1)?;
    let traj = Trajectory::new(grid, states)?;
    let adjoint = self_adjointness_residual(
        &field,
        &traj,
        &AdjointCheck {
            trials: args.trials,
            seed,
            ..AdjointCheck::default()
        },
    )?;

    let checks = VerifyChecks {
        helmholtz: helmholtz.verdict,
        gradients: gradients
            .as_ref()
            .map(|g| g.p_residual <= args.gradient_tol && g.q_residual <= args.gradient_tol),
        self_adjoint: adjoint.residual <= args.adjoint_tol,
    };
    let verdict = checks.helmholtz && checks.gradients == Some(true) && checks.self_adjoint;
    let trajectory_end = traj.states()[traj.len() - 1].clone();
    let mut outcome = Outcome::new(VerifyReport {
        field,
        cloud,
        helmholtz,
        gradients,
        gradient_tol: args.gradient_tol,
        self_adjointness: adjoint,
        adjoint_tol: args.adjoint_tol,
        trajectory_start: z0,
        trajectory_end,
        checks,
    });
    outcome.verdict = Some(verdict);
    Ok(outcome)
}

#[derive(Serialize)]
pub struct SimulationSummary {
    pub scheme: Scheme,
    pub t_end: f64,
    pub final_state: PhasePoint,
    pub energy_initial_re: f64,
    pub energy_initial_im: f64,
    /// `max_k |H(z_k) - H(z_0)|`.
    pub energy_drift: f64,
}

#[derive(Serialize)]
pub struct SimulateReport {
    pub field: PhaseVectorField,
    pub initial_state: PhasePoint,
    pub dt: f64,
    pub steps: usize,
    pub helmholtz: HelmholtzReport,
    /// Absent when the field fails the Helmholtz conditions.
    pub simulation: Option<SimulationSummary>,
}

pub fn simulate(args: &SimulateArgs, seed: u64, format: Format) -> Run<SimulateReport> {
    let field = read_field(&args.field)?;
    let z0 = parse_point(&args.z0, field.dim())?;
    if !(args.dt > 0.0 && args.dt.is_finite()) || args.steps == 0 {
        return Err(CliError::usage("simulate needs dt > 0 and steps >= 1"));
    }
    let (_, _, helmholtz) = helmholtz(&field, &args.cloud, seed)?;
    let verdict = helmholtz.verdict;
    let mut table = None;
    let mut simulation = None;
    if verdict {
        let stepper = SymplecticStepper::new(&field);
        let states = stepper.run(&z0, args.dt, args.steps)?;
        let t_end = args.dt * args.steps as f64;
        let traj = Trajectory::new(UniformGrid::new(0.0, t_end, args.steps + 1)?, states)?;
        let h = ReconstructedHamiltonian::unchecked(field.clone(), args.nodes)?;
        let e0 = h.evaluate(&z0)?;
        let drift = energy_drift(&h, &traj)?;
        let mut csv = Vec::new();
        traj.write_csv(&mut csv).expect("writing to memory");
        let csv = String::from_utf8(csv).expect("CSV is UTF-8");
        if let Some(path) = &args.trajectory {
            write_text(Some(path), &csv)?;
        }
        if format == Format::Csv {
            table = Some(csv);
        }
        simulation = Some(SimulationSummary {
            scheme: stepper.scheme(),
            t_end,
            final_state: traj.states()[traj.len() - 1].clone(),
            energy_initial_re: e0.re,
            energy_initial_im: e0.im,
            energy_drift: drift,
        });
    }
    let mut outcome = Outcome::new(SimulateReport {
        field,
        initial_state: z0,
        dt: args.dt,
        steps: args.steps,
        helmholtz,
        simulation,
    });
    outcome.verdict = Some(verdict);
    outcome.table = table;
    Ok(outcome)
}

#[derive(Serialize)]
pub struct ElRunReport {
    pub lagrangian: String,
    pub d: usize,
    pub mu: Mu,
    pub epsilons: Vec<f64>,
    pub grid_start: f64,
    pub grid_end: f64,
    pub grid_nodes: usize,
    #[serde(flatten)]
    pub residual: ElReport,
}

fn read_path(source: &str, grid: Option<UniformGrid>, constants: &BTreeMap<String, f64>) -> Result<SampledPath, CliError> {
    let file = Path::new(source);
    if file.is_file() {
        let f = fs::File::open(file).map_err(|e| CliError::io(file, e))?;
        return SampledPath::read_csv(BufReader::new(f)).map_err(|e| CliError::usage(format!("{source}: {e}")));
    }
    let grid = grid.ok_or_else(|| CliError::usage("expression paths need a grid"))?;
    let e = time_expression(source, constants)?;
    let values = grid
        .nodes()
        .map(|t| {
            e.eval(&[Complex64::new(t, 0.0)])
                .map_err(|err| CliError::Core(scalehelm_core::Error::AtPoint { point: format!("t = {t}"), source: err }))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SampledPath::new(grid, values)?)
}

pub fn el(args: &ElArgs) -> Run<ElRunReport> {
    let constants = parse_constants(&args.constants)?;
    let expr_grid = UniformGrid::new(args.t0, args.t1, args.n).ok();
    let path = args
        .path
        .iter()
        .map(|s| read_path(s, expr_grid, &constants))
        .collect::<Result<Vec<_>, _>>()?;
    let grid = *path[0].grid();
    if path.iter().any(|p| !p.grid().same_as(&grid)) {
        return Err(CliError::usage("path components are sampled on different grids"));
    }
    let d = path.len();
    let lagrangian = parse(&args.lagrangian).map_err(|e| CliError::usage(format!("`{}`: {e}", args.lagrangian)))?;
    let l = Lagrangian::new(&lagrangian, d, &constants).map_err(|e| CliError::usage(e.to_string()))?;
    let sweep = match args.eps.strip_prefix("steps:") {
        Some(rest) => {
            let parts: Vec<usize> = rest.split(',').filter_map(|s| s.trim().parse().ok()).collect();
            let [coarsest, count] = parts[..] else {
                return Err(CliError::usage(format!("`{}` is not `steps:coarsest,count`", args.eps)));
            };
            EpsilonSweep::dyadic_steps(grid.step(), coarsest, count).map_err(|e| CliError::usage(e.to_string()))?
        }
        None => parse_sweep(&args.eps)?,
    };
    let residual = el_residual(&l, &path, &sweep, args.mu, args.tol)?;
    let flagged = residual.flagged;
    let mut outcome = Outcome::new(ElRunReport {
        lagrangian: args.lagrangian.clone(),
        d,
        mu: args.mu,
        epsilons: sweep.epsilons().to_vec(),
        grid_start: grid.start(),
        grid_end: grid.end(),
        grid_nodes: grid.len(),
        residual,
    });
    if flagged {
        outcome.failure = Some("extraction did not converge on more than half of the window".into());
    }
    Ok(outcome)
}
