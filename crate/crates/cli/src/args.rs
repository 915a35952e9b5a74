//! Command-line grammar.

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use scalehelm_core::helmholtz::{DEFAULT_HC_TOL, DEFAULT_NODES};
use scalehelm_core::qderiv::DEFAULT_EXTRACTION_TOL;
use scalehelm_core::{Mu, QuadratureNodes};

#[derive(Debug, Parser)]
#[command(name = "scalehelm", version, about = "Scale derivatives and the Hamiltonian Helmholtz inverse problem")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Report format written to the output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Report path; standard output when absent.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Seed for every random choice; always recorded in the report.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scale derivatives of a function across an epsilon sweep, with extraction.
    Derive(DeriveArgs),
    /// Helmholtz conditions on a seeded point cloud.
    Check(CheckArgs),
    /// Evaluate the reconstructed Hamiltonian.
    Reconstruct(ReconstructArgs),
    /// Conditions, reconstruction, gradients and self-adjointness together.
    Verify(VerifyArgs),
    /// Symplectic integration with an energy-drift summary.
    Simulate(SimulateArgs),
    /// Embedded Euler-Lagrange residual along a path.
    El(ElArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Derive(_) => "derive",
            Command::Check(_) => "check",
            Command::Reconstruct(_) => "reconstruct",
            Command::Verify(_) => "verify",
            Command::Simulate(_) => "simulate",
            Command::El(_) => "el",
        }
    }
}

/// Options shared by the commands that sample a point cloud.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CloudArgs {
    /// Number of sample points.
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    /// Half width of the sampling box `[-r, r]^(2d)`.
    #[arg(long = "box", default_value_t = 1.0)]
    #[serde(rename = "box")]
    pub half_width: f64,
    /// Tolerance on the normalized Helmholtz residuals.
    #[arg(long, default_value_t = DEFAULT_HC_TOL)]
    pub tol: f64,
    /// Also draw imaginary parts of p.
    #[arg(long)]
    pub complex_p: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DeriveArgs {
    /// Expression in `t`, or `weierstrass:a,b`.
    #[arg(long, allow_hyphen_values = true)]
    pub function: String,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub t0: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 1.0)]
    pub t1: f64,
    /// Number of probe points, evenly spaced on `[t0, t1]`.
    #[arg(long, default_value_t = 11)]
    pub n: usize,
    /// `geo:start,ratio,count` or a comma-separated list.
    #[arg(long, default_value = "geo:1e-2,0.5,8")]
    pub eps: String,
    #[arg(long, allow_hyphen_values = true, default_value = "1")]
    pub mu: Mu,
    /// Extraction tolerance.
    #[arg(long, default_value_t = DEFAULT_EXTRACTION_TOL)]
    pub tol: f64,
    /// Named constants, `name=value`.
    #[arg(long = "const", value_name = "NAME=VALUE")]
    #[serde(rename = "const")]
    pub constants: Vec<String>,
    /// Also write the raw sweep as CSV (`t,epsilon,re,im`).
    #[arg(long)]
    pub sweep_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CheckArgs {
    /// Field file.
    #[arg(long)]
    pub field: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub cloud: CloudArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(ArgGroup::new("where").required(true).args(["at", "grid"])))]
pub struct ReconstructArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Gauss-Legendre node count, or `auto`.
    #[arg(long, default_value_t = QuadratureNodes::Fixed(DEFAULT_NODES))]
    pub nodes: QuadratureNodes,
    /// Evaluation point `q1,..,qd,p1,..,pd`; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub at: Vec<String>,
    /// Tensor grid `n` or `n:r`: n points per axis on `[-r, r]` (r = 1 by default).
    #[arg(long)]
    pub grid: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub cloud: CloudArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, default_value_t = QuadratureNodes::Fixed(DEFAULT_NODES))]
    pub nodes: QuadratureNodes,
    /// Bound on the gradient residuals of the reconstruction.
    #[arg(long, default_value_t = 1e-6)]
    pub gradient_tol: f64,
    /// Bound on the self-adjointness residual.
    #[arg(long, default_value_t = 1e-6)]
    pub adjoint_tol: f64,
    /// Random direction pairs for the self-adjointness check.
    #[arg(long, default_value_t = 16)]
    pub trials: usize,
    /// Start of the test trajectory; every coordinate 0.5 when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub z0: Option<String>,
    /// Length of the test trajectory.
    #[arg(long, default_value_t = 1.0)]
    pub t1: f64,
    /// Nodes of the test trajectory.
    #[arg(long, default_value_t = 2001)]
    pub n: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub cloud: CloudArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Initial state `q1,..,qd,p1,..,pd`.
    #[arg(long, allow_hyphen_values = true)]
    pub z0: String,
    /// Time step, positive.
    #[arg(long)]
    pub dt: f64,
    #[arg(long)]
    pub steps: usize,
    /// Quadrature for the energy evaluation.
    #[arg(long, default_value_t = QuadratureNodes::Fixed(DEFAULT_NODES))]
    pub nodes: QuadratureNodes,
    /// Also write the trajectory as CSV.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub cloud: CloudArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ElArgs {
    /// Lagrangian in `t, x1..xd, v1..vd` (`x`, `v` when d = 1).
    #[arg(long, allow_hyphen_values = true)]
    pub lagrangian: String,
    /// One path component per occurrence: a CSV file (`t,re[,im]`) or an expression in `t`.
    #[arg(long, required = true, allow_hyphen_values = true)]
    pub path: Vec<String>,
    /// Sampling grid for expression paths.
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub t0: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 1.0)]
    pub t1: f64,
    #[arg(long, default_value_t = 4097)]
    pub n: usize,
    /// `geo:start,ratio,count`, a list, or `steps:coarsest,count` in grid steps.
    #[arg(long)]
    pub eps: String,
    #[arg(long, allow_hyphen_values = true, default_value = "1")]
    pub mu: Mu,
    #[arg(long, default_value_t = DEFAULT_EXTRACTION_TOL)]
    pub tol: f64,
    #[arg(long = "const", value_name = "NAME=VALUE")]
    #[serde(rename = "const")]
    pub constants: Vec<String>,
}
