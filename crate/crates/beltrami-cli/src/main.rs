//! Command-line experiment runner: sampling, assembly, solves, convergence
//! sweeps, and verification diagnostics.

mod converge;
mod diagnose;

use anyhow::{bail, Context};
use beltrami::assembly::{inverse_error, leading_eigenvalues, solve_system, SolverKind};
use beltrami::io::{read_cloud, read_matrix_market, write_cloud, write_matrix_market};
use beltrami::local_ops::{AutoPolicy, Method, MethodConfig, StencilPolicy, WeightScheme};
use beltrami::manifolds::{ManifoldSpec, SamplingMode};
use beltrami::stencils::monge_project;
use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit code for configuration/validation problems.
const EXIT_CONFIG: u8 = 2;
/// Exit code for numerical failures.
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "beltrami",
    about = "Discrete Laplace-Beltrami operators on manifold point clouds",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct MethodArgs {
    /// Discretization: gmls | rbffd | grbffd.
    #[arg(long, default_value = "grbffd")]
    method: String,
    /// GMLS regression weight: one_over_k | smooth | phi_inverse.
    #[arg(long, default_value = "one_over_k")]
    weight: String,
    /// Polynomial degree (>= 2).
    #[arg(long, default_value_t = 4)]
    l: usize,
    /// PHS exponent parameter kappa, phi(r) = r^(2 kappa + 1).
    #[arg(long, default_value_t = 3)]
    kappa: u32,
    /// Ridge regularization.
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    /// Initial stencil size for the auto-tuned growth loop.
    #[arg(long)]
    k0: Option<usize>,
    /// Fixed stencil size (disables auto-tuning).
    #[arg(long)]
    k_fixed: Option<usize>,
    /// Stencil growth increment.
    #[arg(long, default_value_t = 2)]
    k_step: usize,
    /// Spike-ratio acceptance threshold.
    #[arg(long, default_value_t = 3.0)]
    gamma_th: f64,
    /// Hard cap on stencil growth.
    #[arg(long)]
    k_max: Option<usize>,
}

impl MethodArgs {
    fn to_config(&self, d: usize) -> anyhow::Result<MethodConfig> {
        let method: Method = self.method.parse()?;
        let weight: WeightScheme = self.weight.parse()?;
        let policy = match (self.k_fixed, self.k0) {
            (Some(k), None) => StencilPolicy::Fixed { k },
            (None, Some(k0)) => StencilPolicy::Auto(AutoPolicy {
                k0,
                k_step: self.k_step,
                gamma_th: self.gamma_th,
                k_max: self.k_max,
            }),
            (Some(_), Some(_)) => bail!("--k0 and --k-fixed are mutually exclusive"),
            (None, None) => {
                // Default: auto-tune from a modest margin above the basis size.
                let m = beltrami::local_ops::binomial(self.l + d, d);
                StencilPolicy::Auto(AutoPolicy {
                    k0: 2 * m,
                    k_step: self.k_step,
                    gamma_th: self.gamma_th,
                    k_max: self.k_max,
                })
            }
        };
        Ok(MethodConfig {
            method,
            weight,
            l: self.l,
            kappa: self.kappa,
            delta: self.delta,
            policy,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a point cloud from a built-in manifold and write it as JSON.
    Sample {
        #[arg(long)]
        manifold: String,
        #[arg(long)]
        n: usize,
        /// well_sampled | random.
        #[arg(long, default_value = "random")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble the discrete operator and export it in Matrix Market format.
    Assemble {
        #[arg(long)]
        cloud: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-row stencil statistics CSV.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Solve the screened Poisson system for a cloud/operator pair.
    Solve {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        operator: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// JSON report (solution, residual, forward/inverse errors).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full convergence sweep from a declarative JSON config.
    Converge {
        #[arg(long)]
        config: PathBuf,
    },
    /// Verification suites: oracle cross-checks, reproduction audits,
    /// ridge-constant sweeps, diameter statistics, FE ratios, slope fits.
    Diagnose(diagnose::DiagnoseArgs),
    /// Leading eigenvalues of the assembled operator near a shift.
    Eigs {
        #[arg(long)]
        manifold: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "random")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long, default_value_t = 6)]
        count: usize,
        #[arg(long, default_value_t = 10.0)]
        shift: f64,
        /// Optional CSV output (idx, re, im).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

/// Config-shaped problems exit 2, numerical ones 3.
fn classify(e: &anyhow::Error) -> u8 {
    use beltrami::Error as B;
    if let Some(b) = e.downcast_ref::<B>() {
        return match b {
            B::Config(_) | B::UnsupportedMode { .. } | B::Argument(_) | B::Format(_)
            | B::Io(_) | B::Json(_) => EXIT_CONFIG,
            B::DegenerateStencil { .. }
            | B::RankDeficient { .. }
            | B::SolverFailure { .. }
            | B::EigenFailure { .. }
            | B::OracleUndefined(_) => EXIT_NUMERICAL,
        };
    }
    if e.downcast_ref::<converge::NumericalFailure>().is_some() {
        return EXIT_NUMERICAL;
    }
    EXIT_CONFIG
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Sample { manifold, n, mode, seed, out } => {
            let spec: ManifoldSpec = manifold.parse()?;
            let mode: SamplingMode = mode.parse()?;
            let cloud = spec.sample_points(n, mode, seed)?;
            write_cloud(&cloud, &out)?;
            println!("wrote {} points ({}, {}) to {}", cloud.len, spec.name(), mode, out.display());
            Ok(())
        }
        Command::Assemble { cloud, method, out, stats } => {
            let cloud = read_cloud(&cloud)?;
            let config = method.to_config(cloud.d)?;
            config.validate(cloud.d, cloud.len).map_err(anyhow::Error::from)?;
            let op = beltrami::assembly::assemble(&cloud, &config)?;
            write_matrix_market(&op.csr_l(), &out)?;
            println!(
                "assembled {}x{} operator ({} {}), mean K = {:.1}, unconverged rows = {}",
                op.n,
                op.n,
                config.method.label(),
                config.effective_weight().label(),
                op.mean_k(),
                op.unconverged_count()
            );
            if let Some(path) = stats {
                let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
                writeln!(w, "index,k_final,gamma,unconverged,d_max")?;
                for row in &op.rows {
                    let stencil = monge_project(&cloud, &row.neighbors)?;
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        row.base, row.k_final, row.gamma, row.unconverged as u8, stencil.d_max
                    )?;
                }
            }
            Ok(())
        }
        Command::Solve { cloud, operator, tol, out } => {
            let cloud = read_cloud(&cloud)?;
            let l = read_matrix_market(&operator)?;
            if l.n_rows != cloud.len || l.n_cols != cloud.len {
                bail!(beltrami::Error::Argument(format!(
                    "operator is {}x{} but the cloud has {} points",
                    l.n_rows, l.n_cols, cloud.len
                )));
            }
            let mut lf = vec![0.0; cloud.len];
            l.matvec(&cloud.f_values, &mut lf);
            let fe = lf
                .iter()
                .zip(&cloud.lap_values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let b = l.identity_minus();
            let (f, residual, solver, iterations) = solve_system(&b, &cloud.h_values, tol)?;
            let ie = inverse_error(&f, &cloud.f_values);
            #[derive(serde::Serialize)]
            struct Report {
                residual: f64,
                solver: SolverKind,
                iterations: usize,
                fe: f64,
                ie: f64,
                f: Vec<f64>,
            }
            let report = Report { residual, solver, iterations, fe, ie, f };
            serde_json::to_writer(
                std::io::BufWriter::new(std::fs::File::create(&out)?),
                &report,
            )?;
            println!("FE = {fe:e}  IE = {ie:e}  residual = {residual:e}");
            Ok(())
        }
        Command::Converge { config } => converge::run(&config),
        Command::Diagnose(args) => diagnose::run(args),
        Command::Eigs { manifold, n, mode, seed, method, count, shift, out } => {
            let spec: ManifoldSpec = manifold.parse()?;
            let mode: SamplingMode = mode.parse()?;
            let cloud = spec.sample_points(n, mode, seed)?;
            let config = method.to_config(cloud.d)?;
            let op = beltrami::assembly::assemble(&cloud, &config)?;
            let ev = leading_eigenvalues(&op, count, shift)?;
            for (i, e) in ev.iter().enumerate() {
                println!("{}: {:+.6} {:+.6}i", i, e.re, e.im);
            }
            if let Some(path) = out {
                let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
                writeln!(w, "idx,re,im")?;
                for (i, e) in ev.iter().enumerate() {
                    writeln!(w, "{},{},{}", i, e.re, e.im)?;
                }
            }
            Ok(())
        }
    }
}

/// Shared helper for subcommands that assemble inline.
pub(crate) fn assemble_cloud(
    spec: ManifoldSpec,
    n: usize,
    mode: SamplingMode,
    seed: u64,
    config: &MethodConfig,
) -> anyhow::Result<(beltrami::manifolds::PointCloud, beltrami::assembly::SparseOperator)> {
    let cloud = spec.sample_points(n, mode, seed)?;
    let op = beltrami::assembly::assemble(&cloud, config)
        .with_context(|| format!("assembling {} at N = {n}", spec.name()))?;
    Ok((cloud, op))
}
