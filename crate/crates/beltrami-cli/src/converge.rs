//! The convergence sweep: a declarative config drives (method, N, trial)
//! runs, each recording forward/inverse errors, stability estimates, and
//! stencil statistics into `convergence.csv`, with a resolved-config manifest
//! for exact reruns.

use anyhow::{bail, Context};
use beltrami::assembly::{
    assemble, forward_error, inf_norm_inverse, inverse_error, leading_eigenvalues,
    solve_screened_poisson, NormMode,
};
use beltrami::local_ops::{Method, MethodConfig, StencilPolicy, WeightScheme};
use beltrami::manifolds::{ManifoldSpec, SamplingMode};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Marker error so `main` can map sweep failures to exit code 3.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "numerical failure in {}", self.0)
    }
}

impl std::error::Error for NumericalFailure {}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodEntry {
    pub method: Method,
    #[serde(default)]
    pub weight: Option<WeightScheme>,
}

fn default_trials() -> usize {
    1
}

fn default_kappa() -> u32 {
    3
}

fn default_tol() -> f64 {
    1e-10
}

fn default_mode() -> SamplingMode {
    SamplingMode::Random
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigRequest {
    #[serde(default = "default_eig_count")]
    pub count: usize,
    #[serde(default = "default_eig_shift")]
    pub shift: f64,
}

fn default_eig_count() -> usize {
    6
}

fn default_eig_shift() -> f64 {
    10.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergeConfig {
    pub manifold: String,
    #[serde(default = "default_mode")]
    pub mode: SamplingMode,
    pub ns: Vec<usize>,
    pub methods: Vec<MethodEntry>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub l: usize,
    #[serde(default = "default_kappa")]
    pub kappa: u32,
    #[serde(default = "beltrami::local_ops::default_delta")]
    pub delta: f64,
    pub k_policy: StencilPolicy,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
    pub out_dir: PathBuf,
    /// When set, eigenvalues of each method's operator are computed at the
    /// largest N (first trial) and written to `eigenvalues.csv`.
    #[serde(default)]
    pub eigenvalues: Option<EigRequest>,
    /// Skip the infinity-norm estimate (it costs a handful of extra solves).
    #[serde(default)]
    pub skip_inf_norm: bool,
}

impl ConvergeConfig {
    fn validate(&self) -> anyhow::Result<(ManifoldSpec, Vec<MethodConfig>)> {
        let spec: ManifoldSpec = self.manifold.parse()?;
        if self.methods.is_empty() {
            bail!(beltrami::Error::Config("method list must not be empty".into()));
        }
        if self.ns.is_empty() {
            bail!(beltrami::Error::Config("N list must not be empty".into()));
        }
        if self.trials == 0 {
            bail!(beltrami::Error::Config("trials must be at least 1".into()));
        }
        let mut configs = Vec::new();
        for entry in &self.methods {
            let config = MethodConfig {
                method: entry.method,
                weight: entry.weight.unwrap_or(WeightScheme::OneOverK),
                l: self.l,
                kappa: self.kappa,
                delta: self.delta,
                policy: self.k_policy,
            };
            let smallest = *self.ns.iter().min().unwrap();
            config
                .validate(spec.d(), smallest)
                .with_context(|| format!("method {}", entry.method.label()))?;
            configs.push(config);
        }
        Ok((spec, configs))
    }
}

struct Record {
    method_idx: usize,
    n: usize,
    trial: usize,
    seed: u64,
    fe: f64,
    ie: f64,
    inf_norm: f64,
    mean_k: f64,
    gamma_fail: usize,
    wall_time: f64,
}

pub fn run(config_path: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config: ConvergeConfig = serde_json::from_str(&text).map_err(|e| {
        anyhow::Error::from(beltrami::Error::Config(format!(
            "{}: {e}",
            config_path.display()
        )))
    })?;
    let (spec, method_configs) = config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;

    // Resolved manifest first: a rerun from it must reproduce the sweep.
    let manifest_path = config.out_dir.join("manifest.json");
    serde_json::to_writer_pretty(
        std::io::BufWriter::new(std::fs::File::create(&manifest_path)?),
        &config,
    )?;

    let mut records: Vec<Record> = Vec::new();
    let mut eigen_rows: Vec<(usize, usize, u64, usize, f64, f64)> = Vec::new();
    let largest_n = *config.ns.iter().max().unwrap();

    for &n in &config.ns {
        for trial in 0..config.trials {
            let seed = config.seed_base + trial as u64;
            let cloud = spec
                .sample_points(n, config.mode, seed)
                .with_context(|| format!("sampling N = {n}, trial {trial}"))?;
            for (mi, mc) in method_configs.iter().enumerate() {
                let label = || {
                    format!(
                        "(method {}, N {}, trial {})",
                        mc.method.label(),
                        n,
                        trial
                    )
                };
                let start = Instant::now();
                let op = assemble(&cloud, mc)
                    .map_err(|e| NumericalFailure(format!("{}: {e}", label())))?;
                let fe = forward_error(&op, &cloud.f_values, &cloud.lap_values);
                let rep = solve_screened_poisson(&op, &cloud.h_values, config.solver_tol)
                    .map_err(|e| NumericalFailure(format!("{}: {e}", label())))?;
                let ie = inverse_error(&rep.f, &cloud.f_values);
                let inf_norm = if config.skip_inf_norm {
                    f64::NAN
                } else {
                    inf_norm_inverse(&op, NormMode::Estimate)
                        .map_err(|e| NumericalFailure(format!("{}: {e}", label())))?
                        .value
                };
                records.push(Record {
                    method_idx: mi,
                    n,
                    trial,
                    seed,
                    fe,
                    ie,
                    inf_norm,
                    mean_k: op.mean_k(),
                    gamma_fail: op.unconverged_count(),
                    wall_time: start.elapsed().as_secs_f64(),
                });
                if let Some(eig) = &config.eigenvalues {
                    if n == largest_n && trial == 0 {
                        let ev = leading_eigenvalues(&op, eig.count, eig.shift)
                            .map_err(|e| NumericalFailure(format!("{}: {e}", label())))?;
                        for (idx, e) in ev.iter().enumerate() {
                            eigen_rows.push((mi, n, seed, idx, e.re, e.im));
                        }
                    }
                }
            }
        }
    }

    records.sort_by(|a, b| {
        (a.method_idx, a.n, a.trial).cmp(&(b.method_idx, b.n, b.trial))
    });

    let csv_path = config.out_dir.join("convergence.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(
        w,
        "manifold,method,weight,l,kappa,K_policy,N,trial,seed,FE,IE,inf_norm_inv,mean_K,max_gamma_fail,wall_time_s"
    )?;
    for r in &records {
        let mc = &method_configs[r.method_idx];
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            spec.name(),
            mc.method.label(),
            mc.effective_weight().label(),
            mc.l,
            mc.kappa,
            mc.policy.label(),
            r.n,
            r.trial,
            r.seed,
            r.fe,
            r.ie,
            r.inf_norm,
            r.mean_k,
            r.gamma_fail,
            r.wall_time
        )?;
    }
    drop(w);

    if config.eigenvalues.is_some() {
        let eig_path = config.out_dir.join("eigenvalues.csv");
        let mut w = std::io::BufWriter::new(std::fs::File::create(&eig_path)?);
        writeln!(w, "manifold,method,weight,N,seed,idx,re,im")?;
        for (mi, n, seed, idx, re, im) in &eigen_rows {
            let mc = &method_configs[*mi];
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                spec.name(),
                mc.method.label(),
                mc.effective_weight().label(),
                n,
                seed,
                idx,
                re,
                im
            )?;
        }
    }

    println!(
        "wrote {} rows to {} (manifest: {})",
        records.len(),
        csv_path.display(),
        manifest_path.display()
    );
    Ok(())
}
