//! Verification suites exposed on the command line.

use anyhow::{bail, Context};
use beltrami::assembly::{assemble, forward_error};
use beltrami::local_ops::{AutoPolicy, Method, MethodConfig, StencilPolicy, WeightScheme};
use beltrami::manifolds::{ManifoldSpec, SamplingMode, ALL_MANIFOLDS};
use beltrami::verification::{
    diameter_statistics, fd_laplacian_oracle, fit_loglog, regularization_sweep,
    reproduction_suite,
};
use clap::Args;
use interior::uniform_params;
use std::io::Write;
use std::path::PathBuf;

#[derive(Args)]
pub struct DiagnoseArgs {
    /// oracle | reproduction | ridge | diameters | fe-ratio | slopes.
    #[arg(long)]
    suite: String,
    #[arg(long, default_value = "ellipse1d")]
    manifold: String,
    #[arg(long, default_value_t = 1600)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    l: usize,
    #[arg(long, default_value_t = 3)]
    kappa: u32,
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    trials: usize,
    /// Comma-separated N list for `diameters`.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// Stencil size for `diameters`.
    #[arg(long, default_value_t = 30)]
    k: usize,
    /// Existing convergence.csv for `slopes`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Output directory for suite CSVs.
    #[arg(long, default_value = "diagnostics")]
    out: PathBuf,
}

// Interior parameter draws for the oracle suite, from a splitmix stream so
// the CLI does not need its own RNG dependency.
mod interior {
    use beltrami::manifolds::ManifoldSpec;

    pub fn uniform_params(spec: ManifoldSpec, count: usize, seed: u64) -> Vec<Vec<f64>> {
        // Deterministic low-discrepancy-ish stream from a splitmix walk.
        let mut state = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut next = move || {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z = z ^ (z >> 31);
            (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
        };
        let dom = spec.param_domain();
        (0..count)
            .map(|_| dom.iter().map(|(a, b)| a + (b - a) * (0.05 + 0.9 * next())).collect())
            .collect()
    }
}

pub fn run(args: DiagnoseArgs) -> anyhow::Result<()> {
    std::fs::create_dir_all(&args.out)?;
    match args.suite.as_str() {
        "oracle" => oracle_suite(&args),
        "reproduction" => reproduction(&args),
        "ridge" => ridge(&args),
        "diameters" => diameters(&args),
        "fe-ratio" => fe_ratio(&args),
        "slopes" => slopes(&args),
        other => bail!(beltrami::Error::Config(format!("unknown diagnose suite `{other}`"))),
    }
}

fn grbffd_config(args: &DiagnoseArgs, d: usize) -> MethodConfig {
    let m = beltrami::local_ops::binomial(args.l + d, d);
    MethodConfig {
        method: Method::GrbfFd,
        weight: WeightScheme::OneOverK,
        l: args.l,
        kappa: args.kappa,
        delta: 1e-6,
        policy: StencilPolicy::Auto(AutoPolicy {
            k0: args.k0.unwrap_or(2 * m),
            k_step: 2,
            gamma_th: 3.0,
            k_max: None,
        }),
    }
}

fn oracle_suite(args: &DiagnoseArgs) -> anyhow::Result<()> {
    let mut worst_overall = 0.0f64;
    for spec in ALL_MANIFOLDS {
        let mut worst = 0.0f64;
        for p in uniform_params(spec, args.trials.min(200), args.seed) {
            let truth = spec.lap_f_true(&p);
            let oracle = fd_laplacian_oracle(spec, &p, None)?;
            worst = worst.max((truth - oracle).abs() / (1.0 + truth.abs()));
        }
        let ok = worst < 1e-6;
        println!(
            "oracle {:<16} max rel deviation {:.3e}  [{}]",
            spec.name(),
            worst,
            if ok { "ok" } else { "FAIL" }
        );
        worst_overall = worst_overall.max(worst);
    }
    if worst_overall >= 1e-6 {
        bail!(beltrami::Error::OracleUndefined(format!(
            "truth Laplacian deviates from the finite-difference oracle by {worst_overall:.3e}"
        )));
    }
    Ok(())
}

fn reproduction(args: &DiagnoseArgs) -> anyhow::Result<()> {
    let spec: ManifoldSpec = args.manifold.parse()?;
    let cloud = spec.sample_points(args.n, SamplingMode::Random, args.seed)?;
    let config = grbffd_config(args, spec.d());
    let rep = reproduction_suite(&cloud, &config, args.trials, args.seed ^ 0xabcd)?;
    let mut sums = rep.weight_sums.clone();
    sums.sort_by(f64::total_cmp);
    let median = sums[sums.len() / 2];
    let max = sums.last().copied().unwrap_or(f64::NAN);
    println!("reproduction: max scaled defect {:.3e}", rep.max_scaled_defect);
    println!("weight sums * D^2: median {:.3e}, max {:.3e}", median, max);
    let ok = rep.max_scaled_defect <= 1e-7 && max <= 3.0 * median;
    println!("[{}]", if ok { "ok" } else { "FAIL" });
    if !ok {
        bail!(beltrami::Error::Argument("reproduction audit failed".into()));
    }
    Ok(())
}

fn ridge(args: &DiagnoseArgs) -> anyhow::Result<()> {
    let spec: ManifoldSpec = args.manifold.parse()?;
    let cloud = spec.sample_points(args.n, SamplingMode::Random, args.seed)?;
    let config = MethodConfig {
        policy: StencilPolicy::Fixed { k: args.k0.unwrap_or(30) },
        ..grbffd_config(args, spec.d())
    };
    let deltas: Vec<f64> = (0..9).map(|i| 10f64.powi(-(i as i32))).collect();
    let pts = regularization_sweep(&cloud, 0, &config, &deltas, 200, args.seed)?;
    let path = args.out.join("ridge_constants.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(w, "delta,c3,c4")?;
    for p in &pts {
        writeln!(w, "{},{},{}", p.delta, p.c3, p.c4)?;
    }
    // Fit on the small-delta tail where the power laws hold.
    let tail: Vec<_> = pts.iter().filter(|p| p.delta <= 1e-3).collect();
    let ds: Vec<f64> = tail.iter().map(|p| p.delta).collect();
    let c3fit = fit_loglog(&ds, &tail.iter().map(|p| p.c3).collect::<Vec<_>>());
    let c4fit = fit_loglog(&ds, &tail.iter().map(|p| p.c4).collect::<Vec<_>>());
    println!(
        "ridge constants: c3 slope {:.3} (+/- {:.3}), c4 slope {:.3} (+/- {:.3}) -> {}",
        c3fit.slope,
        c3fit.stderr,
        c4fit.slope,
        c4fit.stderr,
        path.display()
    );
    Ok(())
}

fn diameters(args: &DiagnoseArgs) -> anyhow::Result<()> {
    let spec: ManifoldSpec = args.manifold.parse()?;
    let ns = args
        .ns
        .clone()
        .unwrap_or_else(|| vec![2000, 4000, 8000, 16000, 32000]);
    let stats = diameter_statistics(spec, &ns, args.k, args.trials.clamp(1, 16), args.seed)?;
    let path = args.out.join("diameters.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(w, "N,median,mean,sigma")?;
    for s in &stats {
        writeln!(w, "{},{},{},{}", s.n, s.median, s.mean, s.sigma)?;
    }
    let xs: Vec<f64> = stats.iter().map(|s| (s.n as f64).ln() / s.n as f64).collect();
    let ys: Vec<f64> = stats.iter().map(|s| s.median).collect();
    let fit = fit_loglog(&xs, &ys);
    println!(
        "median D vs log(N)/N slope {:.3} (+/- {:.3}, 1/d = {:.3}) -> {}",
        fit.slope,
        fit.stderr,
        1.0 / spec.d() as f64,
        path.display()
    );
    Ok(())
}

fn fe_ratio(args: &DiagnoseArgs) -> anyhow::Result<()> {
    let spec = ManifoldSpec::Ellipse1d;
    let config = MethodConfig {
        policy: StencilPolicy::Fixed { k: args.k0.unwrap_or(30) },
        ..grbffd_config(args, 1)
    };
    let well = spec.sample_points(args.n, SamplingMode::WellSampled, args.seed)?;
    let rand = spec.sample_points(args.n, SamplingMode::Random, args.seed)?;
    let fe_well = {
        let op = assemble(&well, &config)?;
        forward_error(&op, &well.f_values, &well.lap_values)
    };
    let fe_rand = {
        let op = assemble(&rand, &config)?;
        forward_error(&op, &rand.f_values, &rand.lap_values)
    };
    println!(
        "FE well-sampled {:.4e}, random {:.4e}, ratio {:.2}",
        fe_well,
        fe_rand,
        fe_rand / fe_well
    );
    Ok(())
}

fn slopes(args: &DiagnoseArgs) -> anyhow::Result<()> {
    let path = args
        .csv
        .as_ref()
        .ok_or_else(|| beltrami::Error::Config("--csv is required for slopes".into()))?;
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| beltrami::Error::Format("empty CSV".into()))?
        .split(',')
        .collect();
    let col = |name: &str| -> anyhow::Result<usize> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| beltrami::Error::Format(format!("missing column {name}")).into())
    };
    let (c_method, c_weight, c_n, c_fe, c_ie) =
        (col("method")?, col("weight")?, col("N")?, col("FE")?, col("IE")?);
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<String, BTreeMap<usize, Vec<(f64, f64)>>> = BTreeMap::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let key = format!("{}-{}", f[c_method], f[c_weight]);
        let n: usize = f[c_n].parse()?;
        let fe: f64 = f[c_fe].parse()?;
        let ie: f64 = f[c_ie].parse()?;
        groups.entry(key).or_default().entry(n).or_default().push((fe, ie));
    }
    for (key, by_n) in &groups {
        let ns: Vec<f64> = by_n.keys().map(|&n| n as f64).collect();
        let fe_means: Vec<f64> = by_n
            .values()
            .map(|v| v.iter().map(|(fe, _)| fe).sum::<f64>() / v.len() as f64)
            .collect();
        let ie_means: Vec<f64> = by_n
            .values()
            .map(|v| v.iter().map(|(_, ie)| ie).sum::<f64>() / v.len() as f64)
            .collect();
        if ns.len() < 2 {
            println!("{key}: need at least two N values for a slope");
            continue;
        }
        let fe_fit = fit_loglog(&ns, &fe_means);
        let ie_fit = fit_loglog(&ns, &ie_means);
        println!(
            "{key}: FE slope {:.3} (+/- {:.3}), IE slope {:.3} (+/- {:.3})",
            fe_fit.slope, fe_fit.stderr, ie_fit.slope, ie_fit.stderr
        );
    }
    Ok(())
}
