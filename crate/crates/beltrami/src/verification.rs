//! Independent numerical oracles and empirical checks: a finite-difference
//! intrinsic Laplacian, polynomial-reproduction audits of assembled weights,
//! ridge-constant sweeps, and stencil-diameter statistics under refinement.

use crate::error::{Error, Result};
use crate::local_ops::{
    auto_tune_row, monomial_indices, phs_laplacian_row_at, phs_matrix, weight_matrix, MethodConfig,
    WeightScheme, Weighting,
};
use crate::manifolds::{invert_small, ManifoldSpec, PointCloud, SamplingMode};
use crate::stencils::{build_knn_index, monge_project};
use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 4th-order central difference of a scalar function along coordinate `i`.
fn fd_partial(f: &impl Fn(&[f64]) -> f64, p: &[f64], i: usize, h: f64) -> f64 {
    let mut q = p.to_vec();
    let mut at = |s: f64| {
        q[i] = p[i] + s;
        f(&q)
    };
    (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
}

/// Metric tensor from 4th-order differences of the embedding.
fn fd_metric(spec: ManifoldSpec, p: &[f64], h: f64) -> ([[f64; 4]; 4], f64) {
    let (d, n) = (spec.d(), spec.n());
    let mut jac = [[0.0f64; 32]; 4];
    for j in 0..d {
        let mut q = p.to_vec();
        let mut at = |s: f64| {
            q[j] = p[j] + s;
            spec.embed(&q)
        };
        let (a2, a1, b1, b2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
        for a in 0..n {
            jac[j][a] = (-a2[a] + 8.0 * a1[a] - 8.0 * b1[a] + b2[a]) / (12.0 * h);
        }
    }
    let mut g = [[0.0f64; 4]; 4];
    for i in 0..d {
        for j in 0..d {
            g[i][j] = (0..n).map(|a| jac[i][a] * jac[j][a]).sum();
        }
    }
    let det = match d {
        1 => g[0][0],
        2 => g[0][0] * g[1][1] - g[0][1] * g[1][0],
        _ => {
            // LU determinant on the small matrix.
            let mut a = g;
            let mut det = 1.0;
            for c in 0..d {
                let mut piv = c;
                for r in c + 1..d {
                    if a[r][c].abs() > a[piv][c].abs() {
                        piv = r;
                    }
                }
                if piv != c {
                    a.swap(c, piv);
                    det = -det;
                }
                det *= a[c][c];
                if a[c][c] == 0.0 {
                    break;
                }
                for r in c + 1..d {
                    let f = a[r][c] / a[c][c];
                    for k in c..d {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
            det
        }
    };
    (g, det)
}

/// One divergence-form pass at step `h`; 4th order in `h`.
fn lap_div_form(
    spec: ManifoldSpec,
    f: &impl Fn(&[f64]) -> f64,
    p: &[f64],
    h: f64,
) -> Result<f64> {
    let d = spec.d();
    let flux = |q: &[f64], i: usize| -> Result<f64> {
        let (g, det) = fd_metric(spec, q, h);
        if det < 1e-12 {
            return Err(Error::OracleUndefined(format!(
                "metric determinant {det:.3e} at {q:?} on {}",
                spec.name()
            )));
        }
        let ginv = invert_small(&g, d);
        let mut v = 0.0;
        for j in 0..d {
            v += ginv[i][j] * fd_partial(f, q, j, h);
        }
        Ok(det.sqrt() * v)
    };
    let (_, det0) = fd_metric(spec, p, h);
    if det0 < 1e-12 {
        return Err(Error::OracleUndefined(format!(
            "metric determinant {det0:.3e} at {p:?} on {}",
            spec.name()
        )));
    }
    let mut div = 0.0;
    for i in 0..d {
        let mut q = p.to_vec();
        let mut at = |s: f64| {
            q[i] = p[i] + s;
            flux(&q, i)
        };
        let (a2, a1, b1, b2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
        div += (-a2 + 8.0 * a1 - 8.0 * b1 + b2) / (12.0 * h);
    }
    Ok(div / det0.sqrt())
}

/// Finite-difference Laplace-Beltrami oracle for an arbitrary scalar field on
/// the chart: divergence form with 4th-order central differences, Richardson
/// extrapolated over steps `(h, h/2)`.
pub fn fd_laplacian_oracle_of(
    spec: ManifoldSpec,
    f: &impl Fn(&[f64]) -> f64,
    params: &[f64],
    step: Option<f64>,
) -> Result<f64> {
    let extent = spec
        .param_domain()
        .iter()
        .map(|(a, b)| b - a)
        .fold(0.0f64, f64::max);
    let h = step.unwrap_or(1e-3 * extent);
    let coarse = lap_div_form(spec, f, params, h)?;
    let fine = lap_div_form(spec, f, params, h / 2.0)?;
    Ok((16.0 * fine - coarse) / 15.0)
}

/// Oracle applied to the manifold's manufactured solution.
pub fn fd_laplacian_oracle(spec: ManifoldSpec, params: &[f64], step: Option<f64>) -> Result<f64> {
    fd_laplacian_oracle_of(spec, &|q: &[f64]| spec.f_true(q), params, step)
}

#[derive(Clone, Debug)]
pub struct ReproductionReport {
    /// Max over trials and in-space monomials of `defect * D^2`.
    pub max_scaled_defect: f64,
    /// `sum_k |w_k| * D^2` per sampled stencil.
    pub weight_sums: Vec<f64>,
    /// `(D, defect)` pairs for the first out-of-space monomial (degree l+1).
    pub overshoot: Vec<(f64, f64)>,
}

/// Samples `trials` rows of the configured operator and audits the local
/// polynomial reproduction and weight-sum boundedness properties.
pub fn reproduction_suite(
    cloud: &PointCloud,
    config: &MethodConfig,
    trials: usize,
    seed: u64,
) -> Result<ReproductionReport> {
    config.validate(cloud.d, cloud.len)?;
    let index = build_knn_index(cloud);
    let basis = monomial_indices(config.l, cloud.d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_scaled = 0.0f64;
    let mut weight_sums = Vec::with_capacity(trials);
    let mut overshoot = Vec::with_capacity(trials);

    for _ in 0..trials {
        let base = (rng.next_u64() % cloud.len as u64) as usize;
        let row = auto_tune_row(cloud, &index, base, config)?;
        let stencil = monge_project(cloud, &row.neighbors)?;
        let d2 = stencil.d_max * stencil.d_max;

        for (j, alpha) in basis.indices.iter().enumerate() {
            let truth = if basis.pure_quadratic[j] { 2.0 } else { 0.0 };
            let applied: f64 = (0..stencil.k())
                .map(|k| {
                    let theta = stencil.theta_row(k);
                    let mut v = row.weights[k];
                    for i in 0..cloud.d {
                        v *= theta[i].powi(alpha[i] as i32);
                    }
                    v
                })
                .sum();
            max_scaled = max_scaled.max((applied - truth).abs() * d2);
        }
        weight_sums.push(row.weights.iter().map(|w| w.abs()).sum::<f64>() * d2);

        // Degree l+1 pure power of the first coordinate.
        let deg = (config.l + 1) as i32;
        let applied: f64 = (0..stencil.k())
            .map(|k| row.weights[k] * stencil.theta_row(k)[0].powi(deg))
            .sum();
        overshoot.push((stencil.d_max, applied.abs()));
    }
    Ok(ReproductionReport { max_scaled_defect: max_scaled, weight_sums, overshoot })
}

#[derive(Clone, Copy, Debug)]
pub struct RegularizationPoint {
    pub delta: f64,
    pub c3: f64,
    pub c4: f64,
}

/// Sweeps the ridge parameter at one stencil and reports the two 1-norm
/// maxima governing the PHS correction: `||u (Phi' L Phi + d^2 I)^-1||_1` and
/// the same with a trailing `Phi' L`. The maximum runs over the stencil nodes
/// and `resample` fresh points drawn from the stencil's parameter box.
pub fn regularization_sweep(
    cloud: &PointCloud,
    base: usize,
    config: &MethodConfig,
    deltas: &[f64],
    resample: usize,
    seed: u64,
) -> Result<Vec<RegularizationPoint>> {
    if deltas.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Argument("ridge sweep deltas must be positive".into()));
    }
    let index = build_knn_index(cloud);
    let k = match config.policy {
        crate::local_ops::StencilPolicy::Fixed { k } => k,
        crate::local_ops::StencilPolicy::Auto(a) => a.k0,
    };
    let stencil = monge_project(cloud, &index.knn(base, k)?)?;
    let phi = phs_matrix(&stencil, config.kappa);
    let lambda = weight_matrix(WeightScheme::OneOverK, &stencil, None, config.delta);
    let lam = match &lambda {
        Weighting::Diag(d) => d.clone(),
        Weighting::Full(_) => unreachable!(),
    };

    // Evaluation rows: PHS Laplacian rows at the nodes and at resampled
    // nearby points, all in normalized coordinates.
    let mut eval_rows: Vec<Vec<f64>> = (0..k)
        .map(|node| phs_laplacian_row_at(&stencil, config.kappa, stencil.theta_norm_row(node)))
        .collect();
    if resample > 0 {
        let spec = cloud.spec()?;
        let d = cloud.d;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &j in &stencil.neighbors {
            for (c, &v) in cloud.param(j).iter().enumerate() {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uni = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let x0 = cloud.point(base);
        for _ in 0..resample {
            let p: Vec<f64> = (0..d).map(|c| lo[c] + (hi[c] - lo[c]) * uni()).collect();
            let x = spec.embed(&p);
            let theta: Vec<f64> = (0..d)
                .map(|i| {
                    let t = cloud.frame_vec(base, i);
                    (0..cloud.n).map(|a| t[a] * (x[a] - x0[a])).sum::<f64>() / stencil.d_max
                })
                .collect();
            eval_rows.push(phs_laplacian_row_at(&stencil, config.kappa, &theta));
        }
    }

    let lphi = lambda.apply(&phi);
    let gram = phi.transpose() * &lphi;
    let mut out = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut b = gram.clone();
        for i in 0..k {
            b[(i, i)] += delta * delta;
        }
        let solver = b.llt(Side::Lower).map_err(|_| Error::Argument(
            "ridge matrix unexpectedly indefinite".into(),
        ))?;
        let mut c3 = 0.0f64;
        let mut c4 = 0.0f64;
        for row in &eval_rows {
            let rhs = Mat::from_fn(k, 1, |i, _| row[i]);
            let z = solver.solve(&rhs);
            c3 = c3.max((0..k).map(|i| z[(i, 0)].abs()).sum());
            let pz = &phi * &z;
            c4 = c4.max((0..k).map(|i| (lam[i] * pz[(i, 0)]).abs()).sum());
        }
        out.push(RegularizationPoint { delta, c3, c4 });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct DiameterStats {
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub sigma: f64,
}

/// Stencil-diameter statistics across refinement: for each cloud size,
/// `trials` independent clouds are sampled and `D_max` is measured at 100
/// random base points per cloud.
pub fn diameter_statistics(
    spec: ManifoldSpec,
    ns: &[usize],
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<DiameterStats>> {
    let mut out = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut values = Vec::with_capacity(trials * 100);
        for t in 0..trials {
            let cloud_seed = seed ^ (n as u64).wrapping_mul(0x9e37_79b9) ^ (t as u64) << 32;
            let cloud = spec.sample_points(n, SamplingMode::Random, cloud_seed)?;
            let index = build_knn_index(&cloud);
            let mut rng = ChaCha8Rng::seed_from_u64(cloud_seed.wrapping_add(1));
            for _ in 0..100 {
                let base = (rng.next_u64() % n as u64) as usize;
                let stencil = monge_project(&cloud, &index.knn(base, k)?)?;
                values.push(stencil.d_max);
            }
        }
        values.sort_by(f64::total_cmp);
        let median = values[values.len() / 2];
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
        out.push(DiameterStats { n, median, mean, sigma: var.sqrt() });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> SlopeFit {
    assert!(xs.len() == ys.len() && xs.len() >= 2);
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let dof = (lx.len() as f64 - 2.0).max(1.0);
    SlopeFit { slope, intercept, stderr: (ss_res / dof / sxx).sqrt() }
}

/// Convenience max-norm relative difference used by the oracle tests.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_ops::{Method, StencilPolicy};
    use crate::manifolds::ALL_MANIFOLDS;

    fn interior_params(spec: ManifoldSpec, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uni = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let dom = spec.param_domain();
        (0..count)
            .map(|_| dom.iter().map(|(a, b)| a + (b - a) * (0.05 + 0.9 * uni())).collect())
            .collect()
    }

    #[test]
    fn oracle_matches_torus_eigenfunction() {
        let spec = ManifoldSpec::FlatTorus3d;
        for p in interior_params(spec, 25, 1) {
            let want = -3.0 * spec.f_true(&p);
            let got = fd_laplacian_oracle(spec, &p, None).unwrap();
            assert!((got - want).abs() <= 1e-8 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }

    #[test]
    fn oracle_matches_ellipse_closed_form() {
        let spec = ManifoldSpec::Ellipse1d;
        for p in interior_params(spec, 50, 2) {
            let want = spec.lap_f_true(&p);
            let got = fd_laplacian_oracle(spec, &p, None).unwrap();
            assert!((got - want).abs() <= 1e-8 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }

    #[test]
    fn oracle_annihilates_constants() {
        let spec = ManifoldSpec::Rbc2d;
        for p in interior_params(spec, 10, 3) {
            let got = fd_laplacian_oracle_of(spec, &|_q: &[f64]| 4.2, &p, None).unwrap();
            assert!(got.abs() <= 1e-10, "constant Laplacian {got}");
        }
    }

    #[test]
    fn truth_laplacians_match_oracle_everywhere() {
        for spec in ALL_MANIFOLDS {
            for p in interior_params(spec, 30, 4) {
                let truth = spec.lap_f_true(&p);
                let oracle = fd_laplacian_oracle(spec, &p, None).unwrap();
                assert!(
                    (truth - oracle).abs() <= 1e-6 * (1.0 + truth.abs()),
                    "{}: {truth} vs {oracle} at {p:?}",
                    spec.name()
                );
            }
        }
    }

    #[test]
    fn oracle_self_consistency_under_step_refinement() {
        let spec = ManifoldSpec::BumpySphere2d;
        for p in interior_params(spec, 10, 5) {
            let a = fd_laplacian_oracle(spec, &p, Some(2e-3)).unwrap();
            let b = fd_laplacian_oracle(spec, &p, Some(1e-3)).unwrap();
            assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn oracle_undefined_at_bumpy_pole() {
        let res = fd_laplacian_oracle(ManifoldSpec::BumpySphere2d, &[1e-9, 1.0], None);
        assert!(matches!(res, Err(Error::OracleUndefined(_))));
    }

    #[test]
    fn reproduction_suite_on_ellipse() {
        let cloud = ManifoldSpec::Ellipse1d.sample_points(1200, SamplingMode::Random, 5).unwrap();
        let cfg = MethodConfig {
            method: Method::GrbfFd,
            weight: WeightScheme::OneOverK,
            l: 4,
            kappa: 3,
            delta: 1e-6,
            policy: StencilPolicy::auto(10),
        };
        let rep = reproduction_suite(&cloud, &cfg, 40, 9).unwrap();
        assert!(rep.max_scaled_defect <= 1e-7, "defect {}", rep.max_scaled_defect);
        let max = rep.weight_sums.iter().fold(0.0f64, |a, &b| a.max(b));
        let mut sorted = rep.weight_sums.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!(max <= 3.0 * median, "weight sums unbounded: max {max}, median {median}");
    }

    #[test]
    fn overshoot_defect_scales_with_diameter() {
        // Out-of-space monomial defect should shrink like D^(l-1) across a
        // refinement sweep; check the regression slope is clearly positive.
        let cfg = MethodConfig {
            method: Method::GrbfFd,
            weight: WeightScheme::OneOverK,
            l: 4,
            kappa: 3,
            delta: 1e-6,
            policy: StencilPolicy::auto(10),
        };
        let mut ds = Vec::new();
        let mut defects = Vec::new();
        for n in [400usize, 800, 1600, 3200] {
            let cloud = ManifoldSpec::Ellipse1d.sample_points(n, SamplingMode::Random, 6).unwrap();
            let rep = reproduction_suite(&cloud, &cfg, 25, 10).unwrap();
            let d_mean = rep.overshoot.iter().map(|(d, _)| d).sum::<f64>() / 25.0;
            let def_mean = rep.overshoot.iter().map(|(_, v)| v).sum::<f64>() / 25.0;
            ds.push(d_mean);
            defects.push(def_mean);
        }
        let fit = fit_loglog(&ds, &defects);
        assert!(
            (fit.slope - 3.0).abs() <= 1.2,
            "defect slope {} should sit near l - 1 = 3",
            fit.slope
        );
    }

    #[test]
    fn ridge_sweep_decreases_for_large_delta() {
        let cloud = ManifoldSpec::Ellipse1d.sample_points(1600, SamplingMode::Random, 7).unwrap();
        let cfg = MethodConfig {
            method: Method::GrbfFd,
            weight: WeightScheme::OneOverK,
            l: 4,
            kappa: 3,
            delta: 1e-6,
            policy: StencilPolicy::Fixed { k: 30 },
        };
        let pts =
            regularization_sweep(&cloud, 11, &cfg, &[1.0, 3.0, 10.0], 0, 1).unwrap();
        assert!(pts[0].c3 >= pts[1].c3 && pts[1].c3 >= pts[2].c3);
        assert!(pts[0].c4 >= pts[1].c4 && pts[1].c4 >= pts[2].c4);
    }

    #[test]
    fn diameter_statistics_shrink_with_n() {
        let stats = diameter_statistics(ManifoldSpec::Ellipse1d, &[400, 1600], 30, 2, 3).unwrap();
        assert!(stats[1].median < stats[0].median);
        assert!(stats[1].sigma < stats[0].sigma * 1.5);
    }

    #[test]
    fn loglog_fit_recovers_synthetic_slope() {
        let xs: Vec<f64> = vec![100.0, 200.0, 400.0, 800.0];
        let ys: Vec<f64> = xs.iter().map(|x| 5.0 * x.powf(-2.5)).collect();
        let fit = fit_loglog(&xs, &ys);
        assert!((fit.slope + 2.5).abs() < 1e-12);
        assert!(fit.stderr < 1e-12);
    }

}
