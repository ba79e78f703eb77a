//! Global operator assembly, screened-Poisson solves, and the stability
//! diagnostics: forward/inverse errors, an infinity-norm estimate of the
//! system inverse, and leading eigenvalues near a shift.

use crate::error::{Error, Result};
use crate::local_ops::{auto_tune_row, LaplacianRow, MethodConfig};
use crate::manifolds::PointCloud;
use crate::sparse::{dot, gmres, norm2, Csr, GmresOptions, GmresOutcome, Ilu0};
use crate::stencils::build_knn_index;
use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Largest system handed to the sparse direct factorization; beyond this the
/// preconditioned Krylov path takes over.
pub const DIRECT_LIMIT: usize = 20_000;
/// Systems larger than this try the Krylov path first: fill-in on the
/// neighbor graphs of higher-dimensional manifolds makes direct
/// factorization far slower than ILU(0)-GMRES on these strongly
/// diagonally dominant systems. Direct remains the fallback.
pub const ITERATIVE_FIRST: usize = 4_000;
/// Largest system eigensolved densely; beyond this shift-invert Arnoldi runs.
pub const DENSE_EIG_LIMIT: usize = 3_000;
/// Largest system for the exact (column-by-column) inverse infinity norm.
pub const EXACT_NORM_LIMIT: usize = 2_000;

/// Row-sparse discrete Laplace-Beltrami operator plus assembly metadata.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    pub n: usize,
    pub rows: Vec<LaplacianRow>,
    pub config: MethodConfig,
}

impl SparseOperator {
    /// CSR of `alpha I + beta L`.
    pub fn csr_combo(&self, alpha: f64, beta: f64) -> Csr {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut entries: Vec<(usize, f64)> = r
                    .neighbors
                    .iter()
                    .zip(&r.weights)
                    .map(|(&j, &w)| (j, beta * w))
                    .collect();
                if alpha != 0.0 {
                    entries.push((r.base, alpha));
                }
                entries
            })
            .collect();
        Csr::from_rows(self.n, self.n, rows)
    }

    pub fn csr_l(&self) -> Csr {
        self.csr_combo(0.0, 1.0)
    }

    pub fn csr_i_minus_l(&self) -> Csr {
        self.csr_combo(1.0, -1.0)
    }

    /// L f.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.neighbors.iter().zip(&r.weights).map(|(&j, &w)| w * f[j]).sum())
            .collect()
    }

    pub fn mean_k(&self) -> f64 {
        self.rows.iter().map(|r| r.k_final as f64).sum::<f64>() / self.n as f64
    }

    pub fn max_k(&self) -> usize {
        self.rows.iter().map(|r| r.k_final).max().unwrap_or(0)
    }

    /// Rows that exhausted stencil growth without meeting the sign and spike
    /// conditions.
    pub fn unconverged_count(&self) -> usize {
        self.rows.iter().filter(|r| r.unconverged).count()
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.weights.iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// Assembles the discrete operator row by row (auto-tuned or fixed K).
pub fn assemble(cloud: &PointCloud, config: &MethodConfig) -> Result<SparseOperator> {
    config.validate(cloud.d, cloud.len)?;
    let index = build_knn_index(cloud);
    let mut rows = Vec::with_capacity(cloud.len);
    for i in 0..cloud.len {
        rows.push(auto_tune_row(cloud, &index, i, config)?);
    }
    Ok(SparseOperator { n: cloud.len, rows, config: *config })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Direct,
    Iterative,
}

impl SolverKind {
    pub fn label(&self) -> &'static str {
        match self {
            SolverKind::Direct => "direct",
            SolverKind::Iterative => "iterative",
        }
    }
}

/// Outcome of one screened-Poisson solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    /// Nodal solution values.
    pub f: Vec<f64>,
    /// Final relative residual of `(I - L) F = h`.
    pub residual: f64,
    pub solver: SolverKind,
    pub iterations: usize,
    pub wall_time: f64,
    pub fe: Option<f64>,
    pub ie: Option<f64>,
    pub inf_norm_inv: Option<f64>,
}

fn residual_of(b: &Csr, x: &[f64], rhs: &[f64]) -> f64 {
    let mut r = vec![0.0; rhs.len()];
    b.matvec(x, &mut r);
    for i in 0..rhs.len() {
        r[i] = rhs[i] - r[i];
    }
    norm2(&r) / norm2(rhs).max(f64::MIN_POSITIVE)
}

/// Sparse-direct solve with iterative refinement.
fn direct_solve(b: &Csr, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, f64)> {
    let n = b.n_rows;
    let sp = b.to_faer();
    let lu = sp.sp_lu().map_err(|e| Error::SolverFailure {
        context: format!("sparse LU factorization failed: {e:?}"),
        residual: f64::INFINITY,
    })?;
    let rhs_m = Mat::from_fn(n, 1, |i, _| rhs[i]);
    let sol = lu.solve(&rhs_m);
    let mut x: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
    let mut res = residual_of(b, &x, rhs);
    for _ in 0..2 {
        if res <= tol {
            break;
        }
        let mut r = vec![0.0; n];
        b.matvec(&x, &mut r);
        let r_m = Mat::from_fn(n, 1, |i, _| rhs[i] - r[i]);
        let dx = lu.solve(&r_m);
        for i in 0..n {
            x[i] += dx[(i, 0)];
        }
        res = residual_of(b, &x, rhs);
    }
    Ok((x, res))
}

fn iterative_solve(b: &Csr, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, f64, usize)> {
    let ilu = Ilu0::new(b)?;
    let opts = GmresOptions { tol, ..GmresOptions::default() };
    let GmresOutcome { x, iterations, residual, .. } = gmres(b, rhs, Some(&ilu), false, &opts);
    Ok((x, residual, iterations))
}

/// Solves `(I - L) F = h` to the requested relative residual.
pub fn solve_screened_poisson(op: &SparseOperator, h: &[f64], tol: f64) -> Result<SolveReport> {
    if h.len() != op.n {
        return Err(Error::Argument(format!(
            "right-hand side has length {} but the operator is {}x{}",
            h.len(),
            op.n,
            op.n
        )));
    }
    let start = Instant::now();
    let b = op.csr_i_minus_l();
    let (x, res, solver, iters) = solve_system(&b, h, tol)?;
    Ok(SolveReport {
        f: x,
        residual: res,
        solver,
        iterations: iters,
        wall_time: start.elapsed().as_secs_f64(),
        fe: None,
        ie: None,
        inf_norm_inv: None,
    })
}

/// Solves a general row-sparse system to the requested relative residual,
/// picking direct or Krylov by size and falling back on trouble.
pub fn solve_system(b: &Csr, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, f64, SolverKind, usize)> {
    let n = b.n_rows;
    let direct_first = n <= ITERATIVE_FIRST;
    let mut outcome: Option<(Vec<f64>, f64, SolverKind, usize)> = None;
    if direct_first {
        if let Ok((x, res)) = direct_solve(b, rhs, tol) {
            if res <= tol {
                outcome = Some((x, res, SolverKind::Direct, 1));
            }
        }
    }
    if outcome.is_none() {
        match iterative_solve(b, rhs, tol) {
            Ok((x, res, iters)) if res <= tol => {
                outcome = Some((x, res, SolverKind::Iterative, iters))
            }
            other => {
                // Krylov stalled (or ILU broke down): direct factorization is
                // the robust fallback within its size range.
                if !direct_first && n <= DIRECT_LIMIT {
                    if let Ok((x, res)) = direct_solve(b, rhs, tol) {
                        outcome = Some((x, res, SolverKind::Direct, 1));
                    }
                }
                if outcome.is_none() {
                    if let Ok((x, res, iters)) = other {
                        outcome = Some((x, res, SolverKind::Iterative, iters));
                    }
                }
            }
        }
    }
    let (x, res, solver, iters) = outcome.ok_or(Error::SolverFailure {
        context: format!("linear solve (n = {n})"),
        residual: f64::INFINITY,
    })?;
    if res > tol {
        return Err(Error::SolverFailure {
            context: format!("linear solve (n = {n})"),
            residual: res,
        });
    }
    Ok((x, res, solver, iters))
}

/// Max-norm discrepancy between the analytic Laplacian values and `L f`.
pub fn forward_error(op: &SparseOperator, f: &[f64], lap_f: &[f64]) -> f64 {
    op.apply(f)
        .iter()
        .zip(lap_f)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Max-norm discrepancy between the numerical and true solutions.
pub fn inverse_error(f_num: &[f64], f_true: &[f64]) -> f64 {
    f_num.iter().zip(f_true).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Column-by-column inverse; only for small systems.
    Exact,
    /// Hager-Higham style 1-norm estimate on the transpose system.
    Estimate,
}

#[derive(Clone, Copy, Debug)]
pub struct InfNormReport {
    pub value: f64,
    /// Number of linear solves spent.
    pub solves: usize,
}

enum BothWays {
    Direct(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Iterative { b: Csr, ilu: Ilu0 },
}

impl BothWays {
    fn new(b: Csr) -> Result<Self> {
        if b.n_rows <= ITERATIVE_FIRST {
            match b.to_faer().sp_lu() {
                Ok(lu) => return Ok(BothWays::Direct(lu)),
                Err(_) => {}
            }
        }
        let ilu = Ilu0::new(&b)?;
        Ok(BothWays::Iterative { b, ilu })
    }

    fn solve_either(&self, rhs: &[f64], transpose: bool) -> Result<Vec<f64>> {
        match self {
            BothWays::Direct(lu) => {
                let m = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
                let sol = if transpose { lu.solve_transpose(&m) } else { lu.solve(&m) };
                Ok((0..rhs.len()).map(|i| sol[(i, 0)]).collect())
            }
            BothWays::Iterative { b, ilu } => {
                let opts = GmresOptions { tol: 1e-11, ..GmresOptions::default() };
                let out = gmres(b, rhs, Some(ilu), transpose, &opts);
                if out.converged {
                    return Ok(out.x);
                }
                // Stalled Krylov: fall back to a direct factorization when
                // the system is small enough to afford one.
                if b.n_rows <= DIRECT_LIMIT {
                    if let Ok(lu) = b.to_faer().sp_lu() {
                        let m = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
                        let sol = if transpose { lu.solve_transpose(&m) } else { lu.solve(&m) };
                        return Ok((0..rhs.len()).map(|i| sol[(i, 0)]).collect());
                    }
                }
                Err(Error::SolverFailure {
                    context: "norm-estimator inner solve".into(),
                    residual: out.residual,
                })
            }
        }
    }
}

/// Estimates (or computes) the infinity norm of `(I - L)^-1`.
pub fn inf_norm_inverse(op: &SparseOperator, mode: NormMode) -> Result<InfNormReport> {
    let n = op.n;
    let b = op.csr_i_minus_l();
    match mode {
        NormMode::Exact => {
            if n > EXACT_NORM_LIMIT {
                return Err(Error::Argument(format!(
                    "exact inverse norm limited to n <= {EXACT_NORM_LIMIT}, got {n}"
                )));
            }
            let dense = b.to_dense();
            let lu = dense.partial_piv_lu();
            let inv = lu.solve(&Mat::<f64>::identity(n, n));
            let mut norm = 0.0f64;
            for i in 0..n {
                let row: f64 = (0..n).map(|j| inv[(i, j)].abs()).sum();
                norm = norm.max(row);
            }
            Ok(InfNormReport { value: norm, solves: n })
        }
        NormMode::Estimate => {
            // ||B^-1||_inf = ||(B^T)^-1||_1, estimated by Hager's method with
            // the usual extra sweep vector.
            let solver = BothWays::new(b)?;
            let mut solves = 0;
            let mut x = vec![1.0 / n as f64; n];
            let mut est = 0.0f64;
            for iter in 0..5 {
                let y = solver.solve_either(&x, true)?;
                solves += 1;
                est = est.max(y.iter().map(|v| v.abs()).sum());
                let xi: Vec<f64> = y.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect();
                let z = solver.solve_either(&xi, false)?;
                solves += 1;
                let (mut zmax, mut arg) = (0.0f64, 0usize);
                for (j, v) in z.iter().enumerate() {
                    if v.abs() > zmax {
                        zmax = v.abs();
                        arg = j;
                    }
                }
                if iter > 0 && zmax <= dot(&z, &x) {
                    break;
                }
                x = vec![0.0; n];
                x[arg] = 1.0;
            }
            let alt: Vec<f64> = (0..n)
                .map(|i| {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    sign * (1.0 + i as f64 / (n as f64 - 1.0))
                })
                .collect();
            let v = solver.solve_either(&alt, true)?;
            solves += 1;
            let alt_est = 2.0 * v.iter().map(|t| t.abs()).sum::<f64>() / (3.0 * n as f64);
            Ok(InfNormReport { value: est.max(alt_est), solves })
        }
    }
}

fn cmp_by_shift(shift: f64) -> impl Fn(&Complex64, &Complex64) -> std::cmp::Ordering {
    move |a, b| {
        let da = (a - shift).norm();
        let db = (b - shift).norm();
        da.total_cmp(&db)
            .then(a.re.total_cmp(&b.re))
            .then(a.im.total_cmp(&b.im))
    }
}

/// Eigenvalues of `L` nearest `shift`, dense for small systems, shift-invert
/// Arnoldi otherwise.
pub fn leading_eigenvalues(op: &SparseOperator, count: usize, shift: f64) -> Result<Vec<Complex64>> {
    if count == 0 || count > op.n {
        return Err(Error::Argument(format!(
            "eigenvalue count {count} out of range for n = {}",
            op.n
        )));
    }
    if op.n <= DENSE_EIG_LIMIT {
        leading_eigenvalues_dense(op, count, shift)
    } else {
        leading_eigenvalues_arnoldi(op, count, shift)
    }
}

pub fn leading_eigenvalues_dense(
    op: &SparseOperator,
    count: usize,
    shift: f64,
) -> Result<Vec<Complex64>> {
    let dense = op.csr_l().to_dense();
    let mut ev: Vec<Complex64> = dense
        .eigenvalues()
        .map_err(|e| Error::EigenFailure {
            context: format!("dense eigendecomposition failed: {e:?}"),
            residual: f64::NAN,
        })?
        .into_iter()
        .collect();
    ev.sort_by(cmp_by_shift(shift));
    ev.truncate(count);
    Ok(ev)
}

pub fn leading_eigenvalues_arnoldi(
    op: &SparseOperator,
    count: usize,
    shift: f64,
) -> Result<Vec<Complex64>> {
    let n = op.n;
    let b = op.csr_combo(-shift, 1.0); // L - shift I
    enum Inner {
        Direct(faer::sparse::linalg::solvers::Lu<usize, f64>),
        Iterative(Box<(Csr, Ilu0)>),
    }
    let inner = if n <= ITERATIVE_FIRST {
        Inner::Direct(b.to_faer().sp_lu().map_err(|e| Error::SolverFailure {
            context: format!("shift-invert factorization failed: {e:?}"),
            residual: f64::INFINITY,
        })?)
    } else {
        let ilu = Ilu0::new(&b)?;
        Inner::Iterative(Box::new((b, ilu)))
    };
    let mut apply = |v: &[f64]| -> Result<Vec<f64>> {
        match &inner {
            Inner::Direct(lu) => {
                let m = Mat::from_fn(n, 1, |i, _| v[i]);
                let sol = lu.solve(&m);
                Ok((0..n).map(|i| sol[(i, 0)]).collect())
            }
            Inner::Iterative(pair) => {
                let (b, ilu) = (&pair.0, &pair.1);
                let opts = GmresOptions { tol: 1e-12, max_iters: 6000, ..GmresOptions::default() };
                let out = gmres(b, v, Some(ilu), false, &opts);
                // 1e-12 can sit below what ILU-GMRES reaches; accept a slightly
                // looser inner residual and let the Ritz check arbitrate.
                if out.residual > 1e-9 {
                    return Err(Error::SolverFailure {
                        context: "shift-invert inner solve".into(),
                        residual: out.residual,
                    });
                }
                Ok(out.x)
            }
        }
    };

    let ritz_tol = 1e-7;
    let mut m = (2 * count + 40).clamp(count + 20, n);
    let mut last_worst = f64::INFINITY;
    loop {
        let (ritz, exact) = arnoldi_ritz(&mut apply, n, m)?;
        // Transform back, keep the `count` nearest the shift.
        let mut pairs: Vec<(Complex64, f64)> = ritz
            .iter()
            .filter(|(mu, _)| mu.norm() > 0.0)
            .map(|(mu, res)| (shift + mu.inv(), *res / mu.norm()))
            .collect();
        pairs.sort_by(|a, b| cmp_by_shift(shift)(&a.0, &b.0));
        pairs.truncate(count);
        let worst = pairs.iter().map(|(_, r)| *r).fold(0.0f64, f64::max);
        if pairs.len() == count && (exact || worst <= ritz_tol) {
            return Ok(pairs.into_iter().map(|(v, _)| v).collect());
        }
        if m >= n || m >= 400 {
            return Err(Error::EigenFailure {
                context: format!("Arnoldi at subspace dimension {m}"),
                residual: worst,
            });
        }
        if worst >= last_worst && m > 2 * count + 40 {
            return Err(Error::EigenFailure {
                context: format!("Arnoldi stagnated at subspace dimension {m}"),
                residual: worst,
            });
        }
        last_worst = worst;
        m = (2 * m).min(n).min(400);
    }
}

/// Runs `m` Arnoldi steps; returns Ritz values of the projected operator with
/// absolute residual estimates, and whether the subspace became invariant.
fn arnoldi_ritz(
    apply: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    n: usize,
    m: usize,
) -> Result<(Vec<(Complex64, f64)>, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_ba11);
    let mut v0: Vec<f64> =
        (0..n).map(|_| (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) - 0.5).collect();
    let nrm = norm2(&v0);
    for v in &mut v0 {
        *v /= nrm;
    }

    let mut basis = vec![v0];
    let mut h = Mat::<f64>::zeros(m + 1, m);
    let mut m_eff = m;
    let mut exact = false;
    for j in 0..m {
        let mut w = apply(&basis[j])?;
        for _pass in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                h[(i, j)] += hij;
                for t in 0..n {
                    w[t] -= hij * v[t];
                }
            }
        }
        let hn = norm2(&w);
        h[(j + 1, j)] = hn;
        if hn < 1e-13 {
            m_eff = j + 1;
            exact = true;
            break;
        }
        for t in 0..n {
            w[t] /= hn;
        }
        basis.push(w);
    }

    let hm = Mat::from_fn(m_eff, m_eff, |i, j| h[(i, j)]);
    let eig = hm.eigen().map_err(|e| Error::EigenFailure {
        context: format!("Hessenberg eigendecomposition failed: {e:?}"),
        residual: f64::NAN,
    })?;
    let hlast = h[(m_eff, m_eff - 1)];
    let vals = eig.S();
    let vecs = eig.U();
    let out = (0..m_eff)
        .map(|i| {
            let mu = vals[i];
            let resid = if exact { 0.0 } else { hlast * vecs[(m_eff - 1, i)].norm() };
            (Complex64::new(mu.re, mu.im), resid)
        })
        .collect();
    Ok((out, exact))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_ops::{Method, StencilPolicy, WeightScheme};
    use crate::manifolds::{ManifoldSpec, SamplingMode};

    fn ellipse_operator(n: usize, seed: u64, method: Method, k: usize) -> (PointCloud, SparseOperator) {
        let cloud = ManifoldSpec::Ellipse1d.sample_points(n, SamplingMode::Random, seed).unwrap();
        let cfg = MethodConfig {
            method,
            weight: WeightScheme::OneOverK,
            l: 4,
            kappa: 3,
            delta: 1e-6,
            policy: StencilPolicy::Fixed { k },
        };
        let op = assemble(&cloud, &cfg).unwrap();
        (cloud, op)
    }

    #[test]
    fn row_sums_vanish() {
        let (_, op) = ellipse_operator(400, 2, Method::GrbfFd, 30);
        let ones = vec![1.0; 400];
        let reach = op.apply(&ones);
        let wmax = op
            .rows
            .iter()
            .map(|r| r.weights.iter().fold(0.0f64, |a, &b| a.max(b.abs())))
            .fold(0.0f64, f64::max);
        let worst = reach.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(worst <= 1e-8 * wmax, "row sum {worst} vs weight scale {wmax}");
    }

    #[test]
    fn constant_rhs_solves_to_constant() {
        let (_, op) = ellipse_operator(400, 3, Method::GrbfFd, 30);
        let c = 3.7;
        let h = vec![c; 400];
        let rep = solve_screened_poisson(&op, &h, 1e-10).unwrap();
        for v in &rep.f {
            assert!((v - c).abs() <= 1e-10 * c.abs(), "got {v}");
        }
        assert!(rep.residual <= 1e-10);
    }

    #[test]
    fn direct_and_iterative_agree() {
        let (cloud, op) = ellipse_operator(500, 4, Method::Gmls, 30);
        let b = op.csr_i_minus_l();
        let (xd, rd) = direct_solve(&b, &cloud.h_values, 1e-10).unwrap();
        let (xi, ri, _) = iterative_solve(&b, &cloud.h_values, 1e-10).unwrap();
        assert!(rd <= 1e-10 && ri <= 1e-10, "rd {rd} ri {ri}");
        let scale = xd.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for i in 0..500 {
            assert!((xd[i] - xi[i]).abs() <= 1e-7 * scale);
        }
    }

    #[test]
    fn forward_and_inverse_error_definitions() {
        let (cloud, op) = ellipse_operator(400, 5, Method::GrbfFd, 30);
        let lf = op.apply(&cloud.f_values);
        assert_eq!(forward_error(&op, &cloud.f_values, &lf), 0.0);
        assert_eq!(inverse_error(&cloud.f_values, &cloud.f_values), 0.0);
        let fe = forward_error(&op, &cloud.f_values, &cloud.lap_values);
        assert!(fe > 0.0 && fe < 1.0, "fe = {fe}");
    }

    #[test]
    fn mismatched_rhs_is_an_error() {
        let (_, op) = ellipse_operator(100, 6, Method::Gmls, 20);
        assert!(matches!(
            solve_screened_poisson(&op, &vec![0.0; 50], 1e-10),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn identity_operator_norm_is_one() {
        // L = 0 rows: (I - L) = I.
        let rows = (0..50)
            .map(|i| LaplacianRow {
                base: i,
                neighbors: vec![i, (i + 1) % 50],
                weights: vec![0.0, 0.0],
                gamma: 0.0,
                k_final: 2,
                tune_iters: 1,
                unconverged: false,
            })
            .collect();
        let cfg = MethodConfig {
            method: Method::Gmls,
            weight: WeightScheme::OneOverK,
            l: 2,
            kappa: 1,
            delta: 1e-6,
            policy: StencilPolicy::Fixed { k: 2 },
        };
        let op = SparseOperator { n: 50, rows, config: cfg };
        let exact = inf_norm_inverse(&op, NormMode::Exact).unwrap();
        let est = inf_norm_inverse(&op, NormMode::Estimate).unwrap();
        assert!((exact.value - 1.0).abs() < 1e-12);
        assert!((est.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_estimate_tracks_exact_value() {
        let (_, op) = ellipse_operator(400, 7, Method::GrbfFd, 30);
        let exact = inf_norm_inverse(&op, NormMode::Exact).unwrap();
        let est = inf_norm_inverse(&op, NormMode::Estimate).unwrap();
        assert!(
            est.value <= exact.value * (1.0 + 1e-9) && est.value >= 0.9 * exact.value,
            "estimate {} vs exact {}",
            est.value,
            exact.value
        );
        assert!(est.solves < 20);
    }

    #[test]
    fn zero_row_sum_gives_zero_eigenvalue() {
        let (_, op) = ellipse_operator(300, 8, Method::GrbfFd, 30);
        let ev = leading_eigenvalues(&op, 4, 10.0).unwrap();
        let nearest_zero = ev.iter().map(|e| e.norm()).fold(f64::INFINITY, f64::min);
        let scale = op
            .rows
            .iter()
            .map(|r| r.weights.iter().fold(0.0f64, |a, &b| a.max(b.abs())))
            .fold(0.0f64, f64::max);
        assert!(nearest_zero <= 1e-8 * scale, "nearest {nearest_zero}, scale {scale}");
    }

    #[test]
    fn arnoldi_matches_dense_eigenvalues() {
        let (_, op) = ellipse_operator(500, 9, Method::GrbfFd, 30);
        let dense = leading_eigenvalues_dense(&op, 6, 10.0).unwrap();
        let arn = leading_eigenvalues_arnoldi(&op, 6, 10.0).unwrap();
        for (a, b) in dense.iter().zip(&arn) {
            assert!(
                (a - b).norm() <= 1e-6 * (1.0 + a.norm()),
                "dense {a} vs arnoldi {b}"
            );
        }
    }

    #[test]
    fn eigen_count_validation() {
        let (_, op) = ellipse_operator(100, 10, Method::Gmls, 20);
        assert!(leading_eigenvalues(&op, 0, 10.0).is_err());
        assert!(leading_eigenvalues(&op, 101, 10.0).is_err());
    }
}
