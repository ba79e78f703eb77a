//! Per-stencil Laplacian weights.
//!
//! All three discretizations share one normalized local frame: monomials and
//! the polyharmonic spline phi(r) = r^(2k+1) are evaluated on Monge
//! coordinates scaled by the stencil diameter D, and the resulting row is
//! divided by D^2 at the end.
//!
//! * GMLS: `w = (lap p) (P' L P)^-1 P' L`, a weighted polynomial regression.
//! * gRBF-FD: GMLS first, then a PHS fit of the regression residual,
//!   `w = (lap phi) dag(Phi) (I - P (P' L P)^-1 P' L) + (lap p) (P' L P)^-1 P' L`
//!   with the ridge inverse `dag(Phi) = (Phi' L Phi + delta^2 I)^-1 Phi' L`
//!   and the diagonal 1/K weight.
//! * RBF-FD: the same expression with the weight replaced by the PHS matrix
//!   inverse, which reproduces the saddle-system (Schur complement)
//!   coefficients of the classic tangent-plane method.
//!
//! A row is accepted by the auto-tuner once the base coefficient is negative
//! and the spike ratio gamma = |w_1| / max_k |w_k| clears its threshold; the
//! stencil grows by `k_step` otherwise.

use crate::error::{Error, Result};
use crate::manifolds::PointCloud;
use crate::stencils::{monge_project, NeighborIndex, Stencil};
use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

/// Conditioning limit beyond which a local normal matrix counts as singular.
pub const COND_LIMIT: f64 = 1e14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gmls,
    RbfFd,
    GrbfFd,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Gmls => "gmls",
            Method::RbfFd => "rbffd",
            Method::GrbfFd => "grbffd",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmls" => Ok(Method::Gmls),
            "rbffd" => Ok(Method::RbfFd),
            "grbffd" => Ok(Method::GrbfFd),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    OneOverK,
    Smooth,
    PhiInverse,
}

impl WeightScheme {
    pub fn label(&self) -> &'static str {
        match self {
            WeightScheme::OneOverK => "one_over_k",
            WeightScheme::Smooth => "smooth",
            WeightScheme::PhiInverse => "phi_inverse",
        }
    }
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_over_k" => Ok(WeightScheme::OneOverK),
            "smooth" => Ok(WeightScheme::Smooth),
            "phi_inverse" => Ok(WeightScheme::PhiInverse),
            other => Err(Error::Config(format!("unknown weight scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoPolicy {
    pub k0: usize,
    #[serde(default = "default_k_step")]
    pub k_step: usize,
    #[serde(default = "default_gamma_th")]
    pub gamma_th: f64,
    #[serde(default)]
    pub k_max: Option<usize>,
}

fn default_k_step() -> usize {
    2
}

fn default_gamma_th() -> f64 {
    3.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StencilPolicy {
    Fixed { k: usize },
    Auto(AutoPolicy),
}

impl StencilPolicy {
    pub fn auto(k0: usize) -> Self {
        StencilPolicy::Auto(AutoPolicy {
            k0,
            k_step: default_k_step(),
            gamma_th: default_gamma_th(),
            k_max: None,
        })
    }

    pub fn label(&self) -> String {
        match self {
            StencilPolicy::Fixed { k } => format!("fixed{k}"),
            StencilPolicy::Auto(a) => format!("auto{}", a.k0),
        }
    }

    /// Hard cap on stencil growth for a cloud of `n` points.
    pub fn cap(&self, n: usize) -> usize {
        match self {
            StencilPolicy::Fixed { k } => *k,
            StencilPolicy::Auto(a) => {
                let default_cap = (10 * a.k0).max(200).min(n.saturating_sub(1));
                a.k_max.unwrap_or(default_cap).clamp(a.k0, n)
            }
        }
    }
}

pub fn default_delta() -> f64 {
    1e-6
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    /// Regression weight. Only free for GMLS; gRBF-FD always runs the
    /// diagonal 1/K weight and RBF-FD the PHS-inverse weight.
    #[serde(default = "default_weight")]
    pub weight: WeightScheme,
    /// Polynomial degree, at least 2.
    pub l: usize,
    /// PHS exponent parameter; phi(r) = r^(2 kappa + 1), kappa >= 1.
    /// kappa <= l is the conditional-positive-definiteness regime of the
    /// PHS+Poly saddle system; the ridge-regularized weights also run
    /// outside it, and the surface experiment grids pair kappa = 3 with
    /// l = 2.
    pub kappa: u32,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub policy: StencilPolicy,
}

fn default_weight() -> WeightScheme {
    WeightScheme::OneOverK
}

impl MethodConfig {
    pub fn effective_weight(&self) -> WeightScheme {
        match self.method {
            Method::Gmls => self.weight,
            Method::GrbfFd => WeightScheme::OneOverK,
            Method::RbfFd => WeightScheme::PhiInverse,
        }
    }

    pub fn validate(&self, d: usize, n_points: usize) -> Result<()> {
        if self.l < 2 {
            return Err(Error::Config(format!("polynomial degree l = {} must be >= 2", self.l)));
        }
        if self.kappa < 1 {
            return Err(Error::Config(format!(
                "PHS parameter kappa = {} must be at least 1",
                self.kappa
            )));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta = {} must be positive", self.delta)));
        }
        let m = binomial(self.l + d, d);
        let k_start = match &self.policy {
            StencilPolicy::Fixed { k } => *k,
            StencilPolicy::Auto(a) => {
                if a.k_step == 0 {
                    return Err(Error::Config("k_step must be positive".into()));
                }
                if !(a.gamma_th > 0.0) {
                    return Err(Error::Config(format!(
                        "gamma_th = {} must be positive",
                        a.gamma_th
                    )));
                }
                a.k0
            }
        };
        if k_start <= m {
            return Err(Error::Config(format!(
                "stencil size {k_start} must exceed the polynomial space dimension m = {m}"
            )));
        }
        if k_start > n_points {
            return Err(Error::Config(format!(
                "stencil size {k_start} exceeds the cloud size {n_points}"
            )));
        }
        Ok(())
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Graded-lexicographic monomial multi-indices of total degree <= l in d
/// variables, plus the pure-quadratic index set used by the Laplacian row.
#[derive(Clone, Debug)]
pub struct MonomialBasis {
    pub l: usize,
    pub d: usize,
    /// Exponent tuples; only the first `d` entries are used.
    pub indices: Vec<[u8; 4]>,
    /// Flags the indices with a single exponent equal to 2.
    pub pure_quadratic: Vec<bool>,
}

impl MonomialBasis {
    pub fn m(&self) -> usize {
        self.indices.len()
    }

    /// Row of the Laplacian applied to the basis at the origin: 2 on the
    /// pure-quadratic monomials, 0 elsewhere.
    pub fn laplacian_row(&self) -> Vec<f64> {
        self.pure_quadratic.iter().map(|&e| if e { 2.0 } else { 0.0 }).collect()
    }

    pub fn eval(&self, theta: &[f64]) -> Vec<f64> {
        self.indices
            .iter()
            .map(|alpha| {
                let mut v = 1.0;
                for i in 0..self.d {
                    v *= theta[i].powi(alpha[i] as i32);
                }
                v
            })
            .collect()
    }
}

/// Multi-index list for degree `l` in `d` variables, graded lexicographic.
pub fn monomial_indices(l: usize, d: usize) -> MonomialBasis {
    assert!(d >= 1 && d <= 4);
    let mut indices = Vec::with_capacity(binomial(l + d, d));
    let mut alpha = [0u8; 4];
    for total in 0..=l {
        fill_degree(&mut indices, &mut alpha, 0, d, total as u8);
    }
    let pure_quadratic = indices
        .iter()
        .map(|a| {
            let sum: u8 = a[..d].iter().sum();
            sum == 2 && a[..d].iter().any(|&e| e == 2)
        })
        .collect();
    MonomialBasis { l, d, indices, pure_quadratic }
}

fn fill_degree(out: &mut Vec<[u8; 4]>, alpha: &mut [u8; 4], pos: usize, d: usize, remaining: u8) {
    if pos == d - 1 {
        alpha[pos] = remaining;
        out.push(*alpha);
        alpha[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        alpha[pos] = e;
        fill_degree(out, alpha, pos + 1, d, remaining - e);
    }
    alpha[pos] = 0;
}

/// K x m Vandermonde matrix of the normalized stencil coordinates.
pub fn vandermonde(stencil: &Stencil, l: usize) -> Mat<f64> {
    let basis = monomial_indices(l, stencil.dim);
    vandermonde_with(stencil, &basis)
}

pub fn vandermonde_with(stencil: &Stencil, basis: &MonomialBasis) -> Mat<f64> {
    let k = stencil.k();
    Mat::from_fn(k, basis.m(), |row, col| {
        let theta = stencil.theta_norm_row(row);
        let alpha = &basis.indices[col];
        let mut v = 1.0;
        for i in 0..stencil.dim {
            v *= theta[i].powi(alpha[i] as i32);
        }
        v
    })
}

/// K x K matrix of phi(r) = r^(2 kappa + 1) over normalized pairwise
/// distances; symmetric with zero diagonal.
pub fn phs_matrix(stencil: &Stencil, kappa: u32) -> Mat<f64> {
    let k = stencil.k();
    let e = (2 * kappa + 1) as i32;
    let mut out = Mat::zeros(k, k);
    for a in 0..k {
        let ta = stencil.theta_norm_row(a);
        for b in a + 1..k {
            let tb = stencil.theta_norm_row(b);
            let r2: f64 = ta.iter().zip(tb).map(|(x, y)| (x - y) * (x - y)).sum();
            let v = r2.sqrt().powi(e);
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// Laplacian prefactor of the PHS in `d` dimensions.
pub fn phs_lap_prefactor(kappa: u32, d: usize) -> f64 {
    let (k, d) = (kappa as f64, d as f64);
    4.0 * k * k + 2.0 * d * k + d - 1.0
}

/// Row of the tangent-plane Laplacian of the PHS kernels evaluated at the
/// normalized point `eval`.
pub fn phs_laplacian_row_at(stencil: &Stencil, kappa: u32, eval: &[f64]) -> Vec<f64> {
    let pref = phs_lap_prefactor(kappa, stencil.dim);
    let e = (2 * kappa - 1) as i32;
    (0..stencil.k())
        .map(|k| {
            let tk = stencil.theta_norm_row(k);
            let r2: f64 = tk.iter().zip(eval).map(|(x, y)| (x - y) * (x - y)).sum();
            pref * r2.sqrt().powi(e)
        })
        .collect()
}

/// Row of the PHS Laplacian at the base point (the stencil origin).
pub fn phs_laplacian_row(stencil: &Stencil, kappa: u32) -> Vec<f64> {
    phs_laplacian_row_at(stencil, kappa, &vec![0.0; stencil.dim])
}

/// Regression weight: a positive diagonal or the full PHS-inverse matrix.
#[derive(Clone, Debug)]
pub enum Weighting {
    Diag(Vec<f64>),
    Full(Mat<f64>),
}

impl Weighting {
    /// Lambda * m for a K x c matrix m.
    pub(crate) fn apply(&self, m: &Mat<f64>) -> Mat<f64> {
        match self {
            Weighting::Diag(d) => {
                let mut out = m.clone();
                for i in 0..out.nrows() {
                    for j in 0..out.ncols() {
                        out[(i, j)] *= d[i];
                    }
                }
                out
            }
            Weighting::Full(w) => w * m,
        }
    }

    fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Weighting::Diag(d) => v.iter().zip(d).map(|(x, w)| x * w).collect(),
            Weighting::Full(w) => {
                let k = v.len();
                (0..k).map(|i| (0..k).map(|j| w[(i, j)] * v[j]).sum()).collect()
            }
        }
    }
}

/// Builds the weight for a scheme. `phi` is only consulted by `PhiInverse`.
pub fn weight_matrix(
    scheme: WeightScheme,
    stencil: &Stencil,
    phi: Option<&Mat<f64>>,
    delta: f64,
) -> Weighting {
    let k = stencil.k();
    match scheme {
        WeightScheme::OneOverK => {
            let mut d = vec![1.0 / k as f64; k];
            d[0] = 1.0;
            Weighting::Diag(d)
        }
        WeightScheme::Smooth => {
            // (1 - r_k / R)^2 on raw projected radii, R = 1.5 R_max.
            let r_cap = 1.5 * stencil.r_max;
            let d = (0..k)
                .map(|row| {
                    let t = stencil.theta_row(row);
                    let r = t.iter().map(|x| x * x).sum::<f64>().sqrt();
                    (1.0 - r / r_cap).powi(2)
                })
                .collect();
            Weighting::Diag(d)
        }
        WeightScheme::PhiInverse => {
            let phi = phi.expect("PhiInverse weighting needs the PHS matrix");
            Weighting::Full(phi_inverse(phi, delta))
        }
    }
}

/// Inverse of the symmetric PHS matrix: direct when well conditioned, the
/// delta-ridge form `(Phi' Phi + delta^2 I)^-1 Phi'` otherwise. Both come out
/// of one SVD.
pub fn phi_inverse(phi: &Mat<f64>, delta: f64) -> Mat<f64> {
    let k = phi.nrows();
    let svd = phi.svd().expect("SVD of the PHS matrix failed");
    let (u, v, s) = (svd.U(), svd.V(), svd.S());
    let smax = s[0];
    let singular = s[k - 1] <= 1e-12 * smax;
    let mut scaled_ut = Mat::zeros(k, k);
    for i in 0..k {
        let w = if singular { s[i] / (s[i] * s[i] + delta * delta) } else { 1.0 / s[i] };
        for j in 0..k {
            scaled_ut[(i, j)] = w * u[(j, i)];
        }
    }
    v * scaled_ut
}

/// Weighted ridge inverse `(Phi' L Phi + delta^2 I)^-1 Phi' L`, materialized.
pub fn ridge_inverse(phi: &Mat<f64>, lambda: &Weighting, delta: f64) -> Mat<f64> {
    let k = phi.nrows();
    let lphi = lambda.apply(phi);
    let mut b = phi.transpose() * &lphi;
    for i in 0..k {
        b[(i, i)] += delta * delta;
    }
    let rhs = lphi.transpose().to_owned();
    match b.llt(Side::Lower) {
        Ok(llt) => llt.solve(&rhs),
        Err(_) => b.partial_piv_lu().solve(&rhs),
    }
}

/// How the PHS correction term inverts Phi.
enum Dagger {
    /// Weighted ridge inverse with the row's own Lambda.
    Ridge { delta: f64 },
    /// Lambda itself is the (approximate) PHS inverse; reuse it.
    SameAsLambda,
    /// Explicit matrix (test composition hook).
    #[allow(dead_code)]
    Explicit(Mat<f64>),
}

struct PhsTerm<'a> {
    phi: &'a Mat<f64>,
    lap_phi: &'a [f64],
    dagger: Dagger,
}

fn llt_with_cond(a: &Mat<f64>, base: usize, k: usize) -> Result<Llt<f64>> {
    let llt = a.llt(Side::Lower).map_err(|_| Error::RankDeficient {
        base,
        k,
        cond: f64::INFINITY,
    })?;
    let l = llt.L();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..a.nrows() {
        let d = l[(i, i)].abs();
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    let cond = (dmax / dmin) * (dmax / dmin);
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::RankDeficient { base, k, cond });
    }
    Ok(llt)
}

/// SVD solve with conditioning guard, for indefinite weighted normal matrices.
struct SvdSolver {
    u: Mat<f64>,
    v: Mat<f64>,
    sinv: Vec<f64>,
}

impl SvdSolver {
    fn new(a: &Mat<f64>, base: usize, k: usize) -> Result<Self> {
        let svd = a.svd().map_err(|_| Error::RankDeficient { base, k, cond: f64::INFINITY })?;
        let m = a.nrows();
        let (smax, smin) = (svd.S()[0], svd.S()[m - 1]);
        let cond = smax / smin;
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(Error::RankDeficient { base, k, cond });
        }
        Ok(SvdSolver {
            u: svd.U().to_owned(),
            v: svd.V().to_owned(),
            sinv: (0..m).map(|i| 1.0 / svd.S()[i]).collect(),
        })
    }

    fn solve(&self, rhs: &Mat<f64>) -> Mat<f64> {
        let mut t = self.u.transpose() * rhs;
        for i in 0..t.nrows() {
            for j in 0..t.ncols() {
                t[(i, j)] *= self.sinv[i];
            }
        }
        &self.v * &t
    }
}

/// Shared row evaluation; returns the K Laplacian weights.
fn lb_weights(
    p: &Mat<f64>,
    lap_p: &[f64],
    lambda: &Weighting,
    phs: Option<PhsTerm<'_>>,
    d_max: f64,
    base: usize,
) -> Result<Vec<f64>> {
    let (k, m) = (p.nrows(), p.ncols());
    let lp = lambda.apply(p);
    let a = p.transpose() * &lp;

    enum Factor {
        Llt(Llt<f64>),
        Svd(SvdSolver),
    }
    let factor = match lambda {
        Weighting::Diag(_) => Factor::Llt(llt_with_cond(&a, base, k)?),
        Weighting::Full(_) => Factor::Svd(SvdSolver::new(&a, base, k)?),
    };
    let solve = |rhs: &Mat<f64>| -> Mat<f64> {
        match &factor {
            Factor::Llt(llt) => llt.solve(rhs),
            Factor::Svd(svd) => svd.solve(rhs),
        }
    };

    // PHS correction vector y with y' = (lap phi) dag(Phi).
    let y: Option<Vec<f64>> = phs.as_ref().map(|term| match &term.dagger {
        Dagger::Ridge { delta } => {
            let lphi = lambda.apply(term.phi);
            let mut b = term.phi.transpose() * &lphi;
            for i in 0..k {
                b[(i, i)] += delta * delta;
            }
            let u = Mat::from_fn(k, 1, |i, _| term.lap_phi[i]);
            let z = match b.llt(Side::Lower) {
                Ok(llt) => llt.solve(&u),
                Err(_) => b.partial_piv_lu().solve(&u),
            };
            let phi_z = term.phi * &z;
            lambda.apply_vec(&(0..k).map(|i| phi_z[(i, 0)]).collect::<Vec<_>>())
        }
        Dagger::SameAsLambda => lambda.apply_vec(term.lap_phi),
        Dagger::Explicit(w) => {
            (0..k).map(|i| (0..k).map(|j| w[(j, i)] * term.lap_phi[j]).sum()).collect()
        }
    });

    // Right-hand sides for the normal-matrix solve: the polynomial Laplacian
    // row, and (when present) P' y for the projection in the PHS term.
    let ncols = if y.is_some() { 2 } else { 1 };
    let mut rhs = Mat::zeros(m, ncols);
    for j in 0..m {
        rhs[(j, 0)] = lap_p[j];
    }
    if let Some(y) = &y {
        for j in 0..m {
            rhs[(j, 1)] = (0..k).map(|i| p[(i, j)] * y[i]).sum();
        }
    }
    let sol = solve(&rhs);

    let mut w = vec![0.0; k];
    for i in 0..k {
        // GMLS part: (Lambda P) c with A c = lap_p.
        let mut wi: f64 = (0..m).map(|j| lp[(i, j)] * sol[(j, 0)]).sum();
        if let Some(y) = &y {
            // PHS part: y - (Lambda P) s with A s = P' y.
            let proj: f64 = (0..m).map(|j| lp[(i, j)] * sol[(j, 1)]).sum();
            wi += y[i] - proj;
        }
        w[i] = wi / (d_max * d_max);
    }
    Ok(w)
}

/// GMLS Laplacian weights under the given regression weight scheme.
pub fn gmls_weights(
    stencil: &Stencil,
    l: usize,
    scheme: WeightScheme,
    delta: f64,
) -> Result<Vec<f64>> {
    let basis = monomial_indices(l, stencil.dim);
    let p = vandermonde_with(stencil, &basis);
    let lambda = match scheme {
        WeightScheme::PhiInverse => {
            // kappa = l is the largest admissible smoothness; the weight only
            // needs a fixed kernel, and this matches the fixed-kernel runs.
            let phi = phs_matrix(stencil, l as u32);
            weight_matrix(scheme, stencil, Some(&phi), delta)
        }
        _ => weight_matrix(scheme, stencil, None, delta),
    };
    lb_weights(&p, &basis.laplacian_row(), &lambda, None, stencil.d_max, stencil.base)
}

/// Two-step gRBF-FD weights (GMLS plus PHS residual correction, 1/K weight).
pub fn grbffd_weights(stencil: &Stencil, config: &MethodConfig) -> Result<Vec<f64>> {
    let basis = monomial_indices(config.l, stencil.dim);
    let p = vandermonde_with(stencil, &basis);
    let phi = phs_matrix(stencil, config.kappa);
    let lap_phi = phs_laplacian_row(stencil, config.kappa);
    let lambda = weight_matrix(WeightScheme::OneOverK, stencil, None, config.delta);
    lb_weights(
        &p,
        &basis.laplacian_row(),
        &lambda,
        Some(PhsTerm { phi: &phi, lap_phi: &lap_phi, dagger: Dagger::Ridge { delta: config.delta } }),
        stencil.d_max,
        stencil.base,
    )
}

/// Tangent-plane RBF-FD weights (PHS+Poly saddle system via its Schur form).
pub fn rbffd_weights(stencil: &Stencil, config: &MethodConfig) -> Result<Vec<f64>> {
    let basis = monomial_indices(config.l, stencil.dim);
    let p = vandermonde_with(stencil, &basis);
    let phi = phs_matrix(stencil, config.kappa);
    let lap_phi = phs_laplacian_row(stencil, config.kappa);
    let lambda = Weighting::Full(phi_inverse(&phi, config.delta));
    lb_weights(
        &p,
        &basis.laplacian_row(),
        &lambda,
        Some(PhsTerm { phi: &phi, lap_phi: &lap_phi, dagger: Dagger::SameAsLambda }),
        stencil.d_max,
        stencil.base,
    )
}

/// Weights for one stencil under the configured method.
pub fn laplacian_weights(stencil: &Stencil, config: &MethodConfig) -> Result<Vec<f64>> {
    match config.method {
        Method::Gmls => gmls_weights(stencil, config.l, config.effective_weight(), config.delta),
        Method::GrbfFd => grbffd_weights(stencil, config),
        Method::RbfFd => rbffd_weights(stencil, config),
    }
}

/// gRBF-FD with an arbitrary weight and explicit PHS inverse. Test hook for
/// the coincidence of the two-step route with the saddle-system route.
pub fn grbffd_weights_with(
    stencil: &Stencil,
    l: usize,
    kappa: u32,
    lambda: Weighting,
    phi_dagger: Mat<f64>,
) -> Result<Vec<f64>> {
    let basis = monomial_indices(l, stencil.dim);
    let p = vandermonde_with(stencil, &basis);
    let phi = phs_matrix(stencil, kappa);
    let lap_phi = phs_laplacian_row(stencil, kappa);
    lb_weights(
        &p,
        &basis.laplacian_row(),
        &lambda,
        Some(PhsTerm { phi: &phi, lap_phi: &lap_phi, dagger: Dagger::Explicit(phi_dagger) }),
        stencil.d_max,
        stencil.base,
    )
}

/// Central spike ratio `gamma = |w_1| / max_{k >= 2} |w_k|`.
pub fn spike_ratio(weights: &[f64]) -> f64 {
    assert!(weights.len() >= 2);
    let denom = weights[1..].iter().fold(0.0f64, |acc, w| acc.max(w.abs()));
    if denom == 0.0 {
        if weights[0] == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        weights[0].abs() / denom
    }
}

/// One assembled operator row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LaplacianRow {
    pub base: usize,
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
    pub gamma: f64,
    pub k_final: usize,
    pub tune_iters: usize,
    /// Set when the growth loop hit its cap without meeting the sign and
    /// spike conditions; the row is then the most-negative-w1 candidate seen.
    pub unconverged: bool,
}

/// Runs the stencil-growth loop (or a single fixed-K evaluation) at `base`.
pub fn auto_tune_row(
    cloud: &PointCloud,
    index: &NeighborIndex,
    base: usize,
    config: &MethodConfig,
) -> Result<LaplacianRow> {
    let n = cloud.len;
    match config.policy {
        StencilPolicy::Fixed { k } => {
            let neighbors = index.knn(base, k)?;
            let stencil = monge_project(cloud, &neighbors)?;
            let weights = laplacian_weights(&stencil, config)?;
            let gamma = spike_ratio(&weights);
            Ok(LaplacianRow {
                base,
                neighbors,
                weights,
                gamma,
                k_final: k,
                tune_iters: 1,
                unconverged: false,
            })
        }
        StencilPolicy::Auto(auto) => {
            let cap = config.policy.cap(n);
            let mut fetched = index.knn(base, (auto.k0 + 8 * auto.k_step).min(cap))?;
            let mut best: Option<LaplacianRow> = None;
            let mut iters = 0;
            let mut last_rank_err = None;
            let mut k = auto.k0.min(cap);
            loop {
                if k > fetched.len() {
                    fetched = index.knn(base, (2 * k).min(cap).max(k))?;
                }
                let stencil = monge_project(cloud, &fetched[..k])?;
                iters += 1;
                match laplacian_weights(&stencil, config) {
                    Ok(weights) => {
                        let gamma = spike_ratio(&weights);
                        let w1 = weights[0];
                        let row = LaplacianRow {
                            base,
                            neighbors: fetched[..k].to_vec(),
                            weights,
                            gamma,
                            k_final: k,
                            tune_iters: iters,
                            unconverged: false,
                        };
                        if w1 < 0.0 && gamma >= auto.gamma_th {
                            return Ok(row);
                        }
                        if best.as_ref().map_or(true, |b| row.weights[0] < b.weights[0]) {
                            best = Some(row);
                        }
                    }
                    Err(e @ Error::RankDeficient { .. }) => last_rank_err = Some(e),
                    Err(e) => return Err(e),
                }
                if k >= cap {
                    break;
                }
                k = (k + auto.k_step).min(cap);
            }
            match best {
                Some(mut row) => {
                    row.unconverged = true;
                    row.tune_iters = iters;
                    Ok(row)
                }
                None => Err(last_rank_err.unwrap_or(Error::DegenerateStencil {
                    base,
                    reason: "stencil growth exhausted without a usable row".into(),
                })),
            }
        }
    }
}
