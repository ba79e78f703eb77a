//! Built-in test manifolds: analytic embeddings, tangent frames, manufactured
//! solutions, and point-cloud samplers.
//!
//! Each manifold is a parametrized embedding `x(theta): R^d -> R^n` together
//! with a scalar field `f` and its Laplace-Beltrami image `lap f`. The
//! screened-Poisson right-hand side is always `h = f - lap f` (unit screening
//! constant). Truth Laplacians come either from a hand closed form (ellipse,
//! flat tori) or from the intrinsic metric formula evaluated with exact
//! second-order dual numbers (red blood cell, bumpy sphere); both routes are
//! cross-checked against the finite-difference oracle in
//! [`crate::verification`].

use crate::error::{Error, Result};
use crate::jet::{Jet, Scalar};
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::PI;

/// How a point cloud is drawn from a manifold's parameter domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Equispaced in intrinsic coordinates. Only defined for the ellipse.
    WellSampled,
    /// I.i.d. draws from the manifold's named density via inverse-CDF
    /// transform of a seeded ChaCha stream.
    Random,
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SamplingMode::WellSampled => write!(f, "well_sampled"),
            SamplingMode::Random => write!(f, "random"),
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "well_sampled" => Ok(SamplingMode::WellSampled),
            "random" => Ok(SamplingMode::Random),
            other => Err(Error::Config(format!("unknown sampling mode `{other}`"))),
        }
    }
}

/// Red blood cell shape constants.
const RBC_R: f64 = 3.91 / 3.39;
const RBC_C0: f64 = 0.81 / 3.39;
const RBC_C2: f64 = 7.83 / 3.39;
const RBC_C4: f64 = -4.39 / 3.39;

/// One of the built-in analytic test manifolds.
///
/// `embed` is injective on the interior of the parameter domain for every
/// variant (the trig charts below are all standard one-to-one
/// parametrizations); this is documented rather than checked at runtime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldSpec {
    /// 1D ellipse `(cos t, 2 sin t)` in the plane, `f = sin t cos t`.
    Ellipse1d,
    /// 2D red blood cell surface in `R^3`, `f = cos^2 t`.
    Rbc2d,
    /// 2D bumpy sphere `r(t,p) = 1 + 0.1 sin^7(4t) sin(4p)` in `R^3`,
    /// `f` = third ambient coordinate.
    BumpySphere2d,
    /// 3D flat torus embedded in `R^12`, `f = sin p1 sin p2 sin p3`.
    FlatTorus3d,
    /// 4D flat torus embedded in `R^16`, `f = sin p1 .. sin p4`.
    FlatTorus4d,
}

pub const ALL_MANIFOLDS: [ManifoldSpec; 5] = [
    ManifoldSpec::Ellipse1d,
    ManifoldSpec::Rbc2d,
    ManifoldSpec::BumpySphere2d,
    ManifoldSpec::FlatTorus3d,
    ManifoldSpec::FlatTorus4d,
];

impl std::fmt::Display for ManifoldSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl std::str::FromStr for ManifoldSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ManifoldSpec::from_name(s)
    }
}

impl ManifoldSpec {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "ellipse1d" => Ok(ManifoldSpec::Ellipse1d),
            "rbc2d" => Ok(ManifoldSpec::Rbc2d),
            "bumpy_sphere2d" => Ok(ManifoldSpec::BumpySphere2d),
            "flat_torus3d" => Ok(ManifoldSpec::FlatTorus3d),
            "flat_torus4d" => Ok(ManifoldSpec::FlatTorus4d),
            other => Err(Error::Config(format!("unknown manifold `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ManifoldSpec::Ellipse1d => "ellipse1d",
            ManifoldSpec::Rbc2d => "rbc2d",
            ManifoldSpec::BumpySphere2d => "bumpy_sphere2d",
            ManifoldSpec::FlatTorus3d => "flat_torus3d",
            ManifoldSpec::FlatTorus4d => "flat_torus4d",
        }
    }

    /// Intrinsic dimension.
    pub fn d(&self) -> usize {
        match self {
            ManifoldSpec::Ellipse1d => 1,
            ManifoldSpec::Rbc2d | ManifoldSpec::BumpySphere2d => 2,
            ManifoldSpec::FlatTorus3d => 3,
            ManifoldSpec::FlatTorus4d => 4,
        }
    }

    /// Ambient dimension.
    pub fn n(&self) -> usize {
        match self {
            ManifoldSpec::Ellipse1d => 2,
            ManifoldSpec::Rbc2d | ManifoldSpec::BumpySphere2d => 3,
            ManifoldSpec::FlatTorus3d => 12,
            ManifoldSpec::FlatTorus4d => 16,
        }
    }

    /// Per-coordinate parameter intervals.
    pub fn param_domain(&self) -> Vec<(f64, f64)> {
        match self {
            ManifoldSpec::Ellipse1d => vec![(0.0, 2.0 * PI)],
            ManifoldSpec::Rbc2d => vec![(-PI / 2.0, PI / 2.0), (-PI, PI)],
            ManifoldSpec::BumpySphere2d => vec![(0.0, PI), (0.0, 2.0 * PI)],
            ManifoldSpec::FlatTorus3d => vec![(0.0, 2.0 * PI); 3],
            ManifoldSpec::FlatTorus4d => vec![(0.0, 2.0 * PI); 4],
        }
    }

    /// Embedding map evaluated on plain floats or jets.
    pub fn embed<S: Scalar>(&self, p: &[S]) -> Vec<S> {
        match self {
            ManifoldSpec::Ellipse1d => {
                let t = p[0];
                vec![t.cos(), S::c(2.0) * t.sin()]
            }
            ManifoldSpec::Rbc2d => {
                let (t, phi) = (p[0], p[1]);
                let c = t.cos();
                let z = S::c(0.5)
                    * t.sin()
                    * (S::c(RBC_C0) + S::c(RBC_C2) * c.powi(2) + S::c(RBC_C4) * c.powi(4));
                vec![S::c(RBC_R) * c * phi.cos(), S::c(RBC_R) * c * phi.sin(), z]
            }
            ManifoldSpec::BumpySphere2d => {
                let (t, phi) = (p[0], p[1]);
                let r = S::c(1.0) + S::c(0.1) * (S::c(4.0) * t).sin().powi(7) * (S::c(4.0) * phi).sin();
                vec![
                    r * t.sin() * phi.cos(),
                    r * t.sin() * phi.sin(),
                    r * t.cos(),
                ]
            }
            ManifoldSpec::FlatTorus3d | ManifoldSpec::FlatTorus4d => {
                let scale = S::c(1.0 / 5.0f64.sqrt());
                let mut x = Vec::with_capacity(4 * p.len());
                for &phi in p {
                    x.push(scale * phi.cos());
                    x.push(scale * phi.sin());
                    x.push(scale * (S::c(2.0) * phi).cos());
                    x.push(scale * (S::c(2.0) * phi).sin());
                }
                x
            }
        }
    }

    /// Manufactured true solution.
    pub fn f_true<S: Scalar>(&self, p: &[S]) -> S {
        match self {
            ManifoldSpec::Ellipse1d => p[0].sin() * p[0].cos(),
            ManifoldSpec::Rbc2d => p[0].cos().powi(2),
            ManifoldSpec::BumpySphere2d => self.embed(p)[2],
            ManifoldSpec::FlatTorus3d | ManifoldSpec::FlatTorus4d => {
                let mut f = S::c(1.0);
                for &phi in p {
                    f = f * phi.sin();
                }
                f
            }
        }
    }

    /// Laplace-Beltrami image of `f_true` at a parameter point.
    pub fn lap_f_true(&self, p: &[f64]) -> f64 {
        match self {
            ManifoldSpec::Ellipse1d => {
                // Curve Laplacian f''/g - f' g'/(2 g^2) with g the 1x1 metric.
                let t = p[0];
                let g = t.sin().powi(2) + 4.0 * t.cos().powi(2);
                let dg = -3.0 * (2.0 * t).sin();
                let df = (2.0 * t).cos();
                let ddf = -2.0 * (2.0 * t).sin();
                ddf / g - df * dg / (2.0 * g * g)
            }
            ManifoldSpec::Rbc2d | ManifoldSpec::BumpySphere2d => self.lap_f_via_jets(p),
            ManifoldSpec::FlatTorus3d => -3.0 * self.f_true(p),
            ManifoldSpec::FlatTorus4d => -4.0 * self.f_true(p),
        }
    }

    /// Intrinsic-formula Laplacian evaluated with exact dual-number
    /// derivatives of the chart: `lap f = g^{ij} f_ij + (d_i g^{ij}) f_j +
    /// g^{ij} (d_i log sqrt|g|) f_j`.
    pub fn lap_f_via_jets(&self, p: &[f64]) -> f64 {
        let d = self.d();
        let jp: Vec<Jet> = (0..d).map(|i| Jet::var(p[i], i)).collect();
        let x = self.embed(&jp);
        let fj = self.f_true(&jp);

        let mut g = [[0.0f64; 4]; 4];
        let mut dg = [[[0.0f64; 4]; 4]; 4]; // dg[k][i][j] = d_k g_ij
        for a in &x {
            for i in 0..d {
                for j in 0..d {
                    g[i][j] += a.g[i] * a.g[j];
                    for k in 0..d {
                        dg[k][i][j] += a.h[i][k] * a.g[j] + a.g[i] * a.h[j][k];
                    }
                }
            }
        }
        let ginv = invert_small(&g, d);

        let mut lap = 0.0;
        for i in 0..d {
            for j in 0..d {
                lap += ginv[i][j] * fj.h[i][j];
            }
        }
        for j in 0..d {
            // sum_i d_i G^{ij} with dG = -G (d_i g) G
            let mut div_term = 0.0;
            for i in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        div_term -= ginv[i][a] * dg[i][a][b] * ginv[b][j];
                    }
                }
            }
            // sum_i G^{ij} d_i log sqrt|g| with d_i log sqrt|g| = tr(G dg_i)/2
            let mut log_term = 0.0;
            for i in 0..d {
                let mut tr = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        tr += ginv[a][b] * dg[i][b][a];
                    }
                }
                log_term += ginv[i][j] * 0.5 * tr;
            }
            lap += fj.g[j] * (div_term + log_term);
        }
        lap
    }

    /// Orthonormal tangent frame at a parameter point: Gram-Schmidt on the
    /// chart's partial derivatives. Returns `d * n` floats, frame vector `j`
    /// at `[j*n .. (j+1)*n]`.
    pub fn tangent_frame(&self, p: &[f64]) -> Result<Vec<f64>> {
        let (d, n) = (self.d(), self.n());
        let jp: Vec<Jet> = (0..d).map(|i| Jet::var(p[i], i)).collect();
        let x = self.embed(&jp);
        let mut frame = vec![0.0; d * n];
        for j in 0..d {
            let mut v: Vec<f64> = (0..n).map(|a| x[a].g[j]).collect();
            for k in 0..j {
                let prev = &frame[k * n..(k + 1) * n];
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                for a in 0..n {
                    v[a] -= dot * prev[a];
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-13 {
                return Err(Error::DegenerateStencil {
                    base: 0,
                    reason: format!("degenerate tangent frame on {} at {:?}", self.name(), p),
                });
            }
            for a in 0..n {
                frame[j * n + a] = v[a] / norm;
            }
        }
        Ok(frame)
    }

    /// Draws one parameter point from the manifold's sampling density.
    /// Pole draws on the rbc/bumpy charts are rejected and redrawn since the
    /// frame degenerates there (measure-zero events).
    fn draw_param(&self, uni: &mut impl FnMut() -> f64) -> Vec<f64> {
        match self {
            ManifoldSpec::Ellipse1d => {
                // Inverse CDF of p(t) = t/(4 pi^2) + 1/(4 pi) on [0, 2 pi).
                let u = uni();
                vec![PI * ((1.0 + 8.0 * u).sqrt() - 1.0)]
            }
            ManifoldSpec::Rbc2d => loop {
                let t = -PI / 2.0 + PI * uni();
                let phi = -PI + 2.0 * PI * uni();
                if t.cos() >= 1e-12 {
                    break vec![t, phi];
                }
            },
            ManifoldSpec::BumpySphere2d => loop {
                // Inverse CDF of p(t) = sin(t)/2 on [0, pi].
                let t = (1.0 - 2.0 * uni()).acos();
                let phi = 2.0 * PI * uni();
                if t.sin() >= 1e-12 {
                    break vec![t, phi];
                }
            },
            ManifoldSpec::FlatTorus3d | ManifoldSpec::FlatTorus4d => {
                (0..self.d()).map(|_| 2.0 * PI * uni()).collect()
            }
        }
    }

    /// Samples an `n_points` cloud, filling solution values and frames.
    pub fn sample_points(&self, n_points: usize, mode: SamplingMode, seed: u64) -> Result<PointCloud> {
        if n_points < 2 {
            return Err(Error::Argument(format!("need at least 2 points, got {n_points}")));
        }
        if mode == SamplingMode::WellSampled && *self != ManifoldSpec::Ellipse1d {
            return Err(Error::UnsupportedMode {
                manifold: self.name().to_string(),
                mode: mode.to_string(),
            });
        }

        let (d, n) = (self.d(), self.n());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uni = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);

        let mut params = Vec::with_capacity(n_points * d);
        let mut points = Vec::with_capacity(n_points * n);
        let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(n_points);
        for i in 0..n_points {
            let mut attempts = 0;
            loop {
                let p = match mode {
                    SamplingMode::WellSampled => {
                        vec![2.0 * PI * (i as f64) / (n_points as f64)]
                    }
                    SamplingMode::Random => self.draw_param(&mut uni),
                };
                let x = self.embed(&p);
                let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                if seen.insert(key) {
                    params.extend_from_slice(&p);
                    points.extend_from_slice(&x);
                    break;
                }
                attempts += 1;
                if mode == SamplingMode::WellSampled || attempts > 100 {
                    return Err(Error::Argument(format!(
                        "could not draw {n_points} distinct points on {}",
                        self.name()
                    )));
                }
            }
        }

        let mut frames = vec![0.0; n_points * d * n];
        let mut f_values = vec![0.0; n_points];
        let mut lap_values = vec![0.0; n_points];
        let mut h_values = vec![0.0; n_points];
        for i in 0..n_points {
            let p = &params[i * d..(i + 1) * d];
            let fr = self.tangent_frame(p)?;
            frames[i * d * n..(i + 1) * d * n].copy_from_slice(&fr);
            f_values[i] = self.f_true(p);
            lap_values[i] = self.lap_f_true(p);
            h_values[i] = f_values[i] - lap_values[i];
        }

        Ok(PointCloud {
            spec_name: self.name().to_string(),
            d,
            n,
            len: n_points,
            seed,
            mode,
            points,
            frames,
            params,
            f_values,
            lap_values,
            h_values,
        })
    }
}

/// CDF of the ellipse random density `p(t) = t/(4 pi^2) + 1/(4 pi)`.
pub fn ellipse_random_cdf(t: f64) -> f64 {
    t * t / (8.0 * PI * PI) + t / (4.0 * PI)
}

pub(crate) fn invert_small(g: &[[f64; 4]; 4], d: usize) -> [[f64; 4]; 4] {
    // Gauss-Jordan with partial pivoting; d <= 4.
    let mut a = *g;
    let mut inv = [[0.0f64; 4]; 4];
    for i in 0..d {
        inv[i][i] = 1.0;
    }
    for col in 0..d {
        let mut piv = col;
        for r in col + 1..d {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let scale = a[col][col];
        for j in 0..d {
            a[col][j] /= scale;
            inv[col][j] /= scale;
        }
        for r in 0..d {
            if r != col && a[r][col] != 0.0 {
                let factor = a[r][col];
                for j in 0..d {
                    a[r][j] -= factor * a[col][j];
                    inv[r][j] -= factor * inv[col][j];
                }
            }
        }
    }
    inv
}

/// N ambient points with tangent frames, intrinsic parameters, and the
/// manufactured solution/right-hand-side values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointCloud {
    pub spec_name: String,
    /// Intrinsic dimension.
    pub d: usize,
    /// Ambient dimension.
    pub n: usize,
    /// Number of points.
    pub len: usize,
    pub seed: u64,
    pub mode: SamplingMode,
    /// Row-major `len x n`.
    pub points: Vec<f64>,
    /// `len x d x n`: frame vector `j` of point `i` at `i*d*n + j*n ..`.
    pub frames: Vec<f64>,
    /// Row-major `len x d`.
    pub params: Vec<f64>,
    pub f_values: Vec<f64>,
    pub lap_values: Vec<f64>,
    pub h_values: Vec<f64>,
}

impl PointCloud {
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.n..(i + 1) * self.n]
    }

    pub fn frame_vec(&self, i: usize, j: usize) -> &[f64] {
        let off = i * self.d * self.n + j * self.n;
        &self.frames[off..off + self.n]
    }

    pub fn param(&self, i: usize) -> &[f64] {
        &self.params[i * self.d..(i + 1) * self.d]
    }

    pub fn spec(&self) -> Result<ManifoldSpec> {
        ManifoldSpec::from_name(&self.spec_name)
    }

    /// Scales all ambient coordinates by `c` (frames stay orthonormal).
    /// Solution fields are not rescaled; this is a test helper for the
    /// weight scale-equivariance property.
    pub fn scaled_ambient(&self, c: f64) -> PointCloud {
        let mut out = self.clone();
        for v in &mut out.points {
            *v *= c;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_params(spec: ManifoldSpec, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uni = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let dom = spec.param_domain();
        (0..count)
            .map(|_| {
                dom.iter()
                    .map(|(a, b)| a + (b - a) * (0.02 + 0.96 * uni()))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn ellipse_closed_form_matches_jets() {
        let spec = ManifoldSpec::Ellipse1d;
        for p in uniform_params(spec, 200, 1) {
            let closed = spec.lap_f_true(&p);
            let jets = spec.lap_f_via_jets(&p);
            assert!(
                (closed - jets).abs() <= 1e-11 * (1.0 + closed.abs()),
                "mismatch at {:?}: {} vs {}",
                p,
                closed,
                jets
            );
        }
    }

    #[test]
    fn flat_tori_are_eigenfunctions() {
        for spec in [ManifoldSpec::FlatTorus3d, ManifoldSpec::FlatTorus4d] {
            let d = spec.d() as f64;
            for p in uniform_params(spec, 100, 2) {
                let f = spec.f_true(&p);
                let jets = spec.lap_f_via_jets(&p);
                assert!(
                    (jets + d * f).abs() <= 1e-12 * (1.0 + f.abs()),
                    "{}: {} vs {}",
                    spec.name(),
                    jets,
                    -d * f
                );
            }
        }
    }

    #[test]
    fn frames_are_orthonormal() {
        for spec in ALL_MANIFOLDS {
            let (d, n) = (spec.d(), spec.n());
            for p in uniform_params(spec, 100, 3) {
                let fr = spec.tangent_frame(&p).unwrap();
                for i in 0..d {
                    for j in 0..d {
                        let dot: f64 = (0..n).map(|a| fr[i * n + a] * fr[j * n + a]).sum();
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!(
                            (dot - want).abs() < 1e-12,
                            "{} frame ({i},{j}) dot {dot}",
                            spec.name()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn frames_span_fd_tangent_space() {
        // Each frame vector must lie in the span of finite-difference chart
        // partials, i.e. be orthogonal to every normal direction.
        for spec in ALL_MANIFOLDS {
            let (d, n) = (spec.d(), spec.n());
            for p in uniform_params(spec, 20, 4) {
                let h = 1e-5;
                // 4th-order FD Jacobian columns.
                let mut jac = vec![vec![0.0; n]; d];
                for j in 0..d {
                    let eval = |s: f64| {
                        let mut q = p.clone();
                        q[j] += s;
                        spec.embed(&q)
                    };
                    let (x2p, xp, xm, x2m) = (eval(2.0 * h), eval(h), eval(-h), eval(-2.0 * h));
                    for a in 0..n {
                        jac[j][a] = (-x2p[a] + 8.0 * xp[a] - 8.0 * xm[a] + x2m[a]) / (12.0 * h);
                    }
                }
                // Orthonormalize the FD columns, then check the analytic frame
                // reproduces itself when projected onto their span.
                let mut basis: Vec<Vec<f64>> = Vec::new();
                for col in &jac {
                    let mut v = col.clone();
                    for b in &basis {
                        let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                        for a in 0..n {
                            v[a] -= dot * b[a];
                        }
                    }
                    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    for a in 0..n {
                        v[a] /= nrm;
                    }
                    basis.push(v);
                }
                let fr = spec.tangent_frame(&p).unwrap();
                for j in 0..d {
                    let t = &fr[j * n..(j + 1) * n];
                    let mut resid: Vec<f64> = t.to_vec();
                    for b in &basis {
                        let dot: f64 = t.iter().zip(b).map(|(x, y)| x * y).sum();
                        for a in 0..n {
                            resid[a] -= dot * b[a];
                        }
                    }
                    let leak = resid.iter().map(|x| x * x).sum::<f64>().sqrt();
                    assert!(
                        leak < 1e-10,
                        "{}: frame vector {j} leaves FD tangent plane by {leak:.2e}",
                        spec.name()
                    );
                }
            }
        }
    }

    #[test]
    fn ellipse_inverse_cdf_round_trips() {
        let spec = ManifoldSpec::Ellipse1d;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut uni = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        for _ in 0..1000 {
            let u = uni();
            let t = PI * ((1.0 + 8.0 * u).sqrt() - 1.0);
            assert!((0.0..2.0 * PI).contains(&t));
            assert!((ellipse_random_cdf(t) - u).abs() < 1e-12);
        }
        let _ = spec;
    }

    #[test]
    fn bumpy_density_histogram_matches_sin_theta() {
        // Chi-square of the sampled polar angle against p(t) = sin(t)/2.
        let spec = ManifoldSpec::BumpySphere2d;
        let cloud = spec.sample_points(100_000, SamplingMode::Random, 11).unwrap();
        let bins = 40;
        let mut counts = vec![0usize; bins];
        for i in 0..cloud.len {
            let t = cloud.param(i)[0];
            let b = ((t / PI) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let mut chi2 = 0.0;
        for (b, &c) in counts.iter().enumerate() {
            let (lo, hi) = (PI * b as f64 / bins as f64, PI * (b + 1) as f64 / bins as f64);
            let expected = cloud.len as f64 * 0.5 * (lo.cos() - hi.cos());
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // 39 dof; the 0.999 quantile is ~72.1. Deterministic seed, so this is
        // a fixed number, not a flaky statistical test.
        assert!(chi2 < 72.0, "chi2 = {chi2}");
    }

    #[test]
    fn well_sampled_is_the_equispaced_grid() {
        let cloud = ManifoldSpec::Ellipse1d
            .sample_points(400, SamplingMode::WellSampled, 7)
            .unwrap();
        for i in 0..400 {
            assert_eq!(cloud.param(i)[0], 2.0 * PI * i as f64 / 400.0);
        }
    }

    #[test]
    fn well_sampled_rejected_off_ellipse() {
        let err = ManifoldSpec::Rbc2d
            .sample_points(100, SamplingMode::WellSampled, 0)
            .unwrap_err();
        assert!(matches!(err, Error::UnsupportedMode { .. }));
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = ManifoldSpec::FlatTorus3d.sample_points(500, SamplingMode::Random, 42).unwrap();
        let b = ManifoldSpec::FlatTorus3d.sample_points(500, SamplingMode::Random, 42).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.h_values, b.h_values);
        let c = ManifoldSpec::FlatTorus3d.sample_points(500, SamplingMode::Random, 43).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn h_is_f_minus_lap_exactly() {
        let cloud = ManifoldSpec::Rbc2d.sample_points(200, SamplingMode::Random, 5).unwrap();
        for i in 0..cloud.len {
            assert_eq!(cloud.h_values[i], cloud.f_values[i] - cloud.lap_values[i]);
        }
    }

    #[test]
    fn unknown_manifold_is_a_config_error() {
        assert!(matches!(ManifoldSpec::from_name("klein_bottle"), Err(Error::Config(_))));
    }
}
