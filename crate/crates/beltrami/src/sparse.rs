//! Row-sparse matrices and the iterative solver stack: CSR storage, ILU(0)
//! preconditioning, and restarted GMRES with optional transpose mode.
//! Direct factorizations go through faer's sparse LU; this module covers the
//! sizes and transpose solves the Krylov path needs.

use crate::error::{Error, Result};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

#[derive(Clone, Debug)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Builds from per-row (column, value) lists; columns are sorted and
    /// duplicates summed.
    pub fn from_rows(n_rows: usize, n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Csr {
        assert_eq!(rows.len(), n_rows);
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Csr { n_rows, n_cols, indptr, indices, data }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            y[i] = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * x[i];
            }
        }
    }

    /// `I - self` for a square matrix.
    pub fn identity_minus(&self) -> Csr {
        assert_eq!(self.n_rows, self.n_cols);
        let rows = (0..self.n_rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                let mut entries: Vec<(usize, f64)> =
                    cols.iter().zip(vals).map(|(&c, &v)| (c, -v)).collect();
                entries.push((i, 1.0));
                entries
            })
            .collect();
        Csr::from_rows(self.n_rows, self.n_cols, rows)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c)] += v;
            }
        }
        m
    }

    pub fn to_faer(&self) -> SparseColMat<usize, f64> {
        let mut trips = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                trips.push(Triplet::new(i, c, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.n_rows, self.n_cols, &trips)
            .expect("CSR indices were in range")
    }
}

/// Zero-fill incomplete LU factors on the matrix's own sparsity pattern.
/// L has unit diagonal (not stored); U includes the diagonal.
pub struct Ilu0 {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    lu: Vec<f64>,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Ilu0> {
        let n = a.n_rows;
        let mut lu = a.data.clone();
        let indptr = a.indptr.clone();
        let indices = a.indices.clone();
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for p in indptr[i]..indptr[i + 1] {
                if indices[p] == i {
                    diag_pos[i] = p;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(Error::Argument(format!("ILU(0): missing diagonal in row {i}")));
            }
        }

        // Scatter workspace: position of column j in the current row, or MAX.
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (lo, hi) = (indptr[i], indptr[i + 1]);
            for p in lo..hi {
                pos[indices[p]] = p;
            }
            for p in lo..hi {
                let k = indices[p];
                if k >= i {
                    break;
                }
                let mut pivot = lu[diag_pos[k]];
                if pivot.abs() < 1e-300 {
                    pivot = if pivot < 0.0 { -1e-300 } else { 1e-300 };
                }
                let factor = lu[p] / pivot;
                lu[p] = factor;
                for q in diag_pos[k] + 1..indptr[k + 1] {
                    let j = indices[q];
                    let target = pos[j];
                    if target != usize::MAX {
                        lu[target] -= factor * lu[q];
                    }
                }
            }
            for p in lo..hi {
                pos[indices[p]] = usize::MAX;
            }
            // Guard against a vanished pivot so the triangular solves stay finite.
            let dp = diag_pos[i];
            if lu[dp].abs() < 1e-300 {
                lu[dp] = 1e-300;
            }
        }
        Ok(Ilu0 { n, indptr, indices, lu, diag_pos })
    }

    /// x := (LU)^-1 b.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        x.copy_from_slice(b);
        for i in 0..self.n {
            let mut acc = x[i];
            for p in self.indptr[i]..self.diag_pos[i] {
                acc -= self.lu[p] * x[self.indices[p]];
            }
            x[i] = acc;
        }
        for i in (0..self.n).rev() {
            let mut acc = x[i];
            for p in self.diag_pos[i] + 1..self.indptr[i + 1] {
                acc -= self.lu[p] * x[self.indices[p]];
            }
            x[i] = acc / self.lu[self.diag_pos[i]];
        }
    }

    /// x := (LU)^-T b, i.e. a preconditioner for transpose systems.
    pub fn solve_transpose(&self, b: &[f64], x: &mut [f64]) {
        x.copy_from_slice(b);
        // U^T w = b: forward substitution driven by U's rows.
        for i in 0..self.n {
            let dp = self.diag_pos[i];
            x[i] /= self.lu[dp];
            let xi = x[i];
            for p in dp + 1..self.indptr[i + 1] {
                x[self.indices[p]] -= self.lu[p] * xi;
            }
        }
        // L^T z = w with unit diagonal.
        for i in (0..self.n).rev() {
            let xi = x[i];
            for p in self.indptr[i]..self.diag_pos[i] {
                x[self.indices[p]] -= self.lu[p] * xi;
            }
        }
    }
}

pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

pub struct GmresOptions {
    pub restart: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions { restart: 100, max_iters: 4000, tol: 1e-10 }
    }
}

/// Right-preconditioned restarted GMRES on `A x = b` (or `A^T x = b`).
pub fn gmres(
    a: &Csr,
    b: &[f64],
    ilu: Option<&Ilu0>,
    transpose: bool,
    opts: &GmresOptions,
) -> GmresOutcome {
    let n = a.n_rows;
    let matvec = |x: &[f64], y: &mut [f64]| {
        if transpose {
            a.matvec_transpose(x, y)
        } else {
            a.matvec(x, y)
        }
    };
    let precond = |x: &[f64], y: &mut [f64]| match ilu {
        Some(p) => {
            if transpose {
                p.solve_transpose(x, y)
            } else {
                p.solve(x, y)
            }
        }
        None => y.copy_from_slice(x),
    };

    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut best_res = f64::INFINITY;
    let m = opts.restart.min(n);
    let mut total_iters = 0;

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut h = vec![vec![0.0f64; m]; m + 1];
    let mut scratch = vec![0.0; n];

    while total_iters < opts.max_iters {
        matvec(&x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm2(&r);
        best_res = best_res.min(beta / bnorm);
        if beta / bnorm <= opts.tol {
            return GmresOutcome { x, iterations: total_iters, residual: beta / bnorm, converged: true };
        }

        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut cols = 0;

        for j in 0..m {
            if total_iters >= opts.max_iters {
                break;
            }
            total_iters += 1;
            precond(&basis[j], &mut scratch);
            let mut w = vec![0.0; n];
            matvec(&scratch, &mut w);
            // Modified Gram-Schmidt with one reorthogonalization pass.
            for pass in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let hij = dot(&w, v);
                    if pass == 0 {
                        h[i][j] = hij;
                    } else {
                        h[i][j] += hij;
                    }
                    for t in 0..n {
                        w[t] -= hij * v[t];
                    }
                }
            }
            let hnext = norm2(&w);
            h[j + 1][j] = hnext;
            cols = j + 1;

            // Apply stored rotations, then create the new one.
            for i in 0..j {
                let (hi, hj) = (h[i][j], h[i + 1][j]);
                h[i][j] = cs[i] * hi + sn[i] * hj;
                h[i + 1][j] = -sn[i] * hi + cs[i] * hj;
            }
            let denom = (h[j][j] * h[j][j] + hnext * hnext).sqrt();
            if denom == 0.0 {
                break;
            }
            cs[j] = h[j][j] / denom;
            sn[j] = hnext / denom;
            h[j][j] = denom;
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j] * g[j];

            let res = g[j + 1].abs() / bnorm;
            if hnext > 0.0 {
                basis.push(w.iter().map(|v| v / hnext).collect());
            }
            if res <= 0.5 * opts.tol || hnext == 0.0 {
                break;
            }
        }

        if cols == 0 {
            break;
        }
        // Back-substitution for the Hessenberg least squares.
        let mut y = vec![0.0; cols];
        for i in (0..cols).rev() {
            let mut acc = g[i];
            for k in i + 1..cols {
                acc -= h[i][k] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (k, yk) in y.iter().enumerate() {
            for t in 0..n {
                update[t] += yk * basis[k][t];
            }
        }
        precond(&update, &mut scratch);
        for t in 0..n {
            x[t] += scratch[t];
        }
    }

    matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let res = norm2(&r) / bnorm;
    GmresOutcome { x, iterations: total_iters, residual: res, converged: res <= opts.tol }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::{Rng, SeedableRng};

    fn random_dd_matrix(n: usize, seed: u64) -> Csr {
        // Strictly diagonally dominant nonsymmetric random sparsity.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut uni = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = vec![];
            let mut offdiag = 0.0;
            for _ in 0..6 {
                let j = (uni() * n as f64) as usize % n;
                if j != i {
                    let v = uni() - 0.5;
                    offdiag += v.abs();
                    row.push((j, v));
                }
            }
            row.push((i, offdiag + 1.0 + uni()));
            rows.push(row);
        }
        Csr::from_rows(n, n, rows)
    }

    #[test]
    fn matvec_matches_dense() {
        let a = random_dd_matrix(40, 1);
        let d = a.to_dense();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut y = vec![0.0; 40];
        a.matvec(&x, &mut y);
        let mut yt = vec![0.0; 40];
        a.matvec_transpose(&x, &mut yt);
        for i in 0..40 {
            let want: f64 = (0..40).map(|j| d[(i, j)] * x[j]).sum();
            let want_t: f64 = (0..40).map(|j| d[(j, i)] * x[j]).sum();
            assert!((y[i] - want).abs() < 1e-12);
            assert!((yt[i] - want_t).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let a = Csr::from_rows(2, 2, vec![vec![(0, 1.0), (0, 2.0), (1, 1.0)], vec![(1, 4.0)]]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.row(0).1, &[3.0, 1.0]);
    }

    #[test]
    fn gmres_with_ilu_hits_tight_tolerance() {
        let n = 400;
        let a = random_dd_matrix(n, 7);
        let xtrue: Vec<f64> = (0..n).map(|i| ((i * i) as f64 * 0.01).cos()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&xtrue, &mut b);
        let ilu = Ilu0::new(&a).unwrap();
        let out = gmres(&a, &b, Some(&ilu), false, &GmresOptions::default());
        assert!(out.converged, "residual {}", out.residual);
        let err = out
            .x
            .iter()
            .zip(&xtrue)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-8, "max error {err}");
    }

    #[test]
    fn gmres_transpose_mode_solves_the_transpose() {
        let n = 300;
        let a = random_dd_matrix(n, 9);
        let xtrue: Vec<f64> = (0..n).map(|i| (i as f64 * 0.05).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec_transpose(&xtrue, &mut b);
        let ilu = Ilu0::new(&a).unwrap();
        let out = gmres(&a, &b, Some(&ilu), true, &GmresOptions::default());
        assert!(out.converged);
        let err = out
            .x
            .iter()
            .zip(&xtrue)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-8, "max error {err}");
    }

    #[test]
    fn ilu_transpose_solve_is_consistent() {
        // For any y, solving with the factors then applying them back should
        // reproduce y; check the transpose path against a dense rebuild.
        let n = 50;
        let a = random_dd_matrix(n, 3);
        let ilu = Ilu0::new(&a).unwrap();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 - 20.0) * 0.1).collect();
        let mut x = vec![0.0; n];
        ilu.solve_transpose(&y, &mut x);
        // Build dense M = L U from the factors and verify M^T x = y.
        let mut l = Mat::<f64>::identity(n, n);
        let mut u = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for p in ilu.indptr[i]..ilu.indptr[i + 1] {
                let j = ilu.indices[p];
                if j < i {
                    l[(i, j)] = ilu.lu[p];
                } else {
                    u[(i, j)] = ilu.lu[p];
                }
            }
        }
        let m = &l * &u;
        for i in 0..n {
            let got: f64 = (0..n).map(|j| m[(j, i)] * x[j]).sum();
            assert!((got - y[i]).abs() < 1e-9, "row {i}: {got} vs {}", y[i]);
        }
    }

    #[test]
    fn faer_bridge_round_trips() {
        use faer::linalg::solvers::Solve;
        let a = random_dd_matrix(60, 5);
        let sp = a.to_faer();
        let lu = sp.sp_lu().unwrap();
        let xtrue: Vec<f64> = (0..60).map(|i| (i as f64).sqrt()).collect();
        let mut b = vec![0.0; 60];
        a.matvec(&xtrue, &mut b);
        let rhs = Mat::from_fn(60, 1, |i, _| b[i]);
        let x = lu.solve(&rhs);
        for i in 0..60 {
            assert!((x[(i, 0)] - xtrue[i]).abs() < 1e-9);
        }
    }
}
