//! Second-order forward-mode dual numbers over at most four variables.
//!
//! A [`Jet`] carries a value together with its gradient and Hessian with
//! respect to a fixed set of `d <= 4` parameters. Arithmetic propagates both
//! derivative orders exactly (to machine precision), which is what the
//! analytic metric-tensor Laplacians in [`crate::manifolds`] are built on.

/// Maximum number of independent variables a jet tracks.
pub const MAX_VARS: usize = 4;

/// Truncated second-order Taylor coefficient bundle.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; MAX_VARS],
    pub h: [[f64; MAX_VARS]; MAX_VARS],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet { v, g: [0.0; MAX_VARS], h: [[0.0; MAX_VARS]; MAX_VARS] }
    }

    /// The `i`-th independent variable with value `v`.
    pub fn var(v: f64, i: usize) -> Self {
        assert!(i < MAX_VARS);
        let mut j = Jet::constant(v);
        j.g[i] = 1.0;
        j
    }

    /// Applies a scalar function with known first and second derivative.
    fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        let mut out = Jet::constant(f);
        for i in 0..MAX_VARS {
            out.g[i] = df * self.g[i];
        }
        for i in 0..MAX_VARS {
            for j in 0..MAX_VARS {
                out.h[i][j] = ddf * self.g[i] * self.g[j] + df * self.h[i][j];
            }
        }
        out
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * r * r))
    }

    pub fn powi(self, n: i32) -> Self {
        match n {
            0 => Jet::constant(1.0),
            1 => self,
            _ => {
                let f = self.v.powi(n);
                let df = f64::from(n) * self.v.powi(n - 1);
                let ddf = f64::from(n) * f64::from(n - 1) * self.v.powi(n - 2);
                self.chain(f, df, ddf)
            }
        }
    }

    pub fn recip(self) -> Self {
        let f = 1.0 / self.v;
        self.chain(f, -f * f, 2.0 * f * f * f)
    }
}

impl std::ops::Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        let mut out = self;
        out.v += rhs.v;
        for i in 0..MAX_VARS {
            out.g[i] += rhs.g[i];
            for j in 0..MAX_VARS {
                out.h[i][j] += rhs.h[i][j];
            }
        }
        out
    }
}

impl std::ops::Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        let mut out = self;
        out.v -= rhs.v;
        for i in 0..MAX_VARS {
            out.g[i] -= rhs.g[i];
            for j in 0..MAX_VARS {
                out.h[i][j] -= rhs.h[i][j];
            }
        }
        out
    }
}

impl std::ops::Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let mut out = Jet::constant(self.v * rhs.v);
        for i in 0..MAX_VARS {
            out.g[i] = self.g[i] * rhs.v + rhs.g[i] * self.v;
        }
        for i in 0..MAX_VARS {
            for j in 0..MAX_VARS {
                out.h[i][j] = self.h[i][j] * rhs.v
                    + self.g[i] * rhs.g[j]
                    + self.g[j] * rhs.g[i]
                    + rhs.h[i][j] * self.v;
            }
        }
        out
    }
}

impl std::ops::Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        self * rhs.recip()
    }
}

impl std::ops::Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet::constant(0.0) - self
    }
}

/// Scalar abstraction letting manifold charts be written once and evaluated
/// either on plain floats or on [`Jet`]s.
pub trait Scalar:
    Copy
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
{
    fn c(v: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Scalar for f64 {
    fn c(v: f64) -> Self {
        v
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

impl Scalar for Jet {
    fn c(v: f64) -> Self {
        Jet::constant(v)
    }
    fn sin(self) -> Self {
        Jet::sin(self)
    }
    fn cos(self) -> Self {
        Jet::cos(self)
    }
    fn sqrt(self) -> Self {
        Jet::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        Jet::powi(self, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // f(a, b) = sin(a) * cos(b)^3 + sqrt(a + 2) / b
    fn f<S: Scalar>(a: S, b: S) -> S {
        a.sin() * b.cos().powi(3) + (a + S::c(2.0)).sqrt() / b
    }

    fn fd_grad(a: f64, b: f64, i: usize, h: f64) -> f64 {
        let e = |da: f64, db: f64| f(a + da, b + db);
        let (da, db) = if i == 0 { (h, 0.0) } else { (0.0, h) };
        (-e(2.0 * da, 2.0 * db) + 8.0 * e(da, db) - 8.0 * e(-da, -db) + e(-2.0 * da, -2.0 * db))
            / (12.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (a, b) = (0.7, 1.3);
        let j = f(Jet::var(a, 0), Jet::var(b, 1));
        assert_eq!(j.v, f(a, b));
        for i in 0..2 {
            let fd = fd_grad(a, b, i, 1e-4);
            assert!((j.g[i] - fd).abs() < 1e-10, "g[{i}] = {} vs fd {}", j.g[i], fd);
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let (a, b) = (0.7, 1.3);
        let j = f(Jet::var(a, 0), Jet::var(b, 1));
        let h = 1e-4;
        // Second derivatives by central differences on the AD gradient would be
        // circular; difference the function values instead.
        let e = |da: f64, db: f64| f(a + da, b + db);
        let haa = (e(h, 0.0) - 2.0 * e(0.0, 0.0) + e(-h, 0.0)) / (h * h);
        let hbb = (e(0.0, h) - 2.0 * e(0.0, 0.0) + e(0.0, -h)) / (h * h);
        let hab = (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4.0 * h * h);
        assert!((j.h[0][0] - haa).abs() < 1e-6);
        assert!((j.h[1][1] - hbb).abs() < 1e-6);
        assert!((j.h[0][1] - hab).abs() < 1e-6);
        assert!((j.h[0][1] - j.h[1][0]).abs() < 1e-14);
    }

    #[test]
    fn unused_variables_stay_zero() {
        let j = f(Jet::var(0.3, 0), Jet::var(0.9, 1));
        assert_eq!(j.g[2], 0.0);
        assert_eq!(j.h[3][1], 0.0);
    }
}
