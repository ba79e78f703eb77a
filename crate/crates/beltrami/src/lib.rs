//! Discrete Laplace-Beltrami operators on point clouds sampled from smooth
//! embedded manifolds.
//!
//! The crate builds row-sparse approximations of the Laplace-Beltrami
//! operator from K-nearest-neighbor stencils projected onto analytic tangent
//! planes, using either weighted polynomial regression (GMLS), the
//! tangent-plane PHS+Poly saddle system (RBF-FD), or the two-step method that
//! regresses with GMLS and interpolates the residual with a polyharmonic
//! spline (gRBF-FD). On top of the operator sit screened-Poisson solves,
//! forward/inverse error metrics, stability diagnostics, and the empirical
//! checks used by the verification suites.
//!
//! Typical flow:
//!
//! ```
//! use beltrami::manifolds::{ManifoldSpec, SamplingMode};
//! use beltrami::local_ops::{Method, MethodConfig, StencilPolicy, WeightScheme};
//! use beltrami::assembly::{assemble, forward_error, solve_screened_poisson, inverse_error};
//!
//! let cloud = ManifoldSpec::Ellipse1d
//!     .sample_points(400, SamplingMode::Random, 7)
//!     .unwrap();
//! let config = MethodConfig {
//!     method: Method::GrbfFd,
//!     weight: WeightScheme::OneOverK,
//!     l: 4,
//!     kappa: 3,
//!     delta: 1e-6,
//!     policy: StencilPolicy::auto(10),
//! };
//! let op = assemble(&cloud, &config).unwrap();
//! let fe = forward_error(&op, &cloud.f_values, &cloud.lap_values);
//! let report = solve_screened_poisson(&op, &cloud.h_values, 1e-10).unwrap();
//! let ie = inverse_error(&report.f, &cloud.f_values);
//! assert!(fe < 1.0 && ie < 1e-2);
//! ```

pub mod assembly;
pub mod error;
pub mod io;
pub mod jet;
pub mod local_ops;
pub mod manifolds;
pub mod sparse;
pub mod stencils;
pub mod verification;

pub use error::{Error, Result};
