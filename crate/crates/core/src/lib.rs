//! Multiple-set linear canonical analysis (MSLCA) of K random vectors,
//! in a classical form based on the empirical covariance and a robust
//! form based on the minimum covariance determinant (MCD) estimator,
//! together with the influence-function calculus of both, asymptotic
//! covariance formulas, and a robust chi-square test for mutual
//! non-correlation of the K blocks.

pub mod blocks;
pub mod elliptical;
pub mod error;
pub mod influence;
pub mod math;
pub mod mcd;
pub mod mslca;
pub mod noncorr;
pub mod sim;

pub use blocks::{BlockStructure, ScatterMatrix};
pub use elliptical::{compute_constants, solve_radius, EllipticalModel, RobustConstants};
pub use error::{Error, Result};
pub use influence::IfContext;
pub use mcd::{exhaustive_mcd, fast_mcd, McdFit};
pub use mslca::{build_t, classical_fit, robust_fit, McdOptions, MslcaFit};
pub use noncorr::{run_test, TestResult};
