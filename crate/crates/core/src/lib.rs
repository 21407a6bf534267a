//! Low-rank matrix recovery from affine measurements by difference-of-convex
//! programming with the Ky Fan 2-k-norm.

pub mod certify;
pub mod dca;
pub mod error;
pub mod exec;
mod jacobi;
pub mod kyfan;
pub mod lab;
pub mod linalg;
pub mod subproblem;

pub use error::{Error, Result};
pub use exec::Parallelism;
pub use linalg::{DenseMatrix, MeasurementOperator, SvdFactorization};
