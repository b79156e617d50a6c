//! Mixture density networks whose Gaussian components carry full covariance.
//!
//! Each component is parameterized by the upper-triangular Cholesky factor `Ū`
//! of its precision matrix, `Σ⁻¹ = ŪᵀŪ`, where `Ū` is a raw triangle `U` with its
//! diagonal passed through `exp`. This keeps every covariance positive definite,
//! makes the log-determinant a plain diagonal sum, and turns sampling into one
//! triangular solve.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*F64` and
//! `*F32` aliases below fix the scalar type.

pub mod autonet;
pub mod data;
pub mod error;
pub mod gmm;
pub mod linalg;
pub mod loss;
pub mod rng;
pub mod scalar;
pub mod train;

pub use autonet::{Activation, CovarianceMode, HeadLayout, Mdn, MdnConfig, NetworkParams};
pub use data::{ConditionedBatch, DatasetSpec, Generator};
pub use error::{MdnError, Result};
pub use gmm::{DiagParams, Draw, GaussianMixture, LatentVector, Mixture, MixtureParams};
pub use linalg::{CholeskyFactor, DenseMatrix, UpperTriangularRaw};
pub use loss::{LossKind, LossValue};
pub use scalar::Real;
pub use train::{train, TrainConfig, TrainReport};

pub type MixtureParamsF64 = MixtureParams<f64>;
pub type MixtureParamsF32 = MixtureParams<f32>;
pub type DiagParamsF64 = DiagParams<f64>;
pub type DiagParamsF32 = DiagParams<f32>;
pub type UpperTriangularRawF64 = UpperTriangularRaw<f64>;
pub type CholeskyFactorF64 = CholeskyFactor<f64>;
pub type DenseMatrixF64 = DenseMatrix<f64>;
pub type NetworkParamsF64 = NetworkParams<f64>;
pub type MdnF64 = Mdn<f64>;
pub type MdnF32 = Mdn<f32>;
pub type ConditionedBatchF64 = ConditionedBatch<f64>;
pub type ConditionedBatchF32 = ConditionedBatch<f32>;
pub type TrainReportF64 = TrainReport<f64>;
