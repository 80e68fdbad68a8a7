//! Penalized low-rank factorization of multi-group, multi-view data.
//!
//! A collection of matrices `X_ij` links views `i` and `j`. Each view gets a
//! k-frame `V_i` (parametrized by Givens angles) and a diagonal `D_i`, and
//! every matrix is approximated by `V_i D_i D_j V_jᵀ`. Sparsity penalties on
//! `D` and `V D` select which components each view takes part in.
//!
//! The numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the common `f64` case.

pub mod analysis;
pub mod data;
pub mod error;
pub mod gradients;
pub mod initialize;
pub mod kframe;
pub mod objective;
pub mod optimizer;
pub mod scalar;
pub mod selection;

pub use analysis::{
    bicluster, directed_r2, directed_r2_table, effective_rank, impute, impute_denormalized, r2_matrix, Bicluster, Sign,
    Solution, ViewClusters, DEFAULT_ZERO_THRESHOLD, R2,
};
pub use data::{
    holdout_split, normalize, Centering, Dataset, Holdout, MaskedMatrix, MatrixScaling, NormalizationPolicy,
    NormalizationRecord, View, ViewGraph,
};
pub use error::{Error, Result};
pub use gradients::{full_gradient, grad_d, grad_xi};
pub use initialize::init_global;
pub use kframe::{build_kframe, invert_kframe, GivensAngles, KFrame};
pub use objective::{objective_value, reconstruction_loss, ModelParams, Objective, Penalties};
pub use optimizer::{minimize, FnProblem, Memory, OptimizerConfig, OptimizerReport, Problem, Termination};
pub use scalar::Scalar;
pub use selection::{cross_validate, fit_model, CvConfig, CvResult, Fit, FitConfig, LambdaGrid, RefitStart};

pub type KFrame64 = KFrame<f64>;
pub type KFrame32 = KFrame<f32>;
pub type GivensAngles64 = GivensAngles<f64>;
pub type GivensAngles32 = GivensAngles<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type Solution64 = Solution<f64>;
pub type Solution32 = Solution<f32>;
