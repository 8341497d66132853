//! Objective evaluation: Fréchet distance between embedding distributions,
//! within-class mean squared distance, and Welch's t-test.

mod frechet;
mod msd;
mod ttest;

pub use frechet::{
    fit_gaussian, frechet_distance, matrix_sqrt_psd, FrechetResult, GaussianStats, FRECHET_RIDGE,
    NEGATIVE_CLAMP, SYMMETRY_TOL,
};
pub use msd::{msd_report, pairwise_msd, MsdReport};
pub use ttest::{
    ln_gamma, regularized_incomplete_beta, student_t_cdf, student_t_two_sided_p, welch_ttest,
    TTestResult,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("class {class:?} has {got} vectors; at least 2 are needed")]
    ClassTooSmall { class: String, got: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max |M - Mᵀ| = {0:e})")]
    Asymmetric(f64),
    #[error("t statistic is undefined: both samples have zero variance")]
    UndefinedStatistic,
    #[error("no classes to evaluate")]
    NoClasses,
}
