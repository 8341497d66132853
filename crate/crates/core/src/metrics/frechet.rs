//! Gaussian fits of embedding sets and the Fréchet distance between them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use super::MetricsError;

/// Ridge added to both covariances when either one is rank-deficient.
pub const FRECHET_RIDGE: f64 = 1e-6;
/// Symmetry tolerance for covariance inputs.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Negative results smaller than this in magnitude are clamped to 0.
pub const NEGATIVE_CLAMP: f64 = 1e-8;
/// Relative eigenvalue floor below which a covariance counts as rank-deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Build from explicit parameters; the covariance must be symmetric.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, n: usize) -> Result<Self, MetricsError> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(MetricsError::DimMismatch {
                left: d,
                right: covariance.nrows(),
            });
        }
        if n < 2 {
            return Err(MetricsError::TooFewSamples { needed: 2, got: n });
        }
        check_symmetric(&covariance)?;
        Ok(Self { mean, covariance, n })
    }
}

/// Sample mean and unbiased (n-1) covariance, symmetrized.
pub fn fit_gaussian<V: AsRef<[f64]>>(rows: &[V]) -> Result<GaussianStats, MetricsError> {
    let n = rows.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, got: n });
    }
    let d = rows[0].as_ref().len();
    for r in rows {
        if r.as_ref().len() != d {
            return Err(MetricsError::DimMismatch {
                left: d,
                right: r.as_ref().len(),
            });
        }
    }
    let mut mean = DVector::<f64>::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r.as_ref());
    }
    mean /= n as f64;
    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (i, r) in rows.iter().enumerate() {
        for (j, &x) in r.as_ref().iter().enumerate() {
            centered[(i, j)] = x - mean[j];
        }
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats {
        mean,
        covariance: cov,
        n,
    })
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), MetricsError> {
    if m.nrows() != m.ncols() {
        return Err(MetricsError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let d = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_TOL {
        return Err(MetricsError::Asymmetric(worst));
    }
    Ok(())
}

/// Square root of a symmetric PSD matrix via eigendecomposition.
///
/// Negative eigenvalues (numerical noise or genuinely indefinite input) are
/// clamped to zero, so the result squares to the clamped matrix.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    check_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&sqrt_vals) * v.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

fn is_rank_deficient(m: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    min <= RANK_TOL * max.max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrechetResult {
    pub distance: f64,
    pub regularization_applied: bool,
}

/// ‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2·(Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2}).
pub fn frechet_distance(g1: &GaussianStats, g2: &GaussianStats) -> Result<FrechetResult, MetricsError> {
    if g1.dim() != g2.dim() {
        return Err(MetricsError::DimMismatch {
            left: g1.dim(),
            right: g2.dim(),
        });
    }
    let d = g1.dim();
    let diff = &g1.mean - &g2.mean;
    let mean_term = diff.dot(&diff);

    let mut s1 = g1.covariance.clone();
    let mut s2 = g2.covariance.clone();
    let regularize = is_rank_deficient(&s1) || is_rank_deficient(&s2);
    if regularize {
        let ridge = DMatrix::<f64>::identity(d, d) * FRECHET_RIDGE;
        s1 += &ridge;
        s2 += &ridge;
    }
    let s1_half = matrix_sqrt_psd(&s1)?;
    let inner = &s1_half * &s2 * &s1_half;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross_trace: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();

    let mut distance = mean_term + s1.trace() + s2.trace() - 2.0 * cross_trace;
    if distance < 0.0 && distance.abs() < NEGATIVE_CLAMP {
        distance = 0.0;
    }
    Ok(FrechetResult {
        distance,
        regularization_applied: regularize,
    })
}
