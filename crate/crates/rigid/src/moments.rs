//! Mean and covariance estimation from incomplete data.
//!
//! Every sum is restricted to the rows where the participating entries are
//! observed and normalized by the count of such rows, so the estimators
//! reduce to the ordinary sample moments on complete data. The elementwise
//! covariance estimate is symmetric but not necessarily positive
//! semi-definite; [`project_psd`] repairs it with a single identity shift
//! that simultaneously enforces an eigenvalue floor θ and a condition-number
//! cap, and reduces to the closest-PSD projection `Σ̂ − min(0, λ_min(Σ̂))·I`
//! when θ = 0 and the cap is infinite.
//!
//! A blockwise tridiagonal variant for wide matrices keeps only the
//! near-diagonal blocks of the elementwise estimate before projecting.

use nalgebra::{DMatrix, DVector};

use crate::data::IncompleteMatrix;

/// Errors from moment estimation.
#[derive(Debug, Clone, thiserror::Error)]
pub enum MomentsError {
    #[error("column {0} has no observed entries")]
    ColumnNeverObserved(usize),
    #[error("features {0} and {1} are never jointly observed")]
    PairNeverJointlyObserved(usize, usize),
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Estimated first and second moments of the feature distribution, with the
/// covariance already projected to well-conditioned positive definiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    /// Estimated mean μ̂.
    pub mean: DVector<f64>,
    /// Projected covariance Σ̂⁺ (λ_min ≥ θ, condition number ≤ cap).
    pub cov: DMatrix<f64>,
    /// Pairwise availability ratios p_jk.
    pub availability: DMatrix<f64>,
    /// Eigenvalue floor θ applied by the projection.
    pub theta_floor: f64,
    /// Number of samples the estimate was computed from.
    pub n_samples: usize,
}

impl MomentEstimate {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Smallest pairwise availability ratio, `min_{j,k} p_jk`.
    pub fn p_min(&self) -> f64 {
        self.availability.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Eigenvalue floor θ for the covariance projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaRule {
    /// θ = 1e-8 · trace(Σ̂) / p.
    Auto,
    Fixed(f64),
}

/// Options for [`estimate_moments`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentOptions {
    pub theta: ThetaRule,
    /// Condition-number cap for the projected covariance.
    pub cond_cap: f64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self { theta: ThetaRule::Auto, cond_cap: 3.0e3 }
    }
}

impl MomentOptions {
    pub(crate) fn resolve_theta(&self, raw_cov: &DMatrix<f64>) -> f64 {
        match self.theta {
            ThetaRule::Fixed(t) => t,
            ThetaRule::Auto => 1e-8 * raw_cov.trace() / raw_cov.nrows() as f64,
        }
    }
}

/// Ratio of samples for which each pair of feature components is jointly
/// observed: entry (j,k) is `(1/n)·Σᵢ 1[j observed in row i]·1[k observed]`.
///
/// Zero entries are legal here; the estimators downstream reject them.
pub fn availability_ratios(data: &IncompleteMatrix) -> DMatrix<f64> {
    let (n, p) = (data.n_rows(), data.n_cols());
    let mut counts = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let observed = data.observed_in_row(i);
        for &j in &observed {
            for &k in &observed {
                counts[(j, k)] += 1.0;
            }
        }
    }
    counts / n as f64
}

/// Mean estimate: each component averages the rows that observe it.
pub fn estimate_mean(data: &IncompleteMatrix) -> Result<DVector<f64>, MomentsError> {
    let (n, p) = (data.n_rows(), data.n_cols());
    let mut sums = DVector::<f64>::zeros(p);
    let mut counts = vec![0usize; p];
    for i in 0..n {
        for j in 0..p {
            if data.is_observed(i, j) {
                sums[j] += data.value(i, j);
                counts[j] += 1;
            }
        }
    }
    for j in 0..p {
        if counts[j] == 0 {
            return Err(MomentsError::ColumnNeverObserved(j));
        }
        sums[j] /= counts[j] as f64;
    }
    Ok(sums)
}

/// Elementwise covariance estimate restricted to jointly observed rows:
/// `Σ̂_jk = Σᵢ (x_ij − μ̂_j)(x_ik − μ̂_k)·1[both observed] / (n·p_jk)`.
///
/// Symmetric by construction, but not necessarily positive semi-definite.
pub fn estimate_cov(
    data: &IncompleteMatrix,
    mean: &DVector<f64>,
) -> Result<DMatrix<f64>, MomentsError> {
    let (n, p) = (data.n_rows(), data.n_cols());
    if mean.len() != p {
        return Err(MomentsError::DimensionMismatch(format!(
            "mean has length {}, expected {}",
            mean.len(),
            p
        )));
    }
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        for k in j..p {
            // Each entry is an independent sum accumulated in row order, so
            // parallel entrywise evaluation would be bit-identical.
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..n {
                if data.is_observed(i, j) && data.is_observed(i, k) {
                    sum += (data.value(i, j) - mean[j]) * (data.value(i, k) - mean[k]);
                    count += 1;
                }
            }
            if count == 0 {
                return Err(MomentsError::PairNeverJointlyObserved(j, k));
            }
            let value = sum / count as f64;
            cov[(j, k)] = value;
            cov[(k, j)] = value;
        }
    }
    Ok(cov)
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), MomentsError> {
    let mut max_abs = 0.0f64;
    let mut max_asym = 0.0f64;
    for j in 0..m.nrows() {
        for k in 0..m.ncols() {
            max_abs = max_abs.max(m[(j, k)].abs());
            max_asym = max_asym.max((m[(j, k)] - m[(k, j)]).abs());
        }
    }
    if m.nrows() != m.ncols() || max_asym > 1e-10 * (1.0 + max_abs) {
        return Err(MomentsError::NotSymmetric(max_asym));
    }
    Ok(())
}

/// Smallest and largest eigenvalues of a symmetric matrix.
fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eigenvalues = m.clone().symmetric_eigen().eigenvalues;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in eigenvalues.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    (lo, hi)
}

/// Shifts a symmetric matrix by `δ·I` with the smallest δ ≥ 0 that makes the
/// smallest eigenvalue reach `theta` and the condition number stay at or
/// below `cond_cap`:
///
/// ```text
/// δ = max(0, θ − λ_min, (λ_max − cap·λ_min) / (cap − 1))
/// ```
///
/// Eigenvectors are unchanged. With θ = 0 and an infinite cap this is the
/// Frobenius-closest PSD matrix `Σ̂ − min(0, λ_min(Σ̂))·I`.
pub fn project_psd(
    cov: &DMatrix<f64>,
    theta: f64,
    cond_cap: f64,
) -> Result<DMatrix<f64>, MomentsError> {
    check_symmetric(cov)?;
    let (lambda_min, lambda_max) = eigen_range(cov);
    let mut delta = (theta - lambda_min).max(0.0);
    if cond_cap.is_finite() {
        delta = delta.max((lambda_max - cond_cap * lambda_min) / (cond_cap - 1.0));
    }
    let mut out = cov.clone();
    for j in 0..out.nrows() {
        out[(j, j)] += delta;
    }
    Ok(out)
}

/// Bandwidth K of the blockwise tridiagonal estimator:
/// `round((n·p_min)^{1/(2α+1)})`, half-up, clamped to `[1, p]`.
pub fn blockwise_bandwidth(n_effective: f64, alpha: f64, p: usize) -> usize {
    let k = n_effective.max(0.0).powf(1.0 / (2.0 * alpha + 1.0));
    (k.round() as usize).clamp(1, p)
}

/// Zeroes every block (j, j') with |j − j'| > 1 of a consecutive partition of
/// the columns into blocks of size `k`.
pub fn truncate_blockwise(cov: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    assert!(k >= 1, "block size must be at least 1");
    let mut out = cov.clone();
    for r in 0..out.nrows() {
        for c in 0..out.ncols() {
            if (r / k).abs_diff(c / k) > 1 {
                out[(r, c)] = 0.0;
            }
        }
    }
    out
}

/// Blockwise tridiagonal covariance estimate for wide matrices: the
/// elementwise estimate is truncated to its near-diagonal blocks of size
/// `K = round((n·p_min)^{1/(2α+1)})` and then projected with [`project_psd`].
pub fn estimate_cov_blockwise(
    data: &IncompleteMatrix,
    alpha: f64,
    options: &MomentOptions,
) -> Result<DMatrix<f64>, MomentsError> {
    assert!(alpha > 0.0, "alpha must be positive");
    let mean = estimate_mean(data)?;
    let raw = estimate_cov(data, &mean)?;
    let availability = availability_ratios(data);
    let p_min = availability.iter().cloned().fold(f64::INFINITY, f64::min);
    let k = blockwise_bandwidth(data.n_rows() as f64 * p_min, alpha, data.n_cols());
    let truncated = truncate_blockwise(&raw, k);
    project_psd(&truncated, options.resolve_theta(&truncated), options.cond_cap)
}

/// Full estimation pass: mean, elementwise covariance, projection.
pub fn estimate_moments(
    data: &IncompleteMatrix,
    options: &MomentOptions,
) -> Result<MomentEstimate, MomentsError> {
    let mean = estimate_mean(data)?;
    let raw = estimate_cov(data, &mean)?;
    let theta = options.resolve_theta(&raw);
    let cov = project_psd(&raw, theta, options.cond_cap)?;
    Ok(MomentEstimate {
        mean,
        cov,
        availability: availability_ratios(data),
        theta_floor: theta,
        n_samples: data.n_rows(),
    })
}
