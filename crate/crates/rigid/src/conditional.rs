//! Per-pattern conditional Gaussian statistics.
//!
//! For a missing index set ℳ with observed complement 𝒜, the missing block
//! of an `𝒩(μ, Σ)` vector, conditioned on the observed block, is again
//! normal with
//!
//! ```text
//! μ̄ = μ_ℳ + Σ_ℳ𝒜 Σ_𝒜𝒜⁻¹ (x_𝒜 − μ_𝒜),    Σ̄ = Σ_ℳℳ − Σ_ℳ𝒜 Σ_𝒜𝒜⁻¹ Σ_𝒜ℳ.
//! ```
//!
//! Σ̄ is the Schur complement of Σ_𝒜𝒜 in Σ. Since distinct missing patterns
//! are typically far fewer than samples, the registry computes each pattern's
//! factorization exactly once and shares it across rows. Σ_𝒜𝒜⁻¹ is never
//! formed; the regression map is obtained from triangular solves against a
//! Cholesky factor of Σ_𝒜𝒜.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::IncompleteMatrix;

/// Errors from conditional-statistics computation.
#[derive(Debug, Clone, thiserror::Error)]
pub enum ConditionalError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid missing pattern: {0}")]
    InvalidPattern(String),
    #[error(
        "factorization failed for pattern {missing:?}: the conditional covariance is not \
         numerically positive definite (re-project the covariance with a larger floor)"
    )]
    FactorizationFailure { missing: Vec<usize> },
}

/// A sorted set of missing column indices ℳ ⊆ [p].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MissingPattern {
    missing: Vec<usize>,
    dim: usize,
}

impl MissingPattern {
    /// Builds a pattern from the missing indices; they must be strictly
    /// increasing and lie in `[0, dim)`.
    pub fn new(missing: Vec<usize>, dim: usize) -> Result<Self, ConditionalError> {
        for window in missing.windows(2) {
            if window[0] >= window[1] {
                return Err(ConditionalError::InvalidPattern(format!(
                    "indices must be strictly increasing, got {missing:?}"
                )));
            }
        }
        if let Some(&last) = missing.last() {
            if last >= dim {
                return Err(ConditionalError::InvalidPattern(format!(
                    "index {last} out of range for dimension {dim}"
                )));
            }
        }
        Ok(Self { missing, dim })
    }

    /// The complete pattern: no column observed.
    pub fn full(dim: usize) -> Self {
        Self { missing: (0..dim).collect(), dim }
    }

    /// The empty pattern: every column observed.
    pub fn empty(dim: usize) -> Self {
        Self { missing: Vec::new(), dim }
    }

    /// Pattern of one row of an observation mask.
    pub fn from_mask_row(data: &IncompleteMatrix, row: usize) -> Self {
        Self { missing: data.missing_in_row(row), dim: data.n_cols() }
    }

    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    /// The observed complement 𝒜, in increasing order.
    pub fn observed(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim - self.missing.len());
        let mut it = self.missing.iter().peekable();
        for j in 0..self.dim {
            if it.peek() == Some(&&j) {
                it.next();
            } else {
                out.push(j);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_missing(&self) -> usize {
        self.missing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.missing.len() == self.dim
    }
}

/// Cached conditional statistics for one missing pattern.
#[derive(Debug, Clone)]
pub struct PatternStats {
    pub pattern: MissingPattern,
    /// Conditional covariance Σ̄ (|ℳ|×|ℳ|, positive definite).
    pub cond_cov: DMatrix<f64>,
    /// Lower-triangular factor C̄ with Σ̄ = C̄ C̄ᵀ.
    pub cond_cov_factor: DMatrix<f64>,
    /// Regression map Σ_ℳ𝒜 Σ_𝒜𝒜⁻¹ (|ℳ|×|𝒜|).
    pub regression_map: DMatrix<f64>,
    /// Number of training rows sharing this pattern (set by the registry;
    /// zero for standalone computations).
    pub count: usize,
}

impl PatternStats {
    /// Weighted norm ‖v‖_Σ̄ = ‖C̄ᵀ v‖ of a vector over the missing block.
    pub fn weighted_norm(&self, v: &DVector<f64>) -> f64 {
        (self.cond_cov_factor.transpose() * v).norm()
    }
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// Schur complement Σ_ℳℳ − Σ_ℳ𝒜 Σ_𝒜𝒜⁻¹ Σ_𝒜ℳ together with the regression
/// map Σ_ℳ𝒜 Σ_𝒜𝒜⁻¹, computed via a Cholesky factorization of Σ_𝒜𝒜.
fn schur_parts(
    cov: &DMatrix<f64>,
    pattern: &MissingPattern,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ConditionalError> {
    let missing = pattern.missing();
    let observed = pattern.observed();
    let cov_mm = submatrix(cov, missing, missing);
    if observed.is_empty() {
        return Ok((cov_mm, DMatrix::zeros(missing.len(), 0)));
    }
    let cov_aa = submatrix(cov, &observed, &observed);
    let cov_am = submatrix(cov, &observed, missing);
    let chol_aa = Cholesky::new(cov_aa).ok_or_else(|| ConditionalError::FactorizationFailure {
        missing: missing.to_vec(),
    })?;
    // X = Σ_𝒜𝒜⁻¹ Σ_𝒜ℳ through two triangular solves.
    let x = chol_aa.solve(&cov_am);
    let cond_cov = cov_mm - cov_am.transpose() * &x;
    Ok((cond_cov, x.transpose()))
}

/// Schur complement of the observed block: the conditional covariance of the
/// missing block. Returns a 0×0 matrix for the empty pattern and `cov` itself
/// for the full pattern.
pub fn schur_complement(
    cov: &DMatrix<f64>,
    pattern: &MissingPattern,
) -> Result<DMatrix<f64>, ConditionalError> {
    check_cov_pattern(cov, pattern)?;
    Ok(schur_parts(cov, pattern)?.0)
}

fn check_cov_pattern(
    cov: &DMatrix<f64>,
    pattern: &MissingPattern,
) -> Result<(), ConditionalError> {
    if cov.nrows() != cov.ncols() || cov.nrows() != pattern.dim() {
        return Err(ConditionalError::DimensionMismatch(format!(
            "covariance is {}×{} but the pattern has dimension {}",
            cov.nrows(),
            cov.ncols(),
            pattern.dim()
        )));
    }
    Ok(())
}

/// Conditional covariance, its lower-triangular factor and the regression map
/// for one missing pattern.
pub fn pattern_stats(
    cov: &DMatrix<f64>,
    mean: &DVector<f64>,
    pattern: &MissingPattern,
) -> Result<PatternStats, ConditionalError> {
    check_cov_pattern(cov, pattern)?;
    if mean.len() != pattern.dim() {
        return Err(ConditionalError::DimensionMismatch(format!(
            "mean has length {} but the pattern has dimension {}",
            mean.len(),
            pattern.dim()
        )));
    }
    let (cond_cov, regression_map) = schur_parts(cov, pattern)?;
    let factor = factor_cond_cov(&cond_cov, pattern)?;
    Ok(PatternStats {
        pattern: pattern.clone(),
        cond_cov,
        cond_cov_factor: factor,
        regression_map,
        count: 0,
    })
}

fn factor_cond_cov(
    cond_cov: &DMatrix<f64>,
    pattern: &MissingPattern,
) -> Result<DMatrix<f64>, ConditionalError> {
    if cond_cov.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let chol: Cholesky<f64, Dyn> = Cholesky::new(cond_cov.clone()).ok_or_else(|| {
        ConditionalError::FactorizationFailure { missing: pattern.missing().to_vec() }
    })?;
    Ok(chol.l())
}

/// Conditional mean μ̄ = μ_ℳ + map · (x_𝒜 − μ_𝒜) of the missing block given
/// the observed values.
pub fn conditional_mean(
    stats: &PatternStats,
    mean: &DVector<f64>,
    observed_values: &DVector<f64>,
) -> Result<DVector<f64>, ConditionalError> {
    let pattern = &stats.pattern;
    if mean.len() != pattern.dim() {
        return Err(ConditionalError::DimensionMismatch(format!(
            "mean has length {} but the pattern has dimension {}",
            mean.len(),
            pattern.dim()
        )));
    }
    let observed = pattern.observed();
    if observed_values.len() != observed.len() {
        return Err(ConditionalError::DimensionMismatch(format!(
            "{} observed values supplied for a pattern with {} observed entries",
            observed_values.len(),
            observed.len()
        )));
    }
    let missing = pattern.missing();
    let mut residual = observed_values.clone();
    for (r, &j) in observed.iter().enumerate() {
        residual[r] -= mean[j];
    }
    let mut out = DVector::from_fn(missing.len(), |r, _| mean[missing[r]]);
    out += &stats.regression_map * residual;
    Ok(out)
}

/// One [`PatternStats`] per distinct row pattern, iterated in lexicographic
/// pattern order.
#[derive(Debug, Clone)]
pub struct PatternRegistry {
    stats: Vec<PatternStats>,
    index: BTreeMap<Vec<usize>, usize>,
    dim: usize,
}

impl PatternRegistry {
    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entries in lexicographic order of their missing-index sets.
    pub fn stats(&self) -> &[PatternStats] {
        &self.stats
    }

    /// Position of a pattern given by its missing indices.
    pub fn index_of(&self, missing: &[usize]) -> Option<usize> {
        self.index.get(missing).copied()
    }

    pub fn get(&self, pattern: &MissingPattern) -> Option<&PatternStats> {
        self.index_of(pattern.missing()).map(|i| &self.stats[i])
    }
}

/// Deduplicates the row patterns of `data` and computes each pattern's
/// conditional statistics exactly once. Pattern counts sum to the row count.
pub fn build_registry(
    data: &IncompleteMatrix,
    cov: &DMatrix<f64>,
    mean: &DVector<f64>,
) -> Result<PatternRegistry, ConditionalError> {
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for i in 0..data.n_rows() {
        *counts.entry(data.missing_in_row(i)).or_insert(0) += 1;
    }
    let mut stats = Vec::with_capacity(counts.len());
    let mut index = BTreeMap::new();
    for (missing, count) in counts {
        let pattern = MissingPattern::new(missing.clone(), data.n_cols())?;
        let mut entry = pattern_stats(cov, mean, &pattern)?;
        entry.count = count;
        index.insert(missing, stats.len());
        stats.push(entry);
    }
    Ok(PatternRegistry { stats, index, dim: data.n_cols() })
}
