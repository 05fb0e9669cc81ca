//! Seeded mask generators for the four simulation mechanisms.
//!
//! * MCAR — every cell is masked independently with the target probability.
//! * MAR — a random 30% of the columns stay fully observed; the remaining
//!   columns are masked with probability `sigmoid(wᵀx_obs + b)` computed from
//!   the always-observed values, with the intercept b calibrated by bisection
//!   so the overall realized rate hits the target.
//! * MNAR (logistic) — 30% of the columns serve as logistic inputs and are
//!   masked MCAR at the target rate; the remaining columns are masked through
//!   the logistic model on those (possibly masked) input values.
//! * MNAR (quantile) — 70% of the columns are affected; only cells in the
//!   upper or lower 25% empirical quantile band of their column can be
//!   masked, each with probability equal to the target rate. The realized
//!   overall rate is therefore below the nominal label and is reported, not
//!   rescaled.
//!
//! Cell randomness is drawn from per-row streams derived from the seed, so
//! row-parallel and serial generation agree bit for bit. Columns that end up
//! fully masked are resampled from a per-column guard stream and finally
//! force-unmasked at one random cell, since downstream estimation requires
//! every column to be observed at least once.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Errors from mask generation.
#[derive(Debug, Clone, thiserror::Error)]
pub enum MissingnessError {
    #[error(
        "cannot reach the target rate {target:.3}: best achievable calibration error \
         {achieved:.3} after {attempts} weight draws"
    )]
    RateUnreachable { target: f64, achieved: f64, attempts: usize },
    #[error("invalid mask specification: {0}")]
    InvalidSpec(String),
}

/// Masking mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Mcar,
    Mar,
    MnarLogistic,
    MnarQuantile,
}

/// Mask generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub mechanism: Mechanism,
    /// Target missing rate in (0, 1).
    pub rate: f64,
    pub seed: u64,
    /// Fraction of columns kept fully observed under MAR.
    pub mar_observed_fraction: f64,
    /// Fraction of columns used as logistic inputs under MNAR.
    pub mnar_input_fraction: f64,
    /// Fraction of columns affected under quantile MNAR.
    pub mnar_q_column_fraction: f64,
    /// Width of each masked quantile tail under quantile MNAR.
    pub mnar_q_quantile: f64,
}

impl MaskSpec {
    pub fn new(mechanism: Mechanism, rate: f64, seed: u64) -> Self {
        Self {
            mechanism,
            rate,
            seed,
            mar_observed_fraction: 0.3,
            mnar_input_fraction: 0.3,
            mnar_q_column_fraction: 0.7,
            mnar_q_quantile: 0.25,
        }
    }

    fn validate(&self) -> Result<(), MissingnessError> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(MissingnessError::InvalidSpec(format!(
                "rate must lie in (0,1), got {}",
                self.rate
            )));
        }
        for (name, f) in [
            ("mar_observed_fraction", self.mar_observed_fraction),
            ("mnar_input_fraction", self.mnar_input_fraction),
            ("mnar_q_column_fraction", self.mnar_q_column_fraction),
            ("mnar_q_quantile", self.mnar_q_quantile),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(MissingnessError::InvalidSpec(format!(
                    "{name} must lie in (0,1], got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// splitmix64-style seed derivation for independent named streams.
fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut x = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = x.wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

const TAG_COLUMNS: u64 = 1;
const TAG_WEIGHTS: u64 = 2;
const TAG_ROW: u64 = 3;
const TAG_GUARD: u64 = 4;

fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-cell masking probabilities of one mechanism draw. `None` marks cells
/// that can never be masked.
struct MaskModel {
    probs: DMatrix<f64>,
}

/// Calibrates the intercept of `sigmoid(score + b)` so the mean probability
/// over `scores` hits `target` within 2e-3.
fn calibrate_intercept(scores: &[f64], target: f64) -> Result<f64, f64> {
    let mean_prob = |b: f64| scores.iter().map(|&s| sigmoid(s + b)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let err = (mean_prob(b) - target).abs();
    if err <= 2e-3 {
        Ok(b)
    } else {
        Err(err)
    }
}

/// Draws `count` distinct column indices from a seeded stream, returned sorted.
fn choose_columns(rng: &mut ChaCha8Rng, p: usize, count: usize) -> Vec<usize> {
    let mut cols = rand::seq::index::sample(rng, p, count).into_vec();
    cols.sort_unstable();
    cols
}

fn fraction_count(p: usize, fraction: f64) -> usize {
    ((p as f64 * fraction).round() as usize).clamp(1, p)
}

fn mcar_model(n: usize, p: usize, rate: f64) -> MaskModel {
    MaskModel { probs: DMatrix::from_element(n, p, rate) }
}

fn mar_model(
    data: &DMatrix<f64>,
    spec: &MaskSpec,
) -> Result<MaskModel, MissingnessError> {
    let (n, p) = (data.nrows(), data.ncols());
    let observed_count = fraction_count(p, spec.mar_observed_fraction);
    if observed_count == p {
        return Err(MissingnessError::InvalidSpec(
            "MAR requires at least one maskable column".into(),
        ));
    }
    let maskable = p - observed_count;
    // The per-cell rate on maskable columns that yields the overall target.
    let cell_target = spec.rate * p as f64 / maskable as f64;
    if cell_target >= 1.0 {
        return Err(MissingnessError::InvalidSpec(format!(
            "target rate {} is unreachable with {} of {} columns maskable",
            spec.rate, maskable, p
        )));
    }
    let mut col_rng = stream(spec.seed, TAG_COLUMNS, 0);
    let observed_cols = choose_columns(&mut col_rng, p, observed_count);
    let mut best_err = f64::INFINITY;
    for attempt in 0..5u64 {
        let mut w_rng = stream(spec.seed, TAG_WEIGHTS, attempt);
        let scale = 1.0 / (observed_count as f64).sqrt();
        let weights: Vec<f64> =
            (0..observed_count).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut w_rng) * scale).collect();
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                observed_cols
                    .iter()
                    .zip(&weights)
                    .map(|(&j, &w)| w * data[(i, j)])
                    .sum()
            })
            .collect();
        match calibrate_intercept(&scores, cell_target) {
            Ok(intercept) => {
                let mut probs = DMatrix::zeros(n, p);
                let mut is_observed_col = vec![false; p];
                for &j in &observed_cols {
                    is_observed_col[j] = true;
                }
                for i in 0..n {
                    let prob = sigmoid(scores[i] + intercept);
                    for j in 0..p {
                        if !is_observed_col[j] {
                            probs[(i, j)] = prob;
                        }
                    }
                }
                return Ok(MaskModel { probs });
            }
            Err(err) => best_err = best_err.min(err),
        }
    }
    Err(MissingnessError::RateUnreachable { target: spec.rate, achieved: best_err, attempts: 5 })
}

fn mnar_logistic_model(
    data: &DMatrix<f64>,
    spec: &MaskSpec,
) -> Result<MaskModel, MissingnessError> {
    let (n, p) = (data.nrows(), data.ncols());
    let input_count = fraction_count(p, spec.mnar_input_fraction).clamp(1, p.saturating_sub(1).max(1));
    if p < 2 {
        return Err(MissingnessError::InvalidSpec(
            "MNAR logistic requires at least two columns".into(),
        ));
    }
    let mut col_rng = stream(spec.seed, TAG_COLUMNS, 0);
    let input_cols = choose_columns(&mut col_rng, p, input_count);
    let mut best_err = f64::INFINITY;
    for attempt in 0..5u64 {
        let mut w_rng = stream(spec.seed, TAG_WEIGHTS, attempt);
        let scale = 1.0 / (input_count as f64).sqrt();
        let weights: Vec<f64> =
            (0..input_count).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut w_rng) * scale).collect();
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                input_cols
                    .iter()
                    .zip(&weights)
                    .map(|(&j, &w)| w * data[(i, j)])
                    .sum()
            })
            .collect();
        match calibrate_intercept(&scores, spec.rate) {
            Ok(intercept) => {
                let mut probs = DMatrix::zeros(n, p);
                let mut is_input = vec![false; p];
                for &j in &input_cols {
                    is_input[j] = true;
                }
                for i in 0..n {
                    let prob = sigmoid(scores[i] + intercept);
                    for j in 0..p {
                        // Inputs are masked MCAR at the target rate.
                        probs[(i, j)] = if is_input[j] { spec.rate } else { prob };
                    }
                }
                return Ok(MaskModel { probs });
            }
            Err(err) => best_err = best_err.min(err),
        }
    }
    Err(MissingnessError::RateUnreachable { target: spec.rate, achieved: best_err, attempts: 5 })
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty() && (0.0..=1.0).contains(&q));
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let position = q * (sorted.len() - 1) as f64;
    let lo = position.floor() as usize;
    let hi = position.ceil() as usize;
    let frac = position - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn mnar_quantile_model(data: &DMatrix<f64>, spec: &MaskSpec) -> MaskModel {
    let (n, p) = (data.nrows(), data.ncols());
    let affected_count = fraction_count(p, spec.mnar_q_column_fraction);
    let mut col_rng = stream(spec.seed, TAG_COLUMNS, 0);
    let affected = choose_columns(&mut col_rng, p, affected_count);
    let mut probs = DMatrix::zeros(n, p);
    for &j in &affected {
        let column: Vec<f64> = (0..n).map(|i| data[(i, j)]).collect();
        let lower = empirical_quantile(&column, spec.mnar_q_quantile);
        let upper = empirical_quantile(&column, 1.0 - spec.mnar_q_quantile);
        for i in 0..n {
            let v = data[(i, j)];
            if v <= lower || v >= upper {
                probs[(i, j)] = spec.rate;
            }
        }
    }
    MaskModel { probs }
}

/// Generates an observation mask (`true` = observed) for complete data under
/// the requested mechanism. Deterministic for a fixed `(data, spec)` pair.
pub fn generate_mask(
    data: &DMatrix<f64>,
    spec: &MaskSpec,
) -> Result<DMatrix<bool>, MissingnessError> {
    spec.validate()?;
    let (n, p) = (data.nrows(), data.ncols());
    if n == 0 || p == 0 {
        return Err(MissingnessError::InvalidSpec("data must be non-empty".into()));
    }
    let model = match spec.mechanism {
        Mechanism::Mcar => mcar_model(n, p, spec.rate),
        Mechanism::Mar => mar_model(data, spec)?,
        Mechanism::MnarLogistic => mnar_logistic_model(data, spec)?,
        Mechanism::MnarQuantile => mnar_quantile_model(data, spec),
    };

    // Per-row streams so parallel and serial generation agree bit for bit.
    let mut mask = DMatrix::from_element(n, p, true);
    for i in 0..n {
        let mut rng = stream(spec.seed, TAG_ROW, i as u64);
        for j in 0..p {
            let u: f64 = rng.random();
            if u < model.probs[(i, j)] {
                mask[(i, j)] = false;
            }
        }
    }

    // Guard: every column must keep at least one observed cell.
    for j in 0..p {
        let mut observed = (0..n).any(|i| mask[(i, j)]);
        let mut guard = stream(spec.seed, TAG_GUARD, j as u64);
        let mut attempts = 0;
        while !observed && attempts < 100 {
            for i in 0..n {
                let u: f64 = guard.random();
                mask[(i, j)] = u >= model.probs[(i, j)];
            }
            observed = (0..n).any(|i| mask[(i, j)]);
            attempts += 1;
        }
        if !observed {
            let row = guard.random_range(0..n);
            mask[(row, j)] = true;
        }
    }
    Ok(mask)
}

/// Fraction of masked cells.
pub fn realized_rate(mask: &DMatrix<bool>) -> f64 {
    let total = mask.nrows() * mask.ncols();
    mask.iter().filter(|&&m| !m).count() as f64 / total as f64
}
