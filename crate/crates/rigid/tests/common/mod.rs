//! Shared fixtures and independent oracles for the integration suites.

#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use rigid::conditional::{build_registry, PatternRegistry};
use rigid::moments::{estimate_moments, MomentEstimate, MomentOptions};
use rigid::IncompleteMatrix;

/// A correlated positive definite matrix from a low-rank factor plus a ridge.
pub fn random_spd(p: usize, rng: &mut StdRng) -> DMatrix<f64> {
    let k = p.clamp(1, 3);
    let factor = DMatrix::<f64>::from_fn(p, k, |_, _| StandardNormal.sample(rng));
    &factor * factor.transpose() / k as f64 + DMatrix::identity(p, p) * 0.5
}

/// Draws `n` rows from 𝒩(mean, cov).
pub fn gaussian_rows(
    n: usize,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut StdRng,
) -> DMatrix<f64> {
    let p = mean.len();
    let chol = Cholesky::new(cov.clone()).expect("covariance must be positive definite");
    let raw = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    let mut values = raw * chol.l().transpose();
    for i in 0..n {
        for j in 0..p {
            values[(i, j)] += mean[j];
        }
    }
    values
}

/// A random incomplete regression instance with MCAR masking and two fully
/// observed guard rows.
pub struct RandomInstance {
    pub data: IncompleteMatrix,
    pub moments: MomentEstimate,
    pub registry: PatternRegistry,
    pub beta_true: DVector<f64>,
}

pub fn random_instance(n: usize, p: usize, missing: f64, seed: u64) -> RandomInstance {
    let mut rng = StdRng::seed_from_u64(seed);
    let cov = random_spd(p, &mut rng);
    let values = gaussian_rows(n, &DVector::zeros(p), &cov, &mut rng);
    let beta_true = DVector::<f64>::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
    let response = DVector::from_fn(n, |i, _| {
        values.row(i).transpose().dot(&beta_true)
            + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    let mut mask = DMatrix::from_fn(n, p, |_, _| !rng.random_bool(missing));
    for j in 0..p {
        mask[(0, j)] = true;
        mask[(1, j)] = true;
    }
    let data = IncompleteMatrix::new(values, mask, response);
    let moments = estimate_moments(&data, &MomentOptions::default()).unwrap();
    let registry = build_registry(&data, &moments.cov, &moments.mean).unwrap();
    RandomInstance { data, moments, registry, beta_true }
}

/// Objective evaluator independent of the solver's code path: the completed
/// rows are re-derived through regression maps obtained by direct matrix
/// inversion, and the weighted seminorms use Σ̄ quadratic forms rather than
/// Cholesky factors.
pub struct OracleObjective {
    pub targets: Vec<f64>,
    pub rows: Vec<DVector<f64>>,
    pub sigma_bars: Vec<DMatrix<f64>>,
    pub missing: Vec<Vec<usize>>,
    pub gamma: f64,
}

impl OracleObjective {
    pub fn build(data: &IncompleteMatrix, moments: &MomentEstimate, gamma: f64) -> Self {
        let (n, p) = (data.n_rows(), data.n_cols());
        let mut targets = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        let mut sigma_bars = Vec::with_capacity(n);
        let mut missing_sets = Vec::with_capacity(n);
        for i in 0..n {
            let missing = data.missing_in_row(i);
            let observed = data.observed_in_row(i);
            let cov_mm = DMatrix::from_fn(missing.len(), missing.len(), |r, c| {
                moments.cov[(missing[r], missing[c])]
            });
            let (completed_missing, sigma_bar) = if observed.is_empty() {
                (
                    DVector::from_fn(missing.len(), |r, _| moments.mean[missing[r]]),
                    cov_mm,
                )
            } else {
                let cov_aa = DMatrix::from_fn(observed.len(), observed.len(), |r, c| {
                    moments.cov[(observed[r], observed[c])]
                });
                let cov_ma = DMatrix::from_fn(missing.len(), observed.len(), |r, c| {
                    moments.cov[(missing[r], observed[c])]
                });
                let inv = cov_aa.try_inverse().expect("observed block invertible");
                let map = &cov_ma * inv;
                let residual = DVector::from_fn(observed.len(), |r, _| {
                    data.value(i, observed[r]) - moments.mean[observed[r]]
                });
                let mut mu_bar = &map * residual;
                for (r, &j) in missing.iter().enumerate() {
                    mu_bar[r] += moments.mean[j];
                }
                let sigma_bar = &cov_mm - map * cov_ma.transpose();
                (mu_bar, sigma_bar)
            };
            let mut row = DVector::zeros(p);
            for &j in &observed {
                row[j] = data.value(i, j);
            }
            for (r, &j) in missing.iter().enumerate() {
                row[j] = completed_missing[r];
            }
            targets.push(data.response()[i]);
            rows.push(row);
            sigma_bars.push(sigma_bar);
            missing_sets.push(missing);
        }
        Self { targets, rows, sigma_bars, missing: missing_sets, gamma }
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        let n = self.targets.len();
        let mut total = 0.0;
        for i in 0..n {
            let fit = self.rows[i].dot(beta);
            let beta_m =
                DVector::from_fn(self.missing[i].len(), |r, _| beta[self.missing[i][r]]);
            let weighted = (&self.sigma_bars[i] * &beta_m).dot(&beta_m).max(0.0);
            total += ((self.targets[i] - fit).abs() + self.gamma * weighted.sqrt()).powi(2);
        }
        total / (2.0 * n as f64)
    }

    /// A subgradient of the objective.
    pub fn subgradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let n = self.targets.len();
        let p = beta.len();
        let mut grad = DVector::zeros(p);
        for i in 0..n {
            let fit = self.rows[i].dot(beta);
            let resid = self.targets[i] - fit;
            let beta_m =
                DVector::from_fn(self.missing[i].len(), |r, _| beta[self.missing[i][r]]);
            let weighted_vec = &self.sigma_bars[i] * &beta_m;
            let s = weighted_vec.dot(&beta_m).max(0.0).sqrt();
            let scale = resid.abs() + self.gamma * s;
            let sign = if resid > 0.0 {
                1.0
            } else if resid < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad += &self.rows[i] * (-sign * scale);
            if s > 0.0 {
                let coeff = self.gamma * scale / s;
                for (r, &j) in self.missing[i].iter().enumerate() {
                    grad[j] += coeff * weighted_vec[r];
                }
            }
        }
        grad / n as f64
    }
}

/// Ellipsoid method for convex minimization with a subgradient oracle.
/// Returns the best center visited and its value. Falls back to bisection in
/// one dimension.
pub fn ellipsoid_minimize<F>(
    p: usize,
    center: DVector<f64>,
    radius: f64,
    max_iter: usize,
    fg: F,
) -> (DVector<f64>, f64)
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    if p == 1 {
        let mut lo = center[0] - radius;
        let mut hi = center[0] + radius;
        let mut best_x = center.clone();
        let mut best_f = fg(&center).0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let point = DVector::from_vec(vec![mid]);
            let (f, g) = fg(&point);
            if f < best_f {
                best_f = f;
                best_x = point;
            }
            if g[0] > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return (best_x, best_f);
    }
    let pf = p as f64;
    let mut c = center;
    let mut shape = DMatrix::<f64>::identity(p, p) * (radius * radius);
    let mut best_x = c.clone();
    let mut best_f = f64::INFINITY;
    for _ in 0..max_iter {
        let (f, g) = fg(&c);
        if f < best_f {
            best_f = f;
            best_x = c.clone();
        }
        let pg = &shape * &g;
        let denom_sq = g.dot(&pg);
        if denom_sq.is_nan() || denom_sq <= 1e-28 {
            break;
        }
        let denom = denom_sq.sqrt();
        let step = &pg / denom;
        c -= &step * (1.0 / (pf + 1.0));
        shape = (&shape - &step * step.transpose() * (2.0 / (pf + 1.0)))
            * (pf * pf / (pf * pf - 1.0));
        shape = (&shape + shape.transpose()) * 0.5;
    }
    (best_x, best_f)
}
