//! Assembly and ADMM solution of the robust regression program
//!
//! ```text
//! minimize over β   (1/2n) Σᵢ (|aᵢ − bᵢᵀβ| + γ ‖β_ℳᵢ‖_Σ̄ᵢ)²
//! ```
//!
//! where aᵢ = yᵢ and bᵢ carries the observed feature values with the missing
//! block replaced by its conditional mean. Splitting per sample with
//! zᵢ = C̃ᵢβ − ãᵢ, where C̃ᵢ stacks bᵢᵀ on top of C̄ᵢᵀ restricted to ℳᵢ,
//! turns every z-update into the closed-form joint prox with λ = 1/ρ. The
//! β-update solves against the Gram matrix Σᵢ (bᵢbᵢᵀ + Σ̄ᴱ_ℳᵢ), factored
//! once; per-pattern Σ̄ᴱ contributions are accumulated once per distinct
//! pattern scaled by its row count.
//!
//! z-blocks are kept compact at size 1+|ℳᵢ| rather than p+1: since
//! ‖Cᵢᵀβ‖ = ‖C̄ᵢᵀβ_ℳᵢ‖, the compact form is mathematically identical and
//! prox cost scales with actual missingness.
//!
//! A mini-batch variant redraws the β-update Gram from a random subset each
//! iteration; z- and u-updates stay global and convergence is declared on
//! full-problem residuals evaluated every 10 iterations.

#![allow(clippy::needless_range_loop)] // indexed loops run over several arrays at once

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conditional::{conditional_mean, ConditionalError, PatternRegistry};
use crate::data::IncompleteMatrix;
use crate::moments::MomentEstimate;
use crate::prox::prox_joint_in_place;

/// Errors from problem assembly and solving.
#[derive(Debug, Clone, thiserror::Error)]
pub enum SolverError {
    #[error("gram matrix is rank deficient (smallest pivot below 1e-12·trace/p)")]
    RankDeficientGram,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("row pattern {0:?} is not present in the registry")]
    PatternNotRegistered(Vec<usize>),
    #[error(transparent)]
    Conditional(#[from] ConditionalError),
}

/// The assembled convex program: per-sample data plus the cached Gram factor.
#[derive(Debug, Clone)]
pub struct RigidProblem {
    targets: DVector<f64>,
    completed: DMatrix<f64>,
    /// Transposed copy of `completed` (p×n): column i is row bᵢ, contiguous
    /// for the solver's per-row inner loops.
    completed_t: DMatrix<f64>,
    pattern_idx: Vec<usize>,
    registry: PatternRegistry,
    gamma: f64,
    gram: DMatrix<f64>,
    gram_chol: Cholesky<f64, Dyn>,
}

/// ADMM configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rho_init: f64,
    pub vary_penalty: bool,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Mini-batch size for [`solve_minibatch`]; must be ≤ n when set.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Residual-ratio threshold of the varying-penalty scheme.
    pub penalty_mu: f64,
    /// Multiplicative penalty step of the varying-penalty scheme.
    pub penalty_tau: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho_init: 1.0,
            vary_penalty: true,
            eps_abs: 1e-8,
            eps_rel: 1e-6,
            max_iter: 5000,
            batch_size: None,
            seed: 0,
            penalty_mu: 10.0,
            penalty_tau: 2.0,
        }
    }
}

/// Solution and per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub beta: DVector<f64>,
    pub iterations: usize,
    /// Primal residual norms, one entry per residual evaluation.
    pub primal_residuals: Vec<f64>,
    /// Dual residual norms, aligned with `primal_residuals`.
    pub dual_residuals: Vec<f64>,
    /// Objective values, aligned with `primal_residuals`.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub final_rho: f64,
    /// Final auxiliary blocks zᵢ, exposed so residuals can be re-derived.
    pub final_z: Vec<DVector<f64>>,
    /// Final scaled dual blocks uᵢ.
    pub final_u: Vec<DVector<f64>>,
}

impl SolveReport {
    /// Objective value of the returned iterate: the last trace entry for a
    /// converged run, the best one otherwise.
    pub fn final_objective(&self) -> f64 {
        if self.converged {
            *self.objective_trace.last().expect("at least one iteration runs")
        } else {
            self.objective_trace.iter().cloned().fold(f64::INFINITY, f64::min)
        }
    }
}

/// Builds the per-sample blocks and the cached Gram factorization.
///
/// `registry` must have been built from `moments.cov` on the same data.
pub fn assemble(
    data: &IncompleteMatrix,
    moments: &MomentEstimate,
    registry: &PatternRegistry,
    gamma: f64,
) -> Result<RigidProblem, SolverError> {
    assert!(gamma >= 0.0, "gamma must be nonnegative");
    let (n, p) = (data.n_rows(), data.n_cols());
    if moments.dim() != p || registry.dim() != p {
        return Err(SolverError::InvalidConfig(format!(
            "moments ({}) and registry ({}) must match the data dimension {p}",
            moments.dim(),
            registry.dim()
        )));
    }
    let mut completed = DMatrix::<f64>::zeros(n, p);
    let mut pattern_idx = Vec::with_capacity(n);
    for i in 0..n {
        let missing = data.missing_in_row(i);
        let idx = registry
            .index_of(&missing)
            .ok_or_else(|| SolverError::PatternNotRegistered(missing.clone()))?;
        pattern_idx.push(idx);
        let stats = &registry.stats()[idx];
        let observed = stats.pattern.observed();
        let observed_values =
            DVector::from_fn(observed.len(), |r, _| data.value(i, observed[r]));
        let mu_bar = conditional_mean(stats, &moments.mean, &observed_values)?;
        for (r, &j) in observed.iter().enumerate() {
            completed[(i, j)] = observed_values[r];
        }
        for (r, &j) in missing.iter().enumerate() {
            completed[(i, j)] = mu_bar[r];
        }
    }

    let mut gram = completed.transpose() * &completed;
    for stats in registry.stats() {
        let weight = stats.count as f64;
        for (r, &jr) in stats.pattern.missing().iter().enumerate() {
            for (c, &jc) in stats.pattern.missing().iter().enumerate() {
                gram[(jr, jc)] += weight * stats.cond_cov[(r, c)];
            }
        }
    }
    let gram_chol = factor_gram(&gram)?;
    Ok(RigidProblem {
        targets: data.response().clone(),
        completed_t: completed.transpose(),
        completed,
        pattern_idx,
        registry: registry.clone(),
        gamma,
        gram,
        gram_chol,
    })
}

fn factor_gram(gram: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, SolverError> {
    let p = gram.nrows();
    let chol = Cholesky::new(gram.clone()).ok_or(SolverError::RankDeficientGram)?;
    let min_pivot = (0..p).map(|k| chol.l_dirty()[(k, k)].powi(2)).fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-12 * gram.trace() / p as f64 {
        return Err(SolverError::RankDeficientGram);
    }
    Ok(chol)
}

impl RigidProblem {
    pub fn n_samples(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        self.completed.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Conditional-mean-completed rows bᵢᵀ.
    pub fn completed(&self) -> &DMatrix<f64> {
        &self.completed
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn registry(&self) -> &PatternRegistry {
        &self.registry
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Row bᵢ as a contiguous slice.
    fn row(&self, i: usize) -> &[f64] {
        let p = self.dim();
        &self.completed_t.as_slice()[i * p..(i + 1) * p]
    }

    /// Per-pattern vectors C̄ᵀβ_ℳ shared by every row with the same pattern.
    fn pattern_tails_into(&self, beta: &DVector<f64>, out: &mut Vec<DVector<f64>>) {
        if out.is_empty() {
            for stats in self.registry.stats() {
                out.push(DVector::zeros(stats.pattern.n_missing()));
            }
        }
        for (stats, tail) in self.registry.stats().iter().zip(out.iter_mut()) {
            let missing = stats.pattern.missing();
            let m = missing.len();
            let factor = &stats.cond_cov_factor;
            for r in 0..m {
                // (C̄ᵀ β_ℳ)_r = Σ_c C̄[c, r] β[missing[c]], lower-triangular C̄.
                let mut acc = 0.0;
                for c in r..m {
                    acc += factor[(c, r)] * beta[missing[c]];
                }
                tail[r] = acc;
            }
        }
    }

    /// Objective value `(1/2n) Σᵢ (|aᵢ − bᵢᵀβ| + γ‖β_ℳᵢ‖_Σ̄ᵢ)²`.
    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        let mut tails = Vec::new();
        self.pattern_tails_into(beta, &mut tails);
        let pattern_norms: Vec<f64> = tails.iter().map(|v| v.norm()).collect();
        let mut total = 0.0;
        for i in 0..self.n_samples() {
            let fit = dot(self.row(i), beta.as_slice());
            let miss = pattern_norms[self.pattern_idx[i]];
            total += ((self.targets[i] - fit).abs() + self.gamma * miss).powi(2);
        }
        total / (2.0 * self.n_samples() as f64)
    }

    /// Least-squares fit on the completed rows; `None` when XᵀX is singular.
    fn imputed_least_squares(&self) -> Option<DVector<f64>> {
        let gram_ls = self.completed.transpose() * &self.completed;
        let chol = Cholesky::new(gram_ls)?;
        Some(chol.solve(&(self.completed.transpose() * &self.targets)))
    }

    /// The same assembled problem at a different γ; the completion, Gram
    /// matrix and factorization are γ-independent and are reused.
    pub fn with_gamma(&self, gamma: f64) -> RigidProblem {
        assert!(gamma >= 0.0, "gamma must be nonnegative");
        RigidProblem { gamma, ..self.clone() }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for k in 0..a.len() {
        acc += a[k] * b[k];
    }
    acc
}

/// Runs the scaled ADMM on the full problem.
pub fn solve(problem: &RigidProblem, config: &SolverConfig) -> Result<SolveReport, SolverError> {
    validate_config(problem, config)?;
    run_admm(problem, config, None, None)
}

/// As [`solve`], but starts the β iterate from `init` instead of the
/// imputed-least-squares point. Useful for warm-starting along a γ grid.
pub fn solve_warm_started(
    problem: &RigidProblem,
    config: &SolverConfig,
    init: &DVector<f64>,
) -> Result<SolveReport, SolverError> {
    validate_config(problem, config)?;
    if init.len() != problem.dim() {
        return Err(SolverError::InvalidConfig(format!(
            "warm start has length {}, expected {}",
            init.len(),
            problem.dim()
        )));
    }
    run_admm(problem, config, None, Some(init.clone()))
}

/// Mini-batch variant: each iteration draws `batch_size` rows uniformly
/// without replacement (seeded), forms and factors the batch Gram, and runs
/// the β-update on the batch while z- and u-updates stay global. A rank
/// deficient batch Gram is resampled once before failing.
pub fn solve_minibatch(
    problem: &RigidProblem,
    config: &SolverConfig,
) -> Result<SolveReport, SolverError> {
    validate_config(problem, config)?;
    let batch_size = config
        .batch_size
        .ok_or_else(|| SolverError::InvalidConfig("batch_size must be set".into()))?;
    run_admm(problem, config, Some(batch_size), None)
}

fn validate_config(problem: &RigidProblem, config: &SolverConfig) -> Result<(), SolverError> {
    if config.eps_abs <= 0.0 || config.eps_rel <= 0.0 {
        return Err(SolverError::InvalidConfig("tolerances must be positive".into()));
    }
    if config.max_iter == 0 {
        return Err(SolverError::InvalidConfig("max_iter must be positive".into()));
    }
    if config.rho_init <= 0.0 {
        return Err(SolverError::InvalidConfig("rho_init must be positive".into()));
    }
    if let Some(b) = config.batch_size {
        if b == 0 || b > problem.n_samples() {
            return Err(SolverError::InvalidConfig(format!(
                "batch_size {b} must lie in [1, {}]",
                problem.n_samples()
            )));
        }
    }
    Ok(())
}

/// (objective, β, z, u) snapshot of the best iterate.
type BestIterate = (f64, DVector<f64>, Vec<DVector<f64>>, Vec<DVector<f64>>);

struct IterationState {
    beta: DVector<f64>,
    z: Vec<DVector<f64>>,
    z_prev: Vec<DVector<f64>>,
    u: Vec<DVector<f64>>,
    /// cᵢ = C̃ᵢβ for the current β.
    cb: Vec<DVector<f64>>,
    /// Per-pattern tails C̄ᵀβ_ℳ backing `cb`.
    tails: Vec<DVector<f64>>,
    rho: f64,
}

impl IterationState {
    fn refresh_cb(&mut self, problem: &RigidProblem) {
        problem.pattern_tails_into(&self.beta, &mut self.tails);
        for i in 0..problem.n_samples() {
            let tail = &self.tails[problem.pattern_idx[i]];
            let cbi = &mut self.cb[i];
            cbi[0] = dot(problem.row(i), self.beta.as_slice());
            for r in 0..tail.len() {
                cbi[1 + r] = tail[r];
            }
        }
    }
}

fn run_admm(
    problem: &RigidProblem,
    config: &SolverConfig,
    batch: Option<usize>,
    warm_start: Option<DVector<f64>>,
) -> Result<SolveReport, SolverError> {
    let n = problem.n_samples();
    let p = problem.dim();
    let full_batch = batch.map(|b| b == n).unwrap_or(true);
    let check_interval = if full_batch { 1 } else { 10 };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let beta0 = warm_start.unwrap_or_else(|| {
        problem.imputed_least_squares().unwrap_or_else(|| DVector::zeros(p))
    });
    let block_dims: Vec<usize> = problem
        .pattern_idx
        .iter()
        .map(|&idx| 1 + problem.registry.stats()[idx].pattern.n_missing())
        .collect();
    let mut state = IterationState {
        beta: beta0,
        z: block_dims.iter().map(|&d| DVector::zeros(d)).collect(),
        z_prev: Vec::new(),
        u: block_dims.iter().map(|&d| DVector::zeros(d)).collect(),
        cb: block_dims.iter().map(|&d| DVector::zeros(d)).collect(),
        tails: Vec::new(),
        rho: config.rho_init,
    };
    state.refresh_cb(problem);
    let target_shift: Vec<f64> = (0..n).map(|i| problem.targets[i]).collect();
    for i in 0..n {
        // z⁰ᵢ = C̃ᵢβ⁰ − ãᵢ with u⁰ = 0.
        state.z[i].copy_from(&state.cb[i]);
        state.z[i][0] -= target_shift[i];
    }
    state.z_prev = state.z.clone();

    let dims_total: usize = block_dims.iter().sum();
    let sqrt_dims = (dims_total as f64).sqrt();
    let sqrt_p = (p as f64).sqrt();

    let mut primal_trace = Vec::new();
    let mut dual_trace = Vec::new();
    let mut objective_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    // Best-objective snapshot, returned when the run hits max_iter.
    let mut best: Option<BestIterate> = None;
    let mut rhs = DVector::<f64>::zeros(p);

    for k in 0..config.max_iter {
        iterations = k + 1;
        std::mem::swap(&mut state.z_prev, &mut state.z);

        // z-update: zᵢ = prox_{ρ⁻¹φ}(C̃ᵢβ − ãᵢ − uᵢ).
        let lambda = 1.0 / state.rho;
        for i in 0..n {
            let zi = &mut state.z[i];
            zi.copy_from(&state.cb[i]);
            zi[0] -= target_shift[i];
            *zi -= &state.u[i];
            let (head, tail) = zi.as_mut_slice().split_at_mut(1);
            head[0] = prox_joint_in_place(head[0], tail, lambda, problem.gamma);
        }

        // β-update: solve G β = Σᵢ C̃ᵢᵀ(zᵢ + ãᵢ + uᵢ) over the batch rows.
        let batch_rows = match batch {
            None => None,
            Some(b) if b == n => None,
            Some(b) => Some(draw_batch(&mut rng, n, b)),
        };
        let accumulate_rhs = |rows: &mut dyn Iterator<Item = usize>, rhs: &mut DVector<f64>| {
            rhs.fill(0.0);
            for i in rows {
                let zi = &state.z[i];
                let ui = &state.u[i];
                let w1 = zi[0] + target_shift[i] + ui[0];
                let row = problem.row(i);
                let out = rhs.as_mut_slice();
                for j in 0..p {
                    out[j] += row[j] * w1;
                }
                let stats = &problem.registry.stats()[problem.pattern_idx[i]];
                let missing = stats.pattern.missing();
                let m = missing.len();
                let factor = &stats.cond_cov_factor;
                for r in 0..m {
                    // (C̄ w₂)_r over the lower triangle.
                    let mut acc = 0.0;
                    for c in 0..=r {
                        acc += factor[(r, c)] * (zi[1 + c] + ui[1 + c]);
                    }
                    out[missing[r]] += acc;
                }
            }
        };
        match &batch_rows {
            None => {
                accumulate_rhs(&mut (0..n), &mut rhs);
                problem.gram_chol.solve_mut(&mut rhs);
                std::mem::swap(&mut state.beta, &mut rhs);
            }
            Some(rows) => {
                let (chol, rows_used) = match batch_gram(problem, rows) {
                    Ok(chol) => (chol, rows.clone()),
                    Err(_) => {
                        // One resample before giving up on a deficient batch.
                        let retry = draw_batch(&mut rng, n, rows.len());
                        (batch_gram(problem, &retry)?, retry)
                    }
                };
                accumulate_rhs(&mut rows_used.iter().copied(), &mut rhs);
                chol.solve_mut(&mut rhs);
                std::mem::swap(&mut state.beta, &mut rhs);
            }
        }
        state.refresh_cb(problem);

        // u-update: uᵢ ← uᵢ − (C̃ᵢβ − zᵢ − ãᵢ).
        let mut primal_sq = 0.0;
        for i in 0..n {
            let zi = &state.z[i];
            let cbi = &state.cb[i];
            let ui = &mut state.u[i];
            for r in 0..zi.len() {
                let shift = if r == 0 { target_shift[i] } else { 0.0 };
                let res = cbi[r] - zi[r] - shift;
                ui[r] -= res;
                primal_sq += res * res;
            }
        }

        if (k + 1) % check_interval == 0 || k + 1 == config.max_iter {
            let primal = primal_sq.sqrt();
            let (dual, dual_scale) = dual_residual(problem, &state);
            let (cb_norm, za_norm) = primal_scales(problem, &state, &target_shift);
            let objective = objective_from_cb(problem, &state.cb);
            primal_trace.push(primal);
            dual_trace.push(dual);
            objective_trace.push(objective);
            if best.as_ref().map(|(b, _, _, _)| objective < *b).unwrap_or(true) {
                best = Some((objective, state.beta.clone(), state.z.clone(), state.u.clone()));
            }

            let eps_pri = sqrt_dims * config.eps_abs + config.eps_rel * cb_norm.max(za_norm);
            let eps_dual = sqrt_p * config.eps_abs + config.eps_rel * dual_scale;
            if primal <= eps_pri && dual <= eps_dual {
                converged = true;
                break;
            }

            if config.vary_penalty {
                let tau = config.penalty_tau;
                if primal > config.penalty_mu * dual {
                    state.rho *= tau;
                    for ui in &mut state.u {
                        *ui /= tau;
                    }
                } else if dual > config.penalty_mu * primal {
                    state.rho /= tau;
                    for ui in &mut state.u {
                        *ui *= tau;
                    }
                }
            }
        }
    }

    let (beta, z, u) = if converged {
        (state.beta, state.z, state.u)
    } else {
        // Max iterations: return the best iterate seen.
        match best {
            Some((_, beta, z, u)) => (beta, z, u),
            None => (state.beta, state.z, state.u),
        }
    };
    Ok(SolveReport {
        beta,
        iterations,
        primal_residuals: primal_trace,
        dual_residuals: dual_trace,
        objective_trace,
        converged,
        final_rho: state.rho,
        final_z: z,
        final_u: u,
    })
}

fn draw_batch(rng: &mut ChaCha8Rng, n: usize, batch_size: usize) -> Vec<usize> {
    let mut rows = rand::seq::index::sample(rng, n, batch_size).into_vec();
    rows.sort_unstable();
    rows
}

fn batch_gram(problem: &RigidProblem, rows: &[usize]) -> Result<Cholesky<f64, Dyn>, SolverError> {
    let p = problem.dim();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    for &i in rows {
        let row = problem.row(i);
        for j in 0..p {
            let bj = row[j];
            if bj == 0.0 {
                continue;
            }
            for l in 0..p {
                gram[(j, l)] += bj * row[l];
            }
        }
        let stats = &problem.registry.stats()[problem.pattern_idx[i]];
        for (r, &jr) in stats.pattern.missing().iter().enumerate() {
            for (c, &jc) in stats.pattern.missing().iter().enumerate() {
                gram[(jr, jc)] += stats.cond_cov[(r, c)];
            }
        }
    }
    factor_gram(&gram)
}

fn objective_from_cb(problem: &RigidProblem, cb: &[DVector<f64>]) -> f64 {
    let n = problem.n_samples();
    let mut total = 0.0;
    for i in 0..n {
        let fit = cb[i][0];
        let mut miss_sq = 0.0;
        for r in 1..cb[i].len() {
            miss_sq += cb[i][r] * cb[i][r];
        }
        total += ((problem.targets[i] - fit).abs() + problem.gamma * miss_sq.sqrt()).powi(2);
    }
    total / (2.0 * n as f64)
}

/// Dual residual ρ‖Σᵢ C̃ᵢᵀ(zᵢ − zᵢ_prev)‖ and the scale ρ‖Σᵢ C̃ᵢᵀuᵢ‖ of the
/// stopping rule.
fn dual_residual(problem: &RigidProblem, state: &IterationState) -> (f64, f64) {
    let p = problem.dim();
    let mut s = vec![0.0f64; p];
    let mut aty = vec![0.0f64; p];
    for i in 0..problem.n_samples() {
        let zi = &state.z[i];
        let zpi = &state.z_prev[i];
        let ui = &state.u[i];
        let dz0 = zi[0] - zpi[0];
        let u0 = ui[0];
        let row = problem.row(i);
        for j in 0..p {
            s[j] += row[j] * dz0;
            aty[j] += row[j] * u0;
        }
        let stats = &problem.registry.stats()[problem.pattern_idx[i]];
        let missing = stats.pattern.missing();
        let m = missing.len();
        let factor = &stats.cond_cov_factor;
        for r in 0..m {
            let mut acc_dz = 0.0;
            let mut acc_u = 0.0;
            for c in 0..=r {
                acc_dz += factor[(r, c)] * (zi[1 + c] - zpi[1 + c]);
                acc_u += factor[(r, c)] * ui[1 + c];
            }
            s[missing[r]] += acc_dz;
            aty[missing[r]] += acc_u;
        }
    }
    let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    let aty_norm = aty.iter().map(|v| v * v).sum::<f64>().sqrt();
    (state.rho * s_norm, state.rho * aty_norm)
}

fn primal_scales(
    problem: &RigidProblem,
    state: &IterationState,
    target_shift: &[f64],
) -> (f64, f64) {
    let mut cb_sq = 0.0;
    let mut za_sq = 0.0;
    for i in 0..problem.n_samples() {
        cb_sq += state.cb[i].norm_squared();
        for r in 0..state.z[i].len() {
            let shift = if r == 0 { target_shift[i] } else { 0.0 };
            za_sq += (state.z[i][r] + shift).powi(2);
        }
    }
    (cb_sq.sqrt(), za_sq.sqrt())
}
#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditional::build_registry;
    use crate::moments::{estimate_moments, MomentOptions};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn complete_problem(
        n: usize,
        p: usize,
        gamma: f64,
        seed: u64,
    ) -> (IncompleteMatrix, RigidProblem) {
        let mut rng = StdRng::seed_from_u64(seed);
        let values = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let beta_true = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
        let response = DVector::from_fn(n, |i, _| {
            values.row(i).transpose().dot(&beta_true)
                + 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let data = IncompleteMatrix::complete(values, response);
        let moments = estimate_moments(&data, &MomentOptions::default()).unwrap();
        let registry = build_registry(&data, &moments.cov, &moments.mean).unwrap();
        let problem = assemble(&data, &moments, &registry, gamma).unwrap();
        (data, problem)
    }

    fn incomplete_problem(
        n: usize,
        p: usize,
        missing_prob: f64,
        gamma: f64,
        seed: u64,
    ) -> (IncompleteMatrix, RigidProblem) {
        let mut rng = StdRng::seed_from_u64(seed);
        let latent = DMatrix::<f64>::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
        let chol = nalgebra::Cholesky::new(
            &latent * latent.transpose() / p as f64 + DMatrix::identity(p, p) * 0.4,
        )
        .unwrap();
        let raw = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let values = raw * chol.l().transpose();
        let beta_true = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
        let response = DVector::from_fn(n, |i, _| {
            values.row(i).transpose().dot(&beta_true)
                + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let mut mask = DMatrix::from_fn(n, p, |_, _| !rng.random_bool(missing_prob));
        for j in 0..p {
            mask[(0, j)] = true;
            mask[(1, j)] = true;
        }
        let data = IncompleteMatrix::new(values, mask, response);
        let moments = estimate_moments(&data, &MomentOptions::default()).unwrap();
        let registry = build_registry(&data, &moments.cov, &moments.mean).unwrap();
        let problem = assemble(&data, &moments, &registry, gamma).unwrap();
        (data, problem)
    }

    fn ols(data: &IncompleteMatrix) -> DVector<f64> {
        let x = data.values();
        let chol = Cholesky::new(x.transpose() * x).unwrap();
        chol.solve(&(x.transpose() * data.response()))
    }

    #[test]
    fn complete_data_gamma_zero_recovers_ols() {
        let (data, problem) = complete_problem(50, 4, 0.0, 3);
        let report = solve(&problem, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        let expected = ols(&data);
        for j in 0..4 {
            assert_abs_diff_eq!(report.beta[j], expected[j], epsilon = 1e-6);
        }
    }

    #[test]
    fn two_point_exact_fit() {
        let data = IncompleteMatrix::complete(
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            DVector::from_vec(vec![1.0, 2.0]),
        );
        let moments = estimate_moments(&data, &MomentOptions::default()).unwrap();
        let registry = build_registry(&data, &moments.cov, &moments.mean).unwrap();
        let problem = assemble(&data, &moments, &registry, 0.0).unwrap();
        let report = solve(&problem, &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(report.beta[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn assemble_completes_with_conditional_mean() {
        // Row (3, missing) under Σ=[[2,1],[1,2]], μ=(1,1) completes to (3, 2).
        let data = IncompleteMatrix::new(
            DMatrix::from_row_slice(1, 2, &[3.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[true, false]),
            DVector::from_vec(vec![1.0]),
        );
        let moments = MomentEstimate {
            mean: DVector::from_vec(vec![1.0, 1.0]),
            cov: DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
            availability: DMatrix::from_element(2, 2, 1.0),
            theta_floor: 0.0,
            n_samples: 1,
        };
        let registry = build_registry(&data, &moments.cov, &moments.mean).unwrap();
        let problem = assemble(&data, &moments, &registry, 1.0).unwrap();
        assert_abs_diff_eq!(problem.completed()[(0, 0)], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(problem.completed()[(0, 1)], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn underdetermined_complete_data_is_rank_deficient() {
        let mut rng = StdRng::seed_from_u64(5);
        let values = DMatrix::<f64>::from_fn(3, 5, |_, _| StandardNormal.sample(&mut rng));
        let data = IncompleteMatrix::complete(values, DVector::zeros(3));
        let moments = MomentEstimate {
            mean: DVector::zeros(5),
            cov: DMatrix::identity(5, 5),
            availability: DMatrix::from_element(5, 5, 1.0),
            theta_floor: 0.0,
            n_samples: 3,
        };
        let registry = build_registry(&data, &moments.cov, &moments.mean).unwrap();
        assert!(matches!(
            assemble(&data, &moments, &registry, 0.0),
            Err(SolverError::RankDeficientGram)
        ));
    }

    /// The squared-hinge loss equals the max of the squared residuals at the
    /// two endpoints of the concentration interval.
    #[test]
    fn objective_matches_endpoint_maximum()  {
        let (_, problem) = incomplete_problem(30, 4, 0.3, 0.7, 11);
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..20 {
            let beta = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            let mut tails = Vec::new();
            problem.pattern_tails_into(&beta, &mut tails);
            let pattern_norms: Vec<f64> = tails.iter().map(|v| v.norm()).collect();
            let mut endpoint_total = 0.0;
            for i in 0..problem.n_samples() {
                let fit = dot(problem.row(i), beta.as_slice());
                let resid = problem.targets[i] - fit;
                let radius = problem.gamma * pattern_norms[problem.pattern_idx[i]];
                let lo = 0.5 * (resid + radius).powi(2);
                let hi = 0.5 * (resid - radius).powi(2);
                endpoint_total += lo.max(hi);
            }
            endpoint_total /= problem.n_samples() as f64;
            let direct = problem.objective(&beta);
            assert_abs_diff_eq!(direct, endpoint_total, epsilon = 1e-10 * (1.0 + direct));
        }
    }

    /// Convexity certificate for the empirical objective.
    #[test]
    fn objective_is_convex_on_random_segments() {
        let (_, problem) = incomplete_problem(25, 3, 0.3, 1.3, 17);
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..50 {
            let b1 = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let b2 = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let t: f64 = rng.random_range(0.0..1.0);
            let mid = &b1 * t + &b2 * (1.0 - t);
            let lhs = problem.objective(&mid);
            let rhs = t * problem.objective(&b1) + (1.0 - t) * problem.objective(&b2);
            assert!(lhs <= rhs + 1e-10, "convexity violated: {lhs} > {rhs}");
        }
    }

    #[test]
    fn converged_report_residuals_are_reproducible() {
        let (_, problem) = incomplete_problem(40, 4, 0.25, 0.5, 23);
        let report = solve(&problem, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        // Recompute the primal residual from the returned iterates.
        let mut tails = Vec::new();
        problem.pattern_tails_into(&report.beta, &mut tails);
        let mut primal_sq: f64 = 0.0;
        for i in 0..problem.n_samples() {
            let tail = &tails[problem.pattern_idx[i]];
            for r in 0..report.final_z[i].len() {
                let (cb_r, shift) = if r == 0 {
                    (dot(problem.row(i), report.beta.as_slice()), problem.targets[i])
                } else {
                    (tail[r - 1], 0.0)
                };
                let res = cb_r - report.final_z[i][r] - shift;
                primal_sq += res * res;
            }
        }
        let last = *report.primal_residuals.last().unwrap();
        assert_abs_diff_eq!(primal_sq.sqrt(), last, epsilon = 1e-12 * (1.0 + last));
        // The final objective in the trace matches a direct evaluation.
        assert_abs_diff_eq!(
            report.final_objective(),
            problem.objective(&report.beta),
            epsilon = 1e-12
        );
    }

    /// Minimum objective value is nondecreasing in γ (growing uncertainty set).
    #[test]
    fn fitted_objective_nondecreasing_in_gamma() {
        let (data, _) = incomplete_problem(40, 4, 0.3, 0.0, 29);
        let moments = estimate_moments(&data, &MomentOptions::default()).unwrap();
        let registry = build_registry(&data, &moments.cov, &moments.mean).unwrap();
        let mut last = f64::NEG_INFINITY;
        for gamma in [0.0, 0.1, 0.5, 1.0, 2.0, 5.0] {
            let problem = assemble(&data, &moments, &registry, gamma).unwrap();
            let report = solve(&problem, &SolverConfig::default()).unwrap();
            let obj = report.final_objective();
            assert!(
                obj >= last - 1e-6 * (1.0 + obj.abs()),
                "objective decreased from {last} to {obj} at γ={gamma}"
            );
            last = obj;
        }
    }

    #[test]
    fn minibatch_full_batch_matches_solve() {
        let (_, problem) = incomplete_problem(30, 3, 0.3, 0.8, 31);
        let config = SolverConfig::default();
        let full = solve(&problem, &config).unwrap();
        let batched = solve_minibatch(
            &problem,
            &SolverConfig { batch_size: Some(30), ..config },
        )
        .unwrap();
        assert_eq!(full, batched);
    }

    #[test]
    fn minibatch_is_deterministic() {
        let (_, problem) = incomplete_problem(60, 4, 0.3, 0.6, 37);
        let config = SolverConfig { batch_size: Some(20), seed: 9, ..SolverConfig::default() };
        let first = solve_minibatch(&problem, &config).unwrap();
        let second = solve_minibatch(&problem, &config).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn minibatch_objective_close_to_full_solve() {
        let (_, problem) = incomplete_problem(500, 20, 0.3, 0.5, 41);
        let full = solve(&problem, &SolverConfig::default()).unwrap();
        // A stochastic β-update hovers around the optimum with amplitude
        // proportional to the scaled duals u = y/ρ, so the batch run uses a
        // larger fixed penalty.
        let batched = solve_minibatch(
            &problem,
            &SolverConfig {
                batch_size: Some(100),
                max_iter: 2000,
                rho_init: 10.0,
                vary_penalty: false,
                ..SolverConfig::default()
            },
        )
        .unwrap();
        let f_full = full.final_objective();
        let f_batch = batched.final_objective();
        assert!(
            (f_batch - f_full).abs() <= 0.01 * (1.0 + f_full.abs()),
            "batch objective {f_batch} differs from full {f_full} by more than 1%"
        );
    }

    #[test]
    fn invalid_batch_size_is_rejected() {
        let (_, problem) = complete_problem(10, 2, 0.0, 43);
        let config = SolverConfig { batch_size: Some(11), ..SolverConfig::default() };
        assert!(matches!(
            solve_minibatch(&problem, &config),
            Err(SolverError::InvalidConfig(_))
        ));
    }

    #[test]
    fn max_iterations_returns_unconverged_report() {
        let (_, problem) = incomplete_problem(40, 4, 0.3, 1.0, 47);
        let config = SolverConfig { max_iter: 3, ..SolverConfig::default() };
        let report = solve(&problem, &config).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 3);
    }

    #[test]
    fn fully_missing_rows_are_legal() {
        // Rows with every feature missing contribute b = mean and full-Σ
        // uncertainty; the solve still converges.
        let (data, _) = incomplete_problem(30, 3, 0.2, 0.5, 59);
        let mut mask = data.mask().clone();
        for j in 0..3 {
            mask[(5, j)] = false;
            mask[(11, j)] = false;
        }
        let data =
            IncompleteMatrix::new(data.values().clone(), mask, data.response().clone());
        let moments = estimate_moments(&data, &MomentOptions::default()).unwrap();
        let registry = build_registry(&data, &moments.cov, &moments.mean).unwrap();
        let problem = assemble(&data, &moments, &registry, 0.5).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(problem.completed()[(5, j)], moments.mean[j], epsilon = 1e-12);
        }
        let report = solve(&problem, &SolverConfig::default()).unwrap();
        assert!(report.converged);
    }

    #[test]
    fn warm_start_reaches_the_same_solution() {
        let (_, problem) = incomplete_problem(40, 4, 0.3, 0.7, 53);
        let config = SolverConfig::default();
        let cold = solve(&problem, &config).unwrap();
        let warm = solve_warm_started(&problem, &config, &cold.beta).unwrap();
        assert!(warm.iterations <= cold.iterations);
        for j in 0..4 {
            assert_abs_diff_eq!(warm.beta[j], cold.beta[j], epsilon = 1e-6);
        }
    }
}
