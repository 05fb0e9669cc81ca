//! End-to-end orchestration: standardization, cross-validated fitting,
//! prediction, baselines and the simulation harness behind the CLI.
//!
//! The fitting protocol standardizes every feature column to zero mean and
//! unit variance using observed entries only, estimates moments from the
//! incomplete standardized data, absorbs the intercept as a constant feature
//! that is never masked and never standardized, and solves the robust
//! program at a fixed γ or at the winner of a k-fold cross-validation over a
//! γ grid. Validation rows are scored with squared error after
//! conditional-mean completion under the fold-training moments, matching
//! what prediction does at deployment time.

mod csv_io;
mod serialize;
mod simulate;

pub use csv_io::{default_na_tokens, load_csv, load_csv_features, write_csv, LoadedCsv};
pub use serialize::{
    model_from_json, model_to_json, read_risk_spec, report_to_json, risk_spec_from_json,
    RiskMinimizerReport, RiskReport, SCHEMA_VERSION,
};
pub use simulate::{simulate_experiment, SimulationSpec};

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditional::{
    build_registry, conditional_mean, pattern_stats, ConditionalError, MissingPattern,
    PatternStats,
};
use crate::data::IncompleteMatrix;
use crate::missingness::MissingnessError;
use crate::moments::{estimate_moments, MomentEstimate, MomentOptions, MomentsError};
use crate::risk::RiskError;
use crate::solver::{
    assemble, solve, solve_warm_started, SolveReport, SolverConfig, SolverError,
};

/// Errors from the end-to-end pipeline.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("column {0} has fewer than two observed entries or zero variance")]
    ZeroVarianceColumn(usize),
    #[error("target column '{0}' has missing entries")]
    TargetHasMissing(String),
    #[error("cannot parse '{token}' at data row {row}, column '{column}'")]
    Parse { row: usize, column: String, token: String },
    #[error("column '{0}' not found")]
    MissingColumn(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{failed} of {total} simulation trials failed; first failure: {first}")]
    TooManyTrialFailures { failed: usize, total: usize, first: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] ::csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Conditional(#[from] ConditionalError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Missingness(#[from] MissingnessError),
}

/// Per-column affine transform `(v − center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub center: f64,
    pub scale: f64,
}

impl ColumnTransform {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.center) / self.scale
    }

    pub fn invert(&self, u: f64) -> f64 {
        u * self.scale + self.center
    }
}

/// Standardizes every feature column to zero mean and unit variance computed
/// from its observed entries (population 1/n convention). The response is
/// left untouched.
pub fn standardize(
    data: &IncompleteMatrix,
) -> Result<(IncompleteMatrix, Vec<ColumnTransform>), PipelineError> {
    let (n, p) = (data.n_rows(), data.n_cols());
    let mut transforms = Vec::with_capacity(p);
    let mut values = data.values().clone();
    for j in 0..p {
        let observed: Vec<f64> = (0..n)
            .filter(|&i| data.is_observed(i, j))
            .map(|i| data.value(i, j))
            .collect();
        if observed.len() < 2 {
            return Err(PipelineError::ZeroVarianceColumn(j));
        }
        let center = observed.iter().sum::<f64>() / observed.len() as f64;
        let var =
            observed.iter().map(|v| (v - center) * (v - center)).sum::<f64>() / observed.len() as f64;
        let scale = var.sqrt();
        if scale <= 1e-12 * (1.0 + center.abs()) {
            return Err(PipelineError::ZeroVarianceColumn(j));
        }
        let transform = ColumnTransform { center, scale };
        for i in 0..n {
            if data.is_observed(i, j) {
                values[(i, j)] = transform.apply(values[(i, j)]);
            }
        }
        transforms.push(transform);
    }
    let standardized = IncompleteMatrix::new(values, data.mask().clone(), data.response().clone());
    Ok((standardized, transforms))
}

/// How γ is chosen at fit time.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaChoice {
    Fixed(f64),
    CrossValidated { grid: Vec<f64>, folds: usize },
}

impl GammaChoice {
    /// The default grid: zero plus 20 logarithmically spaced points in
    /// [1e-3, 10].
    pub fn default_grid() -> Vec<f64> {
        let mut grid = vec![0.0];
        let (lo, hi) = (1e-3f64.ln(), 10f64.ln());
        for i in 0..20 {
            grid.push((lo + (hi - lo) * i as f64 / 19.0).exp());
        }
        grid
    }
}

impl Default for GammaChoice {
    fn default() -> Self {
        GammaChoice::CrossValidated { grid: Self::default_grid(), folds: 5 }
    }
}

/// Fit configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitConfig {
    pub gamma: GammaChoice,
    pub moments: MomentOptions,
    pub solver: SolverConfig,
    /// Seed for cross-validation fold assignment.
    pub seed: u64,
}

/// Condensed solver diagnostics stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_rho: f64,
    pub final_objective: f64,
    pub final_primal_residual: f64,
    pub final_dual_residual: f64,
}

impl FitSummary {
    fn from_report(report: &SolveReport) -> Self {
        Self {
            iterations: report.iterations,
            converged: report.converged,
            final_rho: report.final_rho,
            final_objective: report.final_objective(),
            final_primal_residual: *report.primal_residuals.last().unwrap_or(&f64::NAN),
            final_dual_residual: *report.dual_residuals.last().unwrap_or(&f64::NAN),
        }
    }
}

/// A fitted model: coefficients in standardized feature space, the intercept,
/// the moment snapshot used for conditional-mean completion at prediction
/// time, and the per-column transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidModel {
    pub beta: DVector<f64>,
    pub intercept: f64,
    pub gamma: f64,
    pub moments: MomentEstimate,
    pub standardization: Vec<ColumnTransform>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub fit_summary: FitSummary,
}

impl RigidModel {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }
}

/// One γ-grid row of the cross-validation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub gamma: f64,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
}

/// Per-method evaluation metrics; the deviations are populated by
/// multi-trial runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub rmse: f64,
    pub mae: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae_std: Option<f64>,
}

/// Per-trial metrics of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub gamma: f64,
    pub missing_rate: f64,
    pub rigid_rmse: f64,
    pub rigid_mae: f64,
    pub mean_impute_rmse: f64,
    pub mean_impute_mae: f64,
    pub conditional_mean_rmse: f64,
    pub conditional_mean_mae: f64,
}

/// Evaluation report emitted by `fit`, `bench` and the simulation harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub methods: Vec<MethodSummary>,
    pub realized_missing_rate: f64,
    /// Winning γ per trial (a single entry for a plain fit).
    pub gamma_chosen: Vec<f64>,
    pub cv_table: Vec<CvRow>,
    pub seeds: Vec<u64>,
    pub trials: usize,
    pub failures: Vec<String>,
    /// Per-trial breakdown for multi-trial runs.
    #[serde(default)]
    pub per_trial: Vec<TrialRecord>,
    /// Wall-clock stage timings; in-memory only so that reports with equal
    /// seeds serialize byte-identically.
    #[serde(skip)]
    pub timings_ms: Vec<(String, u128)>,
}

/// Appends an always-observed constant column carrying the intercept.
fn augment_with_intercept(data: &IncompleteMatrix) -> IncompleteMatrix {
    let (n, p) = (data.n_rows(), data.n_cols());
    let mut values = DMatrix::zeros(n, p + 1);
    values.view_mut((0, 0), (n, p)).copy_from(data.values());
    let mut mask = DMatrix::from_element(n, p + 1, true);
    for i in 0..n {
        for j in 0..p {
            mask[(i, j)] = data.is_observed(i, j);
        }
        values[(i, p)] = 1.0;
    }
    IncompleteMatrix::new(values, mask, data.response().clone())
}

/// Extends the moment snapshot with the constant column: unit mean, a tiny
/// positive variance uncorrelated with everything. Block-diagonality makes
/// every Schur complement and conditional mean identical to the
/// feature-space ones.
fn augment_moments(moments: &MomentEstimate) -> MomentEstimate {
    let p = moments.dim();
    let mut mean = DVector::zeros(p + 1);
    mean.rows_mut(0, p).copy_from(&moments.mean);
    mean[p] = 1.0;
    let const_var = if moments.theta_floor > 0.0 {
        moments.theta_floor
    } else {
        1e-12 * (1.0 + moments.cov.trace() / p as f64)
    };
    let mut cov = DMatrix::zeros(p + 1, p + 1);
    cov.view_mut((0, 0), (p, p)).copy_from(&moments.cov);
    cov[(p, p)] = const_var;
    let mut availability = DMatrix::zeros(p + 1, p + 1);
    availability.view_mut((0, 0), (p, p)).copy_from(&moments.availability);
    for j in 0..p {
        availability[(j, p)] = moments.availability[(j, j)];
        availability[(p, j)] = moments.availability[(j, j)];
    }
    availability[(p, p)] = 1.0;
    MomentEstimate {
        mean,
        cov,
        availability,
        theta_floor: moments.theta_floor,
        n_samples: moments.n_samples,
    }
}

/// Assembles the augmented (intercept-carrying) problem once; γ-specific
/// copies are cheap since the completion and Gram factor are γ-independent.
fn assemble_standardized(
    std_data: &IncompleteMatrix,
    moments: &MomentEstimate,
) -> Result<crate::solver::RigidProblem, PipelineError> {
    let augmented = augment_with_intercept(std_data);
    let aug_moments = augment_moments(moments);
    let registry = build_registry(&augmented, &aug_moments.cov, &aug_moments.mean)?;
    Ok(assemble(&augmented, &aug_moments, &registry, 0.0)?)
}

fn solve_assembled(
    base: &crate::solver::RigidProblem,
    gamma: f64,
    solver_config: &SolverConfig,
    warm_start: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, f64, SolveReport), PipelineError> {
    let problem = base.with_gamma(gamma);
    let report = match warm_start {
        Some(init) => solve_warm_started(&problem, solver_config, init)?,
        None => solve(&problem, solver_config)?,
    };
    let p = base.dim() - 1;
    let beta = DVector::from_fn(p, |j, _| report.beta[j]);
    let intercept = report.beta[p];
    Ok((beta, intercept, report))
}

/// Solves the robust program on standardized data at one γ, returning the
/// feature coefficients, the intercept and the solver report. An optional
/// warm start (in augmented coordinates) accelerates γ-grid sweeps.
fn solve_standardized(
    std_data: &IncompleteMatrix,
    moments: &MomentEstimate,
    gamma: f64,
    solver_config: &SolverConfig,
    warm_start: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, f64, SolveReport), PipelineError> {
    let base = assemble_standardized(std_data, moments)?;
    solve_assembled(&base, gamma, solver_config, warm_start)
}

/// Conditional-mean completion of standardized rows under a moment snapshot.
/// Pattern statistics are computed once per distinct pattern.
fn complete_rows(
    values: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    moments: &MomentEstimate,
) -> Result<DMatrix<f64>, PipelineError> {
    let (n, p) = (values.nrows(), values.ncols());
    let mut cache: BTreeMap<Vec<usize>, PatternStats> = BTreeMap::new();
    let mut completed = values.clone();
    for i in 0..n {
        let missing: Vec<usize> = (0..p).filter(|&j| !mask[(i, j)]).collect();
        if missing.is_empty() {
            continue;
        }
        if !cache.contains_key(&missing) {
            let pattern = MissingPattern::new(missing.clone(), p)
                .map_err(PipelineError::Conditional)?;
            let stats = pattern_stats(&moments.cov, &moments.mean, &pattern)?;
            cache.insert(missing.clone(), stats);
        }
        let stats = &cache[&missing];
        let observed = stats.pattern.observed();
        let observed_values = DVector::from_fn(observed.len(), |r, _| values[(i, observed[r])]);
        let mu_bar = conditional_mean(stats, &moments.mean, &observed_values)?;
        for (r, &j) in stats.pattern.missing().iter().enumerate() {
            completed[(i, j)] = mu_bar[r];
        }
    }
    Ok(completed)
}

fn shuffled_fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf01d_f01d_f01d_f01d);
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (rank, &row) in order.iter().enumerate() {
        assignment[row] = rank * folds / n;
    }
    assignment
}

fn subset_rows(data: &IncompleteMatrix, rows: &[usize]) -> IncompleteMatrix {
    let p = data.n_cols();
    let values = DMatrix::from_fn(rows.len(), p, |r, c| data.value(rows[r], c));
    let mask = DMatrix::from_fn(rows.len(), p, |r, c| data.is_observed(rows[r], c));
    let response = DVector::from_fn(rows.len(), |r, _| data.response()[rows[r]]);
    IncompleteMatrix::new(values, mask, response)
}

/// Fits the robust model, cross-validating γ when requested.
pub fn fit(
    data: &IncompleteMatrix,
    config: &FitConfig,
) -> Result<(RigidModel, EvalReport), PipelineError> {
    let started = std::time::Instant::now();
    let n = data.n_rows();
    if n < 2 {
        return Err(PipelineError::InvalidInput("need at least two rows".into()));
    }
    let (std_data, transforms) = standardize(data)?;

    let mut cv_table = Vec::new();
    let gamma = match &config.gamma {
        GammaChoice::Fixed(g) => {
            if *g < 0.0 {
                return Err(PipelineError::InvalidInput("gamma must be nonnegative".into()));
            }
            *g
        }
        GammaChoice::CrossValidated { grid, folds } => {
            if grid.is_empty() {
                return Err(PipelineError::InvalidInput("empty gamma grid".into()));
            }
            if grid.len() == 1 {
                grid[0]
            } else {
                let folds = (*folds).clamp(2, n);
                cv_table = cross_validate(&std_data, grid, folds, config)?;
                cv_table
                    .iter()
                    .min_by(|a, b| a.mean_mse.total_cmp(&b.mean_mse))
                    .map(|row| row.gamma)
                    .expect("non-empty grid")
            }
        }
    };

    let moments = estimate_moments(&std_data, &config.moments)?;
    let (beta, intercept, report) =
        solve_standardized(&std_data, &moments, gamma, &config.solver, None)?;
    let model = RigidModel {
        beta,
        intercept,
        gamma,
        moments,
        standardization: transforms,
        feature_names: (1..=data.n_cols()).map(|j| format!("x{j}")).collect(),
        target_name: "y".to_string(),
        fit_summary: FitSummary::from_report(&report),
    };

    // In-sample metrics.
    let predictions = predict(&model, data.values(), data.mask())?;
    let (rmse, mae) = prediction_metrics(&predictions, data.response());
    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        methods: vec![MethodSummary {
            method: "rigid".into(),
            rmse,
            mae,
            rmse_std: None,
            mae_std: None,
        }],
        realized_missing_rate: data.missing_rate(),
        gamma_chosen: vec![gamma],
        cv_table,
        seeds: vec![config.seed],
        trials: 1,
        failures: Vec::new(),
        per_trial: Vec::new(),
        timings_ms: vec![("fit".into(), started.elapsed().as_millis())],
    };
    Ok((model, report))
}

fn cross_validate(
    std_data: &IncompleteMatrix,
    grid: &[f64],
    folds: usize,
    config: &FitConfig,
) -> Result<Vec<CvRow>, PipelineError> {
    let n = std_data.n_rows();
    let assignment = shuffled_fold_assignment(n, folds, config.seed);
    let mut fold_errors: Vec<Vec<f64>> = vec![Vec::with_capacity(folds); grid.len()];
    for fold in 0..folds {
        let train_rows: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
        let val_rows: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
        if val_rows.is_empty() || train_rows.len() < 2 {
            return Err(PipelineError::InvalidInput(format!(
                "fold {fold} leaves too few rows (train {}, validation {})",
                train_rows.len(),
                val_rows.len()
            )));
        }
        let train = subset_rows(std_data, &train_rows);
        let val = subset_rows(std_data, &val_rows);
        let fold_moments = estimate_moments(&train, &config.moments)?;
        // Validation rows are completed with fold-training moments, exactly
        // as prediction would at deployment time.
        let completed_val = complete_rows(val.values(), val.mask(), &fold_moments)?;
        let base = assemble_standardized(&train, &fold_moments)?;
        let mut warm: Option<DVector<f64>> = None;
        for (g, &gamma) in grid.iter().enumerate() {
            let (beta, intercept, report) =
                solve_assembled(&base, gamma, &config.solver, warm.as_ref())?;
            warm = Some(report.beta);
            let mut squared_error = 0.0;
            for r in 0..val_rows.len() {
                let fitted = completed_val.row(r).transpose().dot(&beta) + intercept;
                squared_error += (val.response()[r] - fitted).powi(2);
            }
            fold_errors[g].push(squared_error / val_rows.len() as f64);
        }
    }
    Ok(grid
        .iter()
        .zip(fold_errors)
        .map(|(&gamma, fold_mse)| {
            let mean_mse = fold_mse.iter().sum::<f64>() / fold_mse.len() as f64;
            CvRow { gamma, fold_mse, mean_mse }
        })
        .collect())
}

/// Predicts responses for possibly-incomplete raw rows: observed entries are
/// standardized with the stored transforms, missing entries are completed
/// with their conditional mean under the model's moment snapshot, and the
/// linear map plus intercept is applied.
pub fn predict(
    model: &RigidModel,
    values: &DMatrix<f64>,
    mask: &DMatrix<bool>,
) -> Result<DVector<f64>, PipelineError> {
    let p = model.dim();
    if values.ncols() != p || mask.ncols() != p || values.nrows() != mask.nrows() {
        return Err(PipelineError::InvalidInput(format!(
            "prediction rows have {} columns, model expects {p}",
            values.ncols()
        )));
    }
    let n = values.nrows();
    let mut standardized = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            if mask[(i, j)] {
                standardized[(i, j)] = model.standardization[j].apply(values[(i, j)]);
            }
        }
    }
    let completed = complete_rows(&standardized, mask, &model.moments)?;
    Ok(DVector::from_fn(n, |i, _| {
        completed.row(i).transpose().dot(&model.beta) + model.intercept
    }))
}

pub(crate) fn prediction_metrics(predictions: &DVector<f64>, truth: &DVector<f64>) -> (f64, f64) {
    let n = predictions.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for i in 0..predictions.len() {
        let e = predictions[i] - truth[i];
        sq += e * e;
        abs += e.abs();
    }
    ((sq / n).sqrt(), abs / n)
}

/// Ordinary least squares with an intercept column on complete rows.
fn ols_with_intercept(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, f64), PipelineError> {
    let (n, p) = (x.nrows(), x.ncols());
    let mut design = DMatrix::zeros(n, p + 1);
    design.view_mut((0, 0), (n, p)).copy_from(x);
    for i in 0..n {
        design[(i, p)] = 1.0;
    }
    let gram = design.transpose() * &design;
    let chol = Cholesky::new(gram).ok_or(SolverError::RankDeficientGram)?;
    let coeffs = chol.solve(&(design.transpose() * y));
    Ok((DVector::from_fn(p, |j, _| coeffs[j]), coeffs[p]))
}

/// The two reference baselines, evaluated on the same standardized pipeline:
/// column-mean imputation + OLS and conditional-mean imputation + OLS.
pub fn run_baselines(
    train: &IncompleteMatrix,
    test_values: &DMatrix<f64>,
    test_mask: &DMatrix<bool>,
    test_response: &DVector<f64>,
    moment_options: &MomentOptions,
) -> Result<Vec<MethodSummary>, PipelineError> {
    let p = train.n_cols();
    let (std_train, transforms) = standardize(train)?;
    let standardize_test = |mask_aware: bool| {
        let mut out = DMatrix::zeros(test_values.nrows(), p);
        for i in 0..test_values.nrows() {
            for j in 0..p {
                if !mask_aware || test_mask[(i, j)] {
                    out[(i, j)] = transforms[j].apply(test_values[(i, j)]);
                }
            }
        }
        out
    };

    // Mean imputation: standardized columns have zero observed mean, so the
    // imputed value is exactly zero.
    let mean_imputed = std_train.values().clone();
    let (beta_mean, int_mean) = ols_with_intercept(&mean_imputed, std_train.response())?;
    let test_std = standardize_test(true);
    let mut mean_test = test_std.clone();
    for i in 0..mean_test.nrows() {
        for j in 0..p {
            if !test_mask[(i, j)] {
                mean_test[(i, j)] = 0.0;
            }
        }
    }
    let mean_preds =
        DVector::from_fn(test_values.nrows(), |i, _| {
            mean_test.row(i).transpose().dot(&beta_mean) + int_mean
        });
    let (rmse_mean, mae_mean) = prediction_metrics(&mean_preds, test_response);

    // Conditional-mean imputation under the train moments.
    let moments = estimate_moments(&std_train, moment_options)?;
    let completed_train = complete_rows(std_train.values(), std_train.mask(), &moments)?;
    let (beta_cond, int_cond) = ols_with_intercept(&completed_train, std_train.response())?;
    let completed_test = complete_rows(&test_std, test_mask, &moments)?;
    let cond_preds = DVector::from_fn(test_values.nrows(), |i, _| {
        completed_test.row(i).transpose().dot(&beta_cond) + int_cond
    });
    let (rmse_cond, mae_cond) = prediction_metrics(&cond_preds, test_response);

    Ok(vec![
        MethodSummary {
            method: "mean_impute_ols".into(),
            rmse: rmse_mean,
            mae: mae_mean,
            rmse_std: None,
            mae_std: None,
        },
        MethodSummary {
            method: "conditional_mean_ols".into(),
            rmse: rmse_cond,
            mae: mae_cond,
            rmse_std: None,
            mae_std: None,
        },
    ])
}
