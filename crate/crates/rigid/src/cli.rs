//! Command-line interface: `fit`, `predict`, `simulate-missing`, `bench` and
//! `risk` subcommands over the CSV/JSON formats.
//!
//! Exit codes: 0 on success, 2 for input errors, 3 for numerical failures.
//! A fit that stops at the iteration cap still exits 0; the report carries
//! `converged: false`.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::missingness::{generate_mask, realized_rate, MaskSpec, Mechanism, MissingnessError};
use crate::moments::{MomentOptions, MomentsError};
use crate::pipeline::{
    self, default_na_tokens, load_csv, load_csv_features, model_from_json, model_to_json,
    read_risk_spec, report_to_json, write_csv, FitConfig, GammaChoice, PipelineError,
    RiskMinimizerReport, RiskReport, SimulationSpec, SCHEMA_VERSION,
};
use crate::risk::{
    empirical_risk, gamma0_threshold, gamma0_uniqueness_matrix, minimize_robust_risk,
    robust_risk, RiskError,
};
use crate::solver::{SolverConfig, SolverError};

#[derive(Parser)]
#[command(name = "rigid", version, about = "Robust linear regression with missing features")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Mcar,
    Mar,
    Mnar,
    MnarQ,
}

impl From<MechanismArg> for Mechanism {
    fn from(value: MechanismArg) -> Self {
        match value {
            MechanismArg::Mcar => Mechanism::Mcar,
            MechanismArg::Mar => Mechanism::Mar,
            MechanismArg::Mnar => Mechanism::MnarLogistic,
            MechanismArg::MnarQ => Mechanism::MnarQuantile,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a training CSV.
    Fit {
        #[arg(long)]
        train: PathBuf,
        /// Name of the (fully observed) target column.
        #[arg(long)]
        target: String,
        /// Either `auto` (cross-validated) or a fixed nonnegative value.
        #[arg(long, default_value = "auto")]
        gamma: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Eigenvalue floor for the covariance projection: `auto` or a value.
        #[arg(long, default_value = "auto")]
        theta: String,
        #[arg(long, default_value_t = 3.0e3)]
        cond_cap: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the model JSON.
        #[arg(long)]
        out: PathBuf,
        /// Optional output path for the evaluation report JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Predict responses for a (possibly incomplete) feature CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mask a complete CSV under a missingness mechanism.
    SimulateMissing {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mechanism: MechanismArg,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional column excluded from masking (e.g. the target).
        #[arg(long)]
        target: Option<String>,
    },
    /// Run a seeded multi-trial synthetic benchmark described by a config file.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate the closed-form risk analytics for a risk specification.
    Risk {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        gamma: f64,
        /// Also compute the risk minimizer numerically.
        #[arg(long)]
        minimize: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Benchmark configuration file.
#[derive(serde::Deserialize)]
struct BenchConfigFile {
    n_total: usize,
    p: usize,
    #[serde(default = "default_sigma")]
    sigma: f64,
    #[serde(default = "default_outlier_fraction")]
    outlier_fraction: f64,
    #[serde(default = "default_outlier_sigma")]
    outlier_sigma: f64,
    mechanism: Mechanism,
    rate: f64,
    n_trials: usize,
    #[serde(default)]
    seed: u64,
    /// Either the string "auto" or a fixed value.
    #[serde(default)]
    gamma: Option<serde_json::Value>,
    #[serde(default = "default_folds")]
    folds: usize,
    out: PathBuf,
}

fn default_sigma() -> f64 {
    1.0
}
fn default_outlier_fraction() -> f64 {
    0.1
}
fn default_outlier_sigma() -> f64 {
    10.0
}
fn default_folds() -> usize {
    5
}

fn parse_gamma_choice(text: &str, folds: usize) -> Result<GammaChoice, PipelineError> {
    if text == "auto" {
        return Ok(GammaChoice::CrossValidated { grid: GammaChoice::default_grid(), folds });
    }
    match text.parse::<f64>() {
        Ok(v) if v >= 0.0 => Ok(GammaChoice::Fixed(v)),
        _ => Err(PipelineError::InvalidInput(format!(
            "--gamma must be 'auto' or a nonnegative number, got '{text}'"
        ))),
    }
}

fn parse_theta(text: &str) -> Result<crate::moments::ThetaRule, PipelineError> {
    if text == "auto" {
        return Ok(crate::moments::ThetaRule::Auto);
    }
    match text.parse::<f64>() {
        Ok(v) if v >= 0.0 => Ok(crate::moments::ThetaRule::Fixed(v)),
        _ => Err(PipelineError::InvalidInput(format!(
            "--theta must be 'auto' or a nonnegative number, got '{text}'"
        ))),
    }
}

/// Exit code for an error: 2 for input problems, 3 for numerical failures.
fn exit_code(err: &PipelineError) -> i32 {
    match err {
        PipelineError::ZeroVarianceColumn(_)
        | PipelineError::TargetHasMissing(_)
        | PipelineError::Parse { .. }
        | PipelineError::MissingColumn(_)
        | PipelineError::InvalidInput(_)
        | PipelineError::Io(_)
        | PipelineError::Csv(_)
        | PipelineError::Json(_) => 2,
        PipelineError::Moments(MomentsError::ColumnNeverObserved(_))
        | PipelineError::Moments(MomentsError::PairNeverJointlyObserved(_, _))
        | PipelineError::Moments(MomentsError::DimensionMismatch(_)) => 2,
        PipelineError::Solver(SolverError::InvalidConfig(_)) => 2,
        PipelineError::Risk(RiskError::InvalidSpec(_))
        | PipelineError::Risk(RiskError::DimensionMismatch(_))
        | PipelineError::Risk(RiskError::InvalidPatternStructure(_)) => 2,
        PipelineError::Missingness(MissingnessError::InvalidSpec(_)) => 2,
        PipelineError::TooManyTrialFailures { .. } => 3,
        PipelineError::Moments(_)
        | PipelineError::Conditional(_)
        | PipelineError::Solver(_)
        | PipelineError::Risk(_)
        | PipelineError::Missingness(_) => 3,
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Fit { train, target, gamma, folds, theta, cond_cap, seed, out, report } => {
            let loaded = load_csv(&train, &target, &default_na_tokens())?;
            eprintln!(
                "loaded {} rows × {} features (missing rate {:.4})",
                loaded.data.n_rows(),
                loaded.data.n_cols(),
                loaded.data.missing_rate()
            );
            let config = FitConfig {
                gamma: parse_gamma_choice(&gamma, folds)?,
                moments: MomentOptions { theta: parse_theta(&theta)?, cond_cap },
                solver: SolverConfig { seed, ..SolverConfig::default() },
                seed,
            };
            let (mut model, eval) = pipeline::fit(&loaded.data, &config)?;
            model.feature_names = loaded.feature_names;
            model.target_name = loaded.target_name;
            std::fs::write(&out, model_to_json(&model)?)?;
            if let Some(report_path) = report {
                std::fs::write(&report_path, report_to_json(&eval)?)?;
            }
            if !model.fit_summary.converged {
                eprintln!(
                    "warning: solver stopped at the iteration cap ({} iterations)",
                    model.fit_summary.iterations
                );
            }
            Ok(())
        }
        Command::Predict { model, data, out } => {
            let model = model_from_json(&std::fs::read_to_string(&model)?)?;
            let (values, mask, names) = load_csv_features(&data, &default_na_tokens())?;
            // Reorder the file columns to the model's feature order; extra
            // columns (such as the target) are ignored.
            let mut index = Vec::with_capacity(model.feature_names.len());
            for name in &model.feature_names {
                let pos = names
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| PipelineError::MissingColumn(name.clone()))?;
                index.push(pos);
            }
            let n = values.nrows();
            let p = index.len();
            let ordered_values = DMatrix::from_fn(n, p, |i, j| values[(i, index[j])]);
            let ordered_mask = DMatrix::from_fn(n, p, |i, j| mask[(i, index[j])]);
            let predictions = pipeline::predict(&model, &ordered_values, &ordered_mask)?;
            let mut writer = csv::Writer::from_path(&out)?;
            writer.write_record(["prediction"])?;
            for i in 0..n {
                writer.write_record([format!("{}", predictions[i])])?;
            }
            writer.flush()?;
            Ok(())
        }
        Command::SimulateMissing { data, mechanism, rate, seed, out, target } => {
            let (values, mask, names) = load_csv_features(&data, &default_na_tokens())?;
            if mask.iter().any(|&m| !m) {
                return Err(PipelineError::InvalidInput(
                    "input data must be complete before masking".into(),
                ));
            }
            let (feature_cols, target_col): (Vec<usize>, Option<usize>) = match &target {
                Some(name) => {
                    let pos = names
                        .iter()
                        .position(|h| h == name)
                        .ok_or_else(|| PipelineError::MissingColumn(name.clone()))?;
                    ((0..names.len()).filter(|&j| j != pos).collect(), Some(pos))
                }
                None => ((0..names.len()).collect(), None),
            };
            let n = values.nrows();
            let feature_values =
                DMatrix::from_fn(n, feature_cols.len(), |i, j| values[(i, feature_cols[j])]);
            let spec = MaskSpec::new(mechanism.into(), rate, seed);
            let feature_mask = generate_mask(&feature_values, &spec)?;
            eprintln!("realized missing rate: {:.4}", realized_rate(&feature_mask));

            // Reassemble in the original column order.
            let mut out_values = values.clone();
            let mut out_mask = DMatrix::from_element(n, names.len(), true);
            for (j, &col) in feature_cols.iter().enumerate() {
                for i in 0..n {
                    out_values[(i, col)] = feature_values[(i, j)];
                    out_mask[(i, col)] = feature_mask[(i, j)];
                }
            }
            let _ = target_col;
            write_csv(&out, &out_values, &out_mask, &names, None)?;
            Ok(())
        }
        Command::Bench { config } => {
            let parsed: BenchConfigFile =
                serde_json::from_str(&std::fs::read_to_string(&config)?)?;
            let gamma = match &parsed.gamma {
                None => GammaChoice::CrossValidated {
                    grid: GammaChoice::default_grid(),
                    folds: parsed.folds,
                },
                Some(serde_json::Value::String(s)) => parse_gamma_choice(s, parsed.folds)?,
                Some(serde_json::Value::Number(x)) => {
                    let v = x.as_f64().unwrap_or(-1.0);
                    parse_gamma_choice(&format!("{v}"), parsed.folds)?
                }
                Some(other) => {
                    return Err(PipelineError::InvalidInput(format!(
                        "bench config gamma must be 'auto' or a number, got {other}"
                    )))
                }
            };
            let spec = SimulationSpec {
                n_total: parsed.n_total,
                p: parsed.p,
                sigma: parsed.sigma,
                outlier_fraction: parsed.outlier_fraction,
                outlier_sigma: parsed.outlier_sigma,
                mechanism: parsed.mechanism,
                rate: parsed.rate,
                n_trials: parsed.n_trials,
                seed: parsed.seed,
                fit: FitConfig {
                    gamma,
                    solver: SolverConfig { seed: parsed.seed, ..SolverConfig::default() },
                    seed: parsed.seed,
                    ..FitConfig::default()
                },
            };
            let report = pipeline::simulate_experiment(&spec)?;
            std::fs::write(&parsed.out, report_to_json(&report)?)?;
            Ok(())
        }
        Command::Risk { spec, gamma, minimize, out } => {
            if gamma < 0.0 {
                return Err(PipelineError::InvalidInput("--gamma must be nonnegative".into()));
            }
            let risk_spec = read_risk_spec(&spec)?;
            let (_, uniqueness_min) = gamma0_uniqueness_matrix(&risk_spec)?;
            let (gamma0, gamma0_err) = match gamma0_threshold(&risk_spec) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let minimizer = if minimize {
                let beta = minimize_robust_risk(&risk_spec, gamma, 1e-6)
                    .map_err(PipelineError::Risk)?;
                let value = robust_risk(&risk_spec, &beta, gamma)?;
                let emp = empirical_risk(
                    &beta,
                    &risk_spec.beta0,
                    &nalgebra::DVector::zeros(risk_spec.dim()),
                    &risk_spec.cov,
                    risk_spec.sigma,
                );
                Some(RiskMinimizerReport {
                    beta: beta.iter().cloned().collect(),
                    robust_risk: value,
                    empirical_risk: emp,
                })
            } else {
                None
            };
            let report = RiskReport {
                schema_version: SCHEMA_VERSION,
                gamma,
                risk_at_beta0: robust_risk(&risk_spec, &risk_spec.beta0, gamma)?,
                uniqueness_min_eigenvalue: uniqueness_min,
                gamma0_threshold: gamma0,
                gamma0_threshold_error: gamma0_err,
                minimizer,
            };
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

/// Parses arguments, dispatches, and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
