//! JSON schemas for models, reports and risk specifications.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ColumnTransform, EvalReport, FitSummary, PipelineError, RigidModel};
use crate::conditional::MissingPattern;
use crate::moments::MomentEstimate;
use crate::risk::RiskSpec;

/// Version stamp carried by every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, PipelineError> {
    let n = rows.len();
    if n == 0 {
        return Err(PipelineError::InvalidInput(format!("{what}: empty matrix")));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(PipelineError::InvalidInput(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct MomentsJson {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    availability: Vec<Vec<f64>>,
    theta_floor: f64,
    n_samples: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    schema_version: u32,
    target: String,
    features: Vec<String>,
    gamma: f64,
    intercept: f64,
    beta: Vec<f64>,
    standardization: Vec<ColumnTransform>,
    moments: MomentsJson,
    fit: FitSummary,
}

/// Serializes a fitted model to pretty JSON.
pub fn model_to_json(model: &RigidModel) -> Result<String, PipelineError> {
    let json = ModelJson {
        schema_version: SCHEMA_VERSION,
        target: model.target_name.clone(),
        features: model.feature_names.clone(),
        gamma: model.gamma,
        intercept: model.intercept,
        beta: model.beta.iter().cloned().collect(),
        standardization: model.standardization.clone(),
        moments: MomentsJson {
            mean: model.moments.mean.iter().cloned().collect(),
            cov: matrix_to_rows(&model.moments.cov),
            availability: matrix_to_rows(&model.moments.availability),
            theta_floor: model.moments.theta_floor,
            n_samples: model.moments.n_samples,
        },
        fit: model.fit_summary.clone(),
    };
    Ok(serde_json::to_string_pretty(&json)?)
}

/// Parses a model back from JSON.
pub fn model_from_json(text: &str) -> Result<RigidModel, PipelineError> {
    let json: ModelJson = serde_json::from_str(text)?;
    if json.schema_version != SCHEMA_VERSION {
        return Err(PipelineError::InvalidInput(format!(
            "unsupported schema version {}",
            json.schema_version
        )));
    }
    let p = json.beta.len();
    if json.features.len() != p || json.standardization.len() != p || json.moments.mean.len() != p
    {
        return Err(PipelineError::InvalidInput(
            "model fields have inconsistent dimensions".into(),
        ));
    }
    Ok(RigidModel {
        beta: DVector::from_vec(json.beta),
        intercept: json.intercept,
        gamma: json.gamma,
        moments: MomentEstimate {
            mean: DVector::from_vec(json.moments.mean),
            cov: matrix_from_rows(&json.moments.cov, "moments.cov")?,
            availability: matrix_from_rows(&json.moments.availability, "moments.availability")?,
            theta_floor: json.moments.theta_floor,
            n_samples: json.moments.n_samples,
        },
        standardization: json.standardization,
        feature_names: json.features,
        target_name: json.target,
        fit_summary: json.fit,
    })
}

/// Serializes an evaluation report to pretty JSON.
pub fn report_to_json(report: &EvalReport) -> Result<String, PipelineError> {
    Ok(serde_json::to_string_pretty(report)?)
}

#[derive(Serialize, Deserialize)]
struct RiskSpecJson {
    beta0: Vec<f64>,
    sigma: f64,
    cov: Vec<Vec<f64>>,
    /// Zero-based missing-index sets.
    patterns: Vec<Vec<usize>>,
    probs: Vec<f64>,
}

/// Parses a risk specification from JSON.
pub fn risk_spec_from_json(text: &str) -> Result<RiskSpec, PipelineError> {
    let json: RiskSpecJson = serde_json::from_str(text)?;
    let p = json.beta0.len();
    let cov = matrix_from_rows(&json.cov, "cov")?;
    let mut patterns = Vec::with_capacity(json.patterns.len());
    for missing in json.patterns {
        patterns.push(MissingPattern::new(missing, p).map_err(PipelineError::Conditional)?);
    }
    Ok(RiskSpec::new(
        DVector::from_vec(json.beta0),
        json.sigma,
        cov,
        patterns,
        DVector::from_vec(json.probs),
    )?)
}

/// Reads a risk specification file.
pub fn read_risk_spec(path: impl AsRef<Path>) -> Result<RiskSpec, PipelineError> {
    risk_spec_from_json(&std::fs::read_to_string(path)?)
}

/// Output of the risk analytics command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub schema_version: u32,
    pub gamma: f64,
    /// ℒ(β₀; γ).
    pub risk_at_beta0: f64,
    /// Smallest eigenvalue of Σⱼ πⱼ(Σ − Σ̄ᴱⱼ).
    pub uniqueness_min_eigenvalue: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0_threshold_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minimizer: Option<RiskMinimizerReport>,
}

/// Minimizer section of [`RiskReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMinimizerReport {
    pub beta: Vec<f64>,
    pub robust_risk: f64,
    pub empirical_risk: f64,
}
