//! Robust linear regression on data with missing feature entries.
//!
//! The training loss treats every missing block of a sample as an uncertain
//! quantity: under a multivariate normal model the missing entries, given the
//! observed ones, concentrate in an interval around their conditional mean,
//! and the fit minimizes the worst-case squared error over those intervals.
//! The resulting min-max problem collapses to the convex per-sample loss
//!
//! ```text
//! ½ (|yᵢ − xᵢ,ᴬᵀ βᴬ − μ̄ᵢᵀ βᴹ| + γ ‖βᴹ‖_Σ̄ᵢ)²
//! ```
//!
//! which is solved by a scaled ADMM whose z-update has a closed form.
//!
//! The crate is organized around that pipeline:
//!
//! * [`data`] — the incomplete design matrix (values + observation mask).
//! * [`moments`] — mean/covariance estimation from incomplete rows, with a
//!   positive-definite projection and condition-number cap.
//! * [`conditional`] — per-pattern Schur complements, factorizations and
//!   conditional means.
//! * [`prox`] — the closed-form proximal operators driving the ADMM z-update.
//! * [`solver`] — problem assembly and the ADMM itself (full and mini-batch).
//! * [`risk`] — closed-form population risk, uniqueness/sparsity thresholds
//!   and a certified numeric minimizer.
//! * [`missingness`] — MCAR/MAR/MNAR mask generators for simulation.
//! * [`pipeline`] — standardization, cross-validation of γ, baselines,
//!   CSV/JSON interfaces and the experiment harness behind the CLI.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod conditional;
pub mod data;
pub mod missingness;
pub mod moments;
pub mod pipeline;
pub mod prox;
pub mod risk;
pub mod solver;

pub use data::IncompleteMatrix;
pub use moments::{MomentEstimate, MomentOptions};
pub use pipeline::{EvalReport, RigidModel};
pub use solver::{SolveReport, SolverConfig};

/// Any error produced by the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Moments(#[from] moments::MomentsError),
    #[error(transparent)]
    Conditional(#[from] conditional::ConditionalError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Risk(#[from] risk::RiskError),
    #[error(transparent)]
    Missingness(#[from] missingness::MissingnessError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
}
