//! Closed-form proximal operators for the composite loss `½(|z₁| + γ‖z₂‖)²`.
//!
//! [`prox_scalar`] minimizes `λ·½(|z|+c)² + ½(z−z′)²` and is the building
//! block of the joint operator. [`prox_joint`] minimizes
//!
//! ```text
//! (λ/2)(|z₁| + γ‖z₂‖)² + ½(z₁ − z₁′)² + ½‖z₂ − z₂′‖²
//! ```
//!
//! through a three-branch formula keyed on how λγ‖z₂′‖ compares with
//! (1+λγ²)|z₁′| and λ²γ²|z₁′|/(λ+1). The output z₂ block is always a
//! nonnegative multiple of z₂′, so the whole evaluation is linear time.
//!
//! Both operators are pure and reentrant; the solver invokes them in
//! parallel across samples.

use nalgebra::DVector;

/// Input block of the joint proximal operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxInput {
    /// First coordinate z₁′.
    pub z1: f64,
    /// Remaining block z₂′; may be empty.
    pub z2: DVector<f64>,
    /// Prox weight λ = 1/ρ, nonnegative.
    pub lambda: f64,
    /// Loss parameter γ, nonnegative.
    pub gamma: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Minimizer of `λ·½(|z|+c)² + ½(z−z′)²` for `c ≥ 0, λ ≥ 0`:
/// `(z′ − sign(z′)·λc)/(1+λ)` when `|z′| > λc`, else 0.
pub fn prox_scalar(z_prime: f64, c: f64, lambda: f64) -> f64 {
    debug_assert!(c >= 0.0 && lambda >= 0.0);
    if z_prime.abs() > lambda * c {
        (z_prime - sign(z_prime) * lambda * c) / (1.0 + lambda)
    } else {
        0.0
    }
}

/// Joint proximal operator of `(λ/2)(|z₁| + γ‖z₂‖)²`.
///
/// Returns the unique minimizer `(z₁*, z₂*)`. Special cases: λ = 0 is the
/// identity; γ = 0 shrinks only the first coordinate; an empty z₂ reduces to
/// the scalar rule.
pub fn prox_joint(input: &ProxInput) -> (f64, DVector<f64>) {
    let mut z2 = input.z2.clone();
    let z1 = prox_joint_in_place(input.z1, z2.as_mut_slice(), input.lambda, input.gamma);
    (z1, z2)
}

/// In-place form of [`prox_joint`] used by the solver hot loop: `z2` holds
/// z₂′ on entry and z₂* on exit; returns z₁*.
pub fn prox_joint_in_place(z1: f64, z2: &mut [f64], lambda: f64, gamma: f64) -> f64 {
    debug_assert!(lambda >= 0.0 && gamma >= 0.0);
    if lambda == 0.0 {
        return z1;
    }
    if gamma == 0.0 || z2.is_empty() {
        return z1 / (1.0 + lambda);
    }
    let norm2 = z2.iter().map(|v| v * v).sum::<f64>().sqrt();
    let abs_z1 = z1.abs();
    if norm2 == 0.0 && z1 == 0.0 {
        return 0.0;
    }
    let lg = lambda * gamma;
    if lg * norm2 >= (1.0 + lg * gamma) * abs_z1 {
        let scale = 1.0 / (1.0 + lg * gamma);
        for v in z2.iter_mut() {
            *v *= scale;
        }
        0.0
    } else if lg * norm2 >= lg * lg * abs_z1 / (lambda + 1.0) {
        let denom = 1.0 + lambda + lg * gamma;
        let z1_star = ((1.0 + lg * gamma) * z1 - lg * sign(z1) * norm2) / denom;
        let scale = ((lambda + 1.0) * norm2 - lg * abs_z1) / (denom * norm2);
        for v in z2.iter_mut() {
            *v *= scale;
        }
        z1_star
    } else {
        for v in z2.iter_mut() {
            *v = 0.0;
        }
        z1 / (1.0 + lambda)
    }
}
