//! Conditional Gaussian statistics per missing pattern: Schur complements,
//! regression maps, and conditional-mean completion through the registry.

use nalgebra::{DMatrix, DVector};

use rigid::conditional::{build_registry, conditional_mean, pattern_stats, MissingPattern};
use rigid::IncompleteMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cov = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 2.0, 1.0, 0.5, 1.0, 2.0]);
    let mean = DVector::from_vec(vec![1.0, -1.0, 0.5]);

    // Condition the last two coordinates on the first.
    let pattern = MissingPattern::new(vec![1, 2], 3)?;
    let stats = pattern_stats(&cov, &mean, &pattern)?;
    println!("pattern ℳ = {:?}", pattern.missing());
    println!("conditional covariance Σ̄ =\n{:.4}", stats.cond_cov);
    println!("regression map Σ_ℳ𝒜 Σ_𝒜𝒜⁻¹ = {:?}", stats.regression_map.as_slice());

    // Observing x₀ = 3 pulls the missing block toward its conditional mean.
    let observed = DVector::from_vec(vec![3.0]);
    let mu_bar = conditional_mean(&stats, &mean, &observed)?;
    println!("E[x₁, x₂ | x₀ = 3] = ({:.4}, {:.4})", mu_bar[0], mu_bar[1]);

    // The registry deduplicates row patterns and factors each exactly once.
    let values = DMatrix::from_row_slice(
        4,
        3,
        &[1.0, 2.0, 3.0, 4.0, 0.0, 6.0, 7.0, 0.0, 9.0, 0.0, 0.0, 0.0],
    );
    let mask = DMatrix::from_row_slice(
        4,
        3,
        &[
            true, true, true, //
            true, false, true, //
            true, false, true, //
            false, false, false,
        ],
    );
    let data = IncompleteMatrix::new(values, mask, DVector::zeros(4));
    let registry = build_registry(&data, &cov, &mean)?;
    println!("\n{} rows share {} distinct patterns:", data.n_rows(), registry.len());
    for stats in registry.stats() {
        println!("  ℳ = {:?} × {} rows", stats.pattern.missing(), stats.count);
    }
    Ok(())
}
