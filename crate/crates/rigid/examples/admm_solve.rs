//! Direct use of the solver layer: assemble the convex program from
//! incomplete data and run the scaled ADMM, full-batch and mini-batch.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use rigid::conditional::build_registry;
use rigid::moments::{estimate_moments, MomentOptions};
use rigid::solver::{assemble, solve, solve_minibatch, SolverConfig};
use rigid::IncompleteMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n, p) = (200, 5);
    let mut rng = StdRng::seed_from_u64(11);
    let factor = DMatrix::<f64>::from_fn(p, 2, |_, _| StandardNormal.sample(&mut rng));
    let cov = &factor * factor.transpose() / 2.0 + DMatrix::identity(p, p) * 0.5;
    let chol = Cholesky::new(cov).unwrap();
    let values =
        DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng)) * chol.l().transpose();
    let beta_true = DVector::from_vec(vec![1.5, -2.0, 0.0, 0.5, 1.0]);
    let response = DVector::from_fn(n, |i, _| {
        values.row(i).transpose().dot(&beta_true)
            + 0.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    let mut mask = DMatrix::from_fn(n, p, |_, _| !rng.random_bool(0.3));
    for j in 0..p {
        mask[(0, j)] = true;
    }
    let data = IncompleteMatrix::new(values, mask, response);

    let moments = estimate_moments(&data, &MomentOptions::default())?;
    let registry = build_registry(&data, &moments.cov, &moments.mean)?;
    println!("{} distinct missing patterns across {n} rows", registry.len());

    for gamma in [0.0, 0.3, 1.0] {
        let problem = assemble(&data, &moments, &registry, gamma)?;
        let report = solve(&problem, &SolverConfig::default())?;
        println!(
            "γ = {gamma}: objective {:.5} after {} iterations (ρ = {}), β = {:?}",
            report.final_objective(),
            report.iterations,
            report.final_rho,
            report.beta.iter().map(|b| (b * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }

    // Mini-batch β-updates hover near the full solution; a larger fixed
    // penalty keeps the hover tight.
    let problem = assemble(&data, &moments, &registry, 0.3)?;
    let full = solve(&problem, &SolverConfig::default())?;
    let batched = solve_minibatch(
        &problem,
        &SolverConfig {
            batch_size: Some(50),
            rho_init: 10.0,
            vary_penalty: false,
            max_iter: 1000,
            seed: 4,
            ..SolverConfig::default()
        },
    )?;
    println!(
        "mini-batch (50 of {n}): objective {:.5} vs full {:.5}",
        batched.final_objective(),
        full.final_objective()
    );
    Ok(())
}
