//! The closed-form proximal operators behind every ADMM z-update: the scalar
//! shifted-square prox and the three-branch joint prox.

use nalgebra::DVector;

use rigid::prox::{prox_joint, prox_scalar, ProxInput};

fn main() {
    // Scalar prox of λ·½(|z|+c)²: a shrink with a dead zone of radius λc.
    for (z, c, lambda) in [(5.0, 0.0, 1.0), (1.0, 2.0, 1.0), (-4.0, 1.0, 1.0)] {
        println!("prox_scalar(z′={z:5.1}, c={c}, λ={lambda}) = {:6.3}", prox_scalar(z, c, lambda));
    }
    println!();

    // The joint operator lands in one of three regimes depending on how the
    // block magnitude ‖z₂′‖ compares with |z₁′|.
    let cases = [
        ("block dominates: z₁* = 0", 0.0, vec![3.0, 4.0]),
        ("interior: both blocks shrink", 2.0, vec![2.0, 0.0]),
        ("scalar dominates: z₂* = 0", 10.0, vec![0.1, 0.0]),
    ];
    for (label, z1, z2) in cases {
        let input = ProxInput { z1, z2: DVector::from_vec(z2), lambda: 1.0, gamma: 1.0 };
        let (z1_star, z2_star) = prox_joint(&input);
        println!(
            "{label}: (z₁′={:4.1}, z₂′={:?}) → (z₁*={:.3}, z₂*={:?})",
            input.z1,
            input.z2.as_slice(),
            z1_star,
            z2_star.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
}
