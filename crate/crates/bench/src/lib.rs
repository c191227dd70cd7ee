//! Deterministic inputs shared by the benchmarks.

use pfe_core::flow::VectorFieldNet;
use pfe_core::mathcore::{Activation, Matrix};
use pfe_core::rng::{normal_vec, rng_for};

/// `n` standard-normal vectors of length `d`.
pub fn gaussian_set(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, &[]);
    (0..n).map(|_| normal_vec(&mut rng, d, 1.0)).collect()
}

/// Well-conditioned symmetric positive definite `d × d` matrix.
pub fn spd(d: usize, seed: u64) -> Matrix {
    let a = Matrix::from_vec(d, d, normal_vec(&mut rng_for(seed, &[]), d * d, 1.0)).unwrap();
    let s = a.matmul(&a.transpose()).add(&Matrix::identity(d));
    s.add(&s.transpose()).scaled(0.5)
}

/// Untrained vector field at the default desk-scale shape.
pub fn desk_field(dim: usize, condition_dim: usize) -> VectorFieldNet {
    VectorFieldNet::new(dim, condition_dim, 128, 3, Activation::Relu, 8, &mut rng_for(0, &[])).unwrap()
}
