//! Fixtures shared by the benchmarks.

use collapse_core::linalg::standard_normal_matrix;
use collapse_core::{make_power_law, GroundTruth, Spectrum};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Power-law problem with the exponents used in the scaling experiments.
pub fn power_law(d: usize) -> (Spectrum, GroundTruth) {
    make_power_law(d, 2.0, 0.375).expect("valid exponents")
}

/// `rows x cols` inputs with entries in `[0, 1)`, like scaled pixels.
pub fn pixel_inputs(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    standard_normal_matrix(rows, cols, &mut rng).map(|v| (v.abs() / 4.0).fract())
}
