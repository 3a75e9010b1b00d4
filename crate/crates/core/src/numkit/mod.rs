//! Numerical substrate: dense matrices, MLPs with analytic gradients, Adam,
//! seeded random streams, and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod matrix;
mod mlp;
mod params;
mod rng;

pub use adam::Adam;
pub use gradcheck::{finite_diff_check, GradCheckReport, REL_FLOOR};
pub use matrix::{dot, Matrix};
pub use mlp::{Activation, BatchNorm, Layer, LayerGrads, LayerSpec, MlpCache, MlpGrads, MlpParams, Mode};
pub use params::ParamSet;
pub use rng::{derive_seed, Rng, RngPosition};

/// Worker count for internal parallel loops: `INVSEN_THREADS` if set to a
/// positive integer, otherwise the number of available cores.
pub fn worker_count() -> usize {
    std::env::var("INVSEN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}
