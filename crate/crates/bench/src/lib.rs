//! Shared inputs for the benchmarks.

use padic_heat::{make_initial, BallModel, GridFunction, InitialSpec};

/// Dyadic model `B_0` with `2^levels` cosets.
pub fn dyadic(levels: i32) -> BallModel {
    BallModel::new(2, 0, levels).expect("valid model")
}

/// Reproducible data with values in `[lo, 1]`.
pub fn random_data(model: BallModel, lo: f64) -> GridFunction {
    make_initial(
        model,
        &InitialSpec::Random {
            seed: 1,
            lo,
            hi: 1.0,
        },
    )
    .expect("valid spec")
}
