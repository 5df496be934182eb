//! Heat flow and porous medium flow driven by the Vladimirov operator on a
//! p-adic ball.
//!
//! A [`BallModel`] fixes the prime `p`, the ball `B_N` and a resolution `M`;
//! functions constant on cosets of `B_{-M}` are stored as [`GridFunction`]s
//! with `p^(N+M)` values. On that space the operator `D^alpha_N` is realized
//! exactly, and the heat semigroup, the resolvent and backward-Euler steps of
//! the nonlinear equation are computed on top of it.
//!
//! ```
//! use padic_heat::{BallModel, GridFunction, vladimirov};
//!
//! let model = BallModel::new(2, 0, 1).unwrap();
//! let one = GridFunction::constant(model, 1.0);
//! let d_one = vladimirov::apply_spectral(&one, 1.0).unwrap();
//! assert!((d_one.values()[0] - 2.0 / 3.0).abs() < 1e-15);
//! ```

pub mod ball_model;
mod dd;
pub mod error;
pub mod fourier_ball;
pub mod function_space;
pub mod kernels;
pub mod linear_solver;
pub mod pme_solver;
pub mod vladimirov;

pub use ball_model::{BallModel, Constants};
pub use error::{Error, Result};
pub use fourier_ball::SpectralFunction;
pub use function_space::{make_initial, GridFunction, InitialSpec};
pub use kernels::{KernelEvaluator, Radius};
pub use linear_solver::EvolutionPath;
pub use pme_solver::{ImplicitStepConfig, Nonlinearity};
pub use vladimirov::SpectralMultiplier;
