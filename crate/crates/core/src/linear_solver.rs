//! The linear heat equation `du/dt + (D - lambda) u = 0` on the ball.
//!
//! Solutions are `u(t) = Z_N(t, .) * u0`. The spectral path multiplies
//! Fourier coefficients by `exp(-t (m_k - lambda))`; the kernel path
//! convolves with the pointwise heat kernel. Both are exact on level-M data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_space::GridFunction;
use crate::kernels::ball_kernel_pointwise_grid;
use crate::vladimirov::SpectralMultiplier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionPath {
    #[default]
    Spectral,
    Kernel,
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "time must be nonnegative and finite, got {t}"
        )))
    }
}

pub fn evolve(u0: &GridFunction, alpha: f64, t: f64) -> Result<GridFunction> {
    evolve_with(u0, alpha, t, EvolutionPath::Spectral)
}

pub fn evolve_with(
    u0: &GridFunction,
    alpha: f64,
    t: f64,
    path: EvolutionPath,
) -> Result<GridFunction> {
    check_time(t)?;
    let model = *u0.model();
    let mult = SpectralMultiplier::new(model, alpha)?;
    if t == 0.0 {
        return Ok(u0.clone());
    }
    match path {
        EvolutionPath::Spectral => semigroup(&mult, u0, t),
        EvolutionPath::Kernel => ball_kernel_pointwise_grid(&model, alpha, t)?.convolve(u0),
    }
}

fn semigroup(mult: &SpectralMultiplier, u: &GridFunction, t: f64) -> Result<GridFunction> {
    let lambda = mult.lambda();
    mult.apply_fn(u, |m| (-t * (m - lambda)).exp())
}

/// `u(t_i)` for each of the strictly increasing `times`, stepping from one
/// output to the next.
pub fn evolve_series(
    u0: &GridFunction,
    alpha: f64,
    times: &[f64],
    path: EvolutionPath,
) -> Result<Vec<GridFunction>> {
    check_times(times)?;
    let mut out = Vec::with_capacity(times.len());
    let mut current = u0.clone();
    let mut prev = 0.0;
    for &t in times {
        current = evolve_with(&current, alpha, t - prev, path)?;
        out.push(current.clone());
        prev = t;
    }
    Ok(out)
}

fn check_times(times: &[f64]) -> Result<()> {
    let mut prev = 0.0;
    for (i, &t) in times.iter().enumerate() {
        check_time(t)?;
        if i > 0 && t <= prev {
            return Err(Error::InvalidParameter(format!(
                "output times must be strictly increasing ({prev} then {t})"
            )));
        }
        prev = t;
    }
    Ok(())
}

/// `||du/dt + (D - lambda) u||_inf / ||u||_inf` at time `t > 0`, with the
/// time derivative taken by centered differences of step `1e-5 t`.
pub fn classical_residual(u0: &GridFunction, alpha: f64, t: f64) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "residual needs t > 0, got {t}"
        )));
    }
    let mult = SpectralMultiplier::new(*u0.model(), alpha)?;
    let h = 1e-5 * t;
    let plus = semigroup(&mult, u0, t + h)?;
    let minus = semigroup(&mult, u0, t - h)?;
    let u = semigroup(&mult, u0, t)?;
    let lambda = mult.lambda();
    let generator = mult.apply_fn(&u, |m| m - lambda)?;
    let dudt = plus.sub(&minus)?.scale(0.5 / h);
    Ok(dudt.add(&generator)?.max_abs() / u.max_abs().max(f64::MIN_POSITIVE))
}

/// A batch run over a fixed output grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEvolution {
    pub alpha: f64,
    pub times: Vec<f64>,
    pub path: EvolutionPath,
}

impl LinearEvolution {
    pub fn new(alpha: f64, times: Vec<f64>, path: EvolutionPath) -> Result<Self> {
        check_times(&times)?;
        crate::error::check_alpha(alpha)?;
        Ok(Self { alpha, times, path })
    }

    pub fn run(&self, u0: &GridFunction) -> Result<Vec<GridFunction>> {
        evolve_series(u0, self.alpha, &self.times, self.path)
    }

    /// Largest L-infinity gap between the spectral and kernel paths over the
    /// output grid, each evaluated directly from `u0`.
    pub fn path_disagreement(&self, u0: &GridFunction) -> Result<f64> {
        let mut worst = 0.0f64;
        for &t in &self.times {
            let a = evolve_with(u0, self.alpha, t, EvolutionPath::Spectral)?;
            let b = evolve_with(u0, self.alpha, t, EvolutionPath::Kernel)?;
            worst = worst.max(a.sub(&b)?.max_abs());
        }
        Ok(worst)
    }
}
