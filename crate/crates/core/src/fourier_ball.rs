//! Fourier transform on the compact group `B_N` at resolution `M`.
//!
//! With `S = p^(N+M)` the transform is
//!
//! ```text
//! forward:  c[k] = p^(-N-M) * sum_n exp(+2 pi i n k / S) u[n]
//! inverse:  u[n] = sum_k exp(-2 pi i n k / S) c[k]
//! ```
//!
//! Note the sign: the forward direction uses `chi(x xi)` with a *plus* sign,
//! the opposite of most FFT libraries. The normalization follows from the
//! probability measure `p^(-N) dx` on the ball and the counting measure with
//! weight one on the dual group; Plancherel reads
//! `p^(-N) int |u|^2 dx = sum_k |c[k]|^2`.
//!
//! The fast path uses `rustfft`; a direct O(S^2) transform is kept for testing.

use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::ball_model::BallModel;
use crate::error::{Error, Result};
use crate::function_space::GridFunction;

/// Coefficients `hat u(xi_k)` over the dual-group frequencies `k in [0, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFunction {
    model: BallModel,
    coeffs: Vec<Complex64>,
}

impl SpectralFunction {
    pub fn new(model: BallModel, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != model.order() {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients, got {}",
                model.order(),
                coeffs.len()
            )));
        }
        Ok(Self { model, coeffs })
    }

    pub fn delta(model: BallModel, k: usize, value: Complex64) -> Result<Self> {
        if k >= model.order() {
            return Err(Error::IndexOutOfRange {
                index: k,
                order: model.order(),
            });
        }
        let mut coeffs = vec![Complex64::new(0.0, 0.0); model.order()];
        coeffs[k] = value;
        Ok(Self { model, coeffs })
    }

    pub fn model(&self) -> &BallModel {
        &self.model
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Multiplies coefficient `k` by `multiplier(k)`.
    pub fn scale_by(&mut self, multiplier: impl Fn(usize) -> f64) {
        for (k, c) in self.coeffs.iter_mut().enumerate() {
            *c *= multiplier(k);
        }
    }
}

/// Unnormalized transform `X[k] = sum_n exp(sign 2 pi i n k / S) x[n]` in place.
fn transform(data: &mut [Complex64], plus: bool) {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    let fft = {
        let mut planner = PLANNER
            .get_or_init(|| Mutex::new(FftPlanner::new()))
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        // The library's forward direction carries the minus sign.
        if plus {
            planner.plan_fft_inverse(data.len())
        } else {
            planner.plan_fft_forward(data.len())
        }
    };
    fft.process(data);
}

pub fn forward(u: &GridFunction) -> SpectralFunction {
    let model = *u.model();
    let mut data: Vec<Complex64> = u.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut data, true);
    let scale = 1.0 / model.order() as f64;
    for c in &mut data {
        *c *= scale;
    }
    SpectralFunction {
        model,
        coeffs: data,
    }
}

/// Inverse transform keeping the complex values.
pub fn inverse_complex(f: &SpectralFunction) -> Vec<Complex64> {
    let mut data = f.coeffs.clone();
    transform(&mut data, false);
    data
}

/// Inverse transform, keeping the real part. Exact for coefficients of a real
/// function (`c[-k] = conj(c[k])`).
pub fn inverse(f: &SpectralFunction) -> GridFunction {
    let values = inverse_complex(f).into_iter().map(|c| c.re).collect();
    GridFunction::new(f.model, values).expect("length preserved")
}

/// Direct O(S^2) evaluation of the forward transform.
pub fn forward_direct(u: &GridFunction) -> SpectralFunction {
    let model = *u.model();
    let s = model.order();
    let scale = 1.0 / s as f64;
    let coeffs = (0..s)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, &v) in u.values().iter().enumerate() {
                acc += model.phase((n as u128 * k as u128 % s as u128) as usize) * v;
            }
            acc * scale
        })
        .collect();
    SpectralFunction { model, coeffs }
}

/// Direct O(S^2) evaluation of the inverse transform.
pub fn inverse_direct(f: &SpectralFunction) -> Vec<Complex64> {
    let model = f.model;
    let s = model.order();
    (0..s)
        .map(|n| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, c) in f.coeffs.iter().enumerate() {
                acc += model
                    .phase((n as u128 * k as u128 % s as u128) as usize)
                    .conj()
                    * c;
            }
            acc
        })
        .collect()
}
