//! Locally constant functions on `B_N` stored as values on cosets of `B_{-M}`.
//!
//! Integration uses the unnormalized Haar measure `dx` (the ball has mass
//! `p^N`, each coset `p^(-M)`).

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ball_model::{valuation, BallModel};
use crate::error::{Error, Result};
use crate::fourier_ball;

/// Above this group order `convolve` goes through the FFT.
const DIRECT_CONVOLUTION_MAX: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    model: BallModel,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(model: BallModel, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.order() {
            return Err(Error::InvalidParameter(format!(
                "expected {} values, got {}",
                model.order(),
                values.len()
            )));
        }
        Ok(Self { model, values })
    }

    pub fn constant(model: BallModel, c: f64) -> Self {
        Self {
            model,
            values: vec![c; model.order()],
        }
    }

    pub fn zeros(model: BallModel) -> Self {
        Self::constant(model, 0.0)
    }

    pub fn from_fn(model: BallModel, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            model,
            values: (0..model.order()).map(f).collect(),
        }
    }

    /// The function equal to `1` on the coset `n` and `0` elsewhere.
    pub fn coset_indicator(model: BallModel, n: usize) -> Result<Self> {
        if n >= model.order() {
            return Err(Error::IndexOutOfRange {
                index: n,
                order: model.order(),
            });
        }
        Ok(Self::from_fn(model, |i| if i == n { 1.0 } else { 0.0 }))
    }

    #[inline]
    pub fn model(&self) -> &BallModel {
        &self.model
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn check_same_model(&self, other: &Self) -> Result<()> {
        if self.model == other.model {
            Ok(())
        } else {
            Err(Error::ModelMismatch)
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            model: self.model,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_model(other)?;
        Ok(Self {
            model: self.model,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `int_{B_N} u dx = p^(-M) sum_n u[n]`.
    pub fn integral(&self) -> f64 {
        self.model.coset_measure() * self.values.iter().sum::<f64>()
    }

    /// `L^gamma(B_N)` norm; pass `f64::INFINITY` for the sup norm.
    pub fn lp_norm(&self, gamma: f64) -> Result<f64> {
        if gamma.is_nan() || gamma < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "norm exponent must be >= 1, got {gamma}"
            )));
        }
        if gamma.is_infinite() {
            return Ok(self.max_abs());
        }
        let sum: f64 = if gamma == 1.0 {
            self.values.iter().map(|v| v.abs()).sum()
        } else if gamma == 2.0 {
            self.values.iter().map(|v| v * v).sum()
        } else {
            self.values.iter().map(|v| v.abs().powf(gamma)).sum()
        };
        Ok((self.model.coset_measure() * sum).powf(1.0 / gamma))
    }

    /// Group convolution `(u * v)(x) = int_{B_N} u(x - y) v(y) dy`.
    pub fn convolve(&self, other: &Self) -> Result<Self> {
        self.check_same_model(other)?;
        if self.model.order() <= DIRECT_CONVOLUTION_MAX {
            return self.convolve_direct(other);
        }
        let fu = fourier_ball::forward(self);
        let fv = fourier_ball::forward(other);
        let scale = self.model.ball_measure();
        let coeffs = fu
            .coeffs()
            .iter()
            .zip(fv.coeffs())
            .map(|(a, b)| a * b * scale)
            .collect();
        Ok(fourier_ball::inverse(&fourier_ball::SpectralFunction::new(
            self.model, coeffs,
        )?))
    }

    /// The O(S^2) convolution sum.
    pub fn convolve_direct(&self, other: &Self) -> Result<Self> {
        self.check_same_model(other)?;
        let s = self.model.order();
        let w = self.model.coset_measure();
        let values = (0..s)
            .map(|n| {
                let mut acc = 0.0;
                for m in 0..s {
                    acc += self.values[(n + s - m) % s] * other.values[m];
                }
                w * acc
            })
            .collect();
        Ok(Self {
            model: self.model,
            values,
        })
    }

    /// Moves to resolution `M + levels`, copying each value onto its sub-cosets.
    pub fn refine(&self, levels: u32) -> Result<Self> {
        let fine = self.model.refined(levels)?;
        let s = self.model.order();
        Ok(Self::from_fn(fine, |n| self.values[n % s]))
    }

    /// Moves to resolution `M - levels`, averaging over sub-cosets.
    pub fn coarsen(&self, levels: u32) -> Result<Self> {
        let coarse = self.model.coarsened(levels)?;
        let s = coarse.order();
        let fan = self.model.order() / s;
        let mut values = vec![0.0; s];
        for (n, v) in self.values.iter().enumerate() {
            values[n % s] += v;
        }
        for v in &mut values {
            *v /= fan as f64;
        }
        Ok(Self {
            model: coarse,
            values,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,valuation,value\n");
        let radius = self.model.radius();
        for (n, v) in self.values.iter().enumerate() {
            let val = if n == 0 {
                "inf".to_string()
            } else {
                (valuation(n as u64, self.model.p()) as i32 - radius).to_string()
            };
            // `{:?}` prints the shortest decimal that round-trips exactly.
            let _ = writeln!(out, "{n},{val},{v:?}");
        }
        out
    }

    pub fn from_csv(model: BallModel, text: &str) -> Result<Self> {
        let mut values = vec![None; model.order()];
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!(
                    "line {}: expected 3 columns",
                    line_no + 1
                )));
            }
            let n: usize = fields[0]
                .parse()
                .map_err(|e| Error::Format(format!("line {}: bad index: {e}", line_no + 1)))?;
            let v: f64 = fields[2]
                .parse()
                .map_err(|e| Error::Format(format!("line {}: bad value: {e}", line_no + 1)))?;
            let slot = values.get_mut(n).ok_or(Error::IndexOutOfRange {
                index: n,
                order: model.order(),
            })?;
            *slot = Some(v);
        }
        let values = values
            .into_iter()
            .enumerate()
            .map(|(n, v)| v.ok_or_else(|| Error::Format(format!("missing value for index {n}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(model, values)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let model = BallModel::new(raw.model.p(), raw.model.radius(), raw.model.resolution())?;
        if model != raw.model {
            return Err(Error::Format("inconsistent model block".into()));
        }
        Self::new(model, raw.values)
    }
}

/// Standard initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant {
        value: f64,
    },
    /// Indicator of the sub-ball `x0 + B_radius`, with `x0` given by its coset index.
    Indicator {
        center: usize,
        radius: i32,
    },
    /// Independent uniform values in `[lo, hi)` on each coset.
    Random {
        seed: u64,
        lo: f64,
        hi: f64,
    },
    /// `1 + indicator(x0 + B_radius)`.
    PositiveBump {
        center: usize,
        radius: i32,
    },
}

fn sub_ball_indicator(model: BallModel, center: usize, radius: i32) -> Result<Vec<f64>> {
    if center >= model.order() {
        return Err(Error::IndexOutOfRange {
            index: center,
            order: model.order(),
        });
    }
    if radius < -model.resolution() || radius > model.radius() {
        return Err(Error::InvalidParameter(format!(
            "sub-ball radius {radius} outside [{}, {}]",
            -model.resolution(),
            model.radius()
        )));
    }
    let s = model.order();
    Ok((0..s)
        .map(|n| {
            let inside = match model.point_level((n + s - center) % s) {
                None => true,
                Some(level) => level <= radius,
            };
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

pub fn make_initial(model: BallModel, spec: &InitialSpec) -> Result<GridFunction> {
    match *spec {
        InitialSpec::Constant { value } => Ok(GridFunction::constant(model, value)),
        InitialSpec::Indicator { center, radius } => {
            GridFunction::new(model, sub_ball_indicator(model, center, radius)?)
        }
        InitialSpec::PositiveBump { center, radius } => {
            let ind = sub_ball_indicator(model, center, radius)?;
            GridFunction::new(model, ind.into_iter().map(|v| 1.0 + v).collect())
        }
        InitialSpec::Random { seed, lo, hi } => {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::InvalidParameter(format!(
                    "need lo < hi, got [{lo}, {hi})"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(GridFunction::from_fn(model, |_| rng.gen_range(lo..hi)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model(p: u64, n: i32, m: i32) -> BallModel {
        BallModel::new(p, n, m).unwrap()
    }

    fn random(model: BallModel, seed: u64) -> GridFunction {
        make_initial(
            model,
            &InitialSpec::Random {
                seed,
                lo: -1.0,
                hi: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn integral_examples() {
        assert_relative_eq!(GridFunction::constant(model(2, 0, 3), 1.0).integral(), 1.0);
        assert_relative_eq!(GridFunction::constant(model(3, 1, 1), 1.0).integral(), 3.0);
        let ind = GridFunction::coset_indicator(model(2, 0, 3), 0).unwrap();
        assert_relative_eq!(ind.integral(), 0.125);
    }

    #[test]
    fn lp_norm_examples() {
        let one = GridFunction::constant(model(2, 0, 3), 1.0);
        assert_relative_eq!(one.lp_norm(2.0).unwrap(), 1.0);
        let m = model(3, 2, 1);
        let one = GridFunction::constant(m, 1.0);
        for gamma in [1.0, 1.5, 2.0, 3.0, 7.0] {
            assert_relative_eq!(
                one.lp_norm(gamma).unwrap(),
                9f64.powf(1.0 / gamma),
                max_relative = 1e-14
            );
        }
        assert_eq!(one.lp_norm(f64::INFINITY).unwrap(), 1.0);
        let ind = GridFunction::coset_indicator(model(2, 0, 3), 5).unwrap();
        assert_relative_eq!(ind.lp_norm(1.0).unwrap(), 0.125);
        assert!(one.lp_norm(0.5).is_err());
    }

    #[test]
    fn holder_consistency() {
        let m = model(3, 1, 2);
        let u = random(m, 3);
        let gammas = [1.0, 1.5, 2.0, 4.0, f64::INFINITY];
        for (i, &g) in gammas.iter().enumerate() {
            for &g2 in &gammas[i..] {
                let factor = 3f64.powf(1.0 / g - if g2.is_infinite() { 0.0 } else { 1.0 / g2 });
                assert!(u.lp_norm(g).unwrap() <= factor * u.lp_norm(g2).unwrap() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn convolution_examples() {
        let m = model(2, 1, 2);
        let one = GridFunction::constant(m, 1.0);
        let c = one.convolve(&one).unwrap();
        for v in c.values() {
            assert_relative_eq!(*v, 2.0, max_relative = 1e-14);
        }
        let delta = GridFunction::coset_indicator(m, 0).unwrap().scale(4.0);
        let u = random(m, 1);
        assert_eq!(u.convolve(&delta).unwrap(), u);
    }

    #[test]
    fn convolution_matches_double_loop() {
        let m = model(2, 0, 3);
        let u = random(m, 10);
        let v = random(m, 11);
        let c = u.convolve(&v).unwrap();
        for n in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                acc += u.values()[(n + 8 - y) % 8] * v.values()[y] / 8.0;
            }
            assert!((c.values()[n] - acc).abs() < 1e-13);
        }
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let m = model(3, 0, 6);
        let u = random(m, 4);
        let v = random(m, 5);
        let a = u.convolve(&v).unwrap();
        let b = u.convolve_direct(&v).unwrap();
        let err = a.sub(&b).unwrap().max_abs();
        assert!(err < 1e-12, "err = {err}");
        assert!(matches!(
            u.convolve(&random(model(3, 1, 5), 0)),
            Err(Error::ModelMismatch)
        ));
    }

    #[test]
    fn refine_and_coarsen() {
        let m = model(2, 0, 2);
        let ind = GridFunction::coset_indicator(m, 1).unwrap();
        let fine = ind.refine(1).unwrap();
        assert_eq!(fine.values(), &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(fine.coarsen(1).unwrap(), ind);
        assert!(GridFunction::zeros(model(2, 0, 20)).refine(1).is_err());
    }

    #[test]
    fn coarsen_below_minus_radius_fails() {
        let u = GridFunction::constant(model(2, 1, -1), 1.0);
        assert!(u.coarsen(1).is_err());
    }

    #[test]
    fn initial_examples() {
        let m = model(2, 0, 2);
        let ind = make_initial(
            m,
            &InitialSpec::Indicator {
                center: 0,
                radius: -1,
            },
        )
        .unwrap();
        assert_eq!(ind.values(), &[1.0, 0.0, 1.0, 0.0]);
        let c = make_initial(m, &InitialSpec::Constant { value: 5.0 }).unwrap();
        assert_eq!(c.values(), &[5.0; 4]);
        let spec = InitialSpec::Random {
            seed: 42,
            lo: 0.0,
            hi: 1.0,
        };
        assert_eq!(
            make_initial(m, &spec).unwrap(),
            make_initial(m, &spec).unwrap()
        );
        let bump = make_initial(
            m,
            &InitialSpec::PositiveBump {
                center: 1,
                radius: -1,
            },
        )
        .unwrap();
        assert_eq!(bump.values(), &[1.0, 2.0, 1.0, 2.0]);
        assert!(make_initial(
            m,
            &InitialSpec::Indicator {
                center: 0,
                radius: -3
            }
        )
        .is_err());
        assert!(make_initial(
            m,
            &InitialSpec::Indicator {
                center: 9,
                radius: 0
            }
        )
        .is_err());
        assert!(make_initial(
            m,
            &InitialSpec::Random {
                seed: 0,
                lo: 1.0,
                hi: 1.0
            }
        )
        .is_err());
    }

    #[test]
    fn sub_ball_indicator_is_idempotent_under_level_change() {
        let m = model(3, 1, 3);
        for radius in -3..=1 {
            let ind = make_initial(m, &InitialSpec::Indicator { center: 7, radius }).unwrap();
            // Coarsen to resolution -radius, where the sub-ball is one coset, then refine back.
            let levels = (m.resolution() + radius) as u32;
            let back = ind.coarsen(levels).unwrap().refine(levels).unwrap();
            assert_eq!(back, ind);
        }
    }

    #[test]
    fn csv_and_json_round_trip() {
        let m = model(3, 1, 2);
        let u = random(m, 99).map(|v| v * 1e-7 + 1.0 / 3.0);
        let csv = u.to_csv();
        assert!(csv.starts_with("n,valuation,value\n0,inf,"));
        assert!(csv.lines().nth(2).unwrap().starts_with("1,-1,"));
        let back = GridFunction::from_csv(m, &csv).unwrap();
        assert_eq!(back, u);
        let back = GridFunction::from_json(&u.to_json().unwrap()).unwrap();
        assert_eq!(back, u);
        assert!(GridFunction::from_csv(m, "n,valuation,value\n0,inf,1\n").is_err());
    }

    proptest! {
        #[test]
        fn refine_preserves_integral_and_coarsen_inverts(seed in 0u64..1000, levels in 1u32..3) {
            let m = model(3, 0, 2);
            let u = random(m, seed);
            let fine = u.refine(levels).unwrap();
            prop_assert!((fine.integral() - u.integral()).abs() < 1e-13);
            let back = fine.coarsen(levels).unwrap();
            prop_assert!((back.integral() - u.integral()).abs() < 1e-13);
            prop_assert!(back.sub(&u).unwrap().max_abs() < 1e-15);
        }

        #[test]
        fn convolution_commutes(seed in 0u64..1000) {
            let m = model(2, 1, 3);
            let u = random(m, seed);
            let v = random(m, seed + 1);
            let a = u.convolve(&v).unwrap();
            let b = v.convolve(&u).unwrap();
            prop_assert!(a.sub(&b).unwrap().max_abs() < 1e-13);
        }

        #[test]
        fn csv_round_trip_is_bit_exact(values in proptest::collection::vec(-1e300f64..1e300, 9)) {
            let m = model(3, 1, 1);
            let u = GridFunction::new(m, values).unwrap();
            prop_assert_eq!(GridFunction::from_csv(m, &u.to_csv()).unwrap(), u);
        }
    }
}
