//! The finite model `B_N / B_{-M}` of a p-adic ball.
//!
//! A point of the ball, resolved up to cosets of the small ball `B_{-M}`, is
//! represented by an integer `n` in `[0, S)` with `S = p^(N+M)`: the coset of
//! `x = p^(-N) n`. Addition of cosets is addition of indices mod `S`. The dual
//! group `Q_p / B_{-N}`, cut off at frequencies of modulus `p^M`, is indexed
//! the same way through `xi = p^(-M) k`. The pairing of a point and a frequency
//! is then `exp(2 pi i n k / S)`.
//!
//! Absolute values are encoded by their *level*: `|x|_p = p^level`. The zero
//! coset and the trivial frequency have no level.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_alpha, Error, Result};

/// Default cap on the group order `S`.
pub const DEFAULT_ORDER_CAP: usize = 1 << 20;

/// `v_p(n)` for `n > 0`.
pub fn valuation(mut n: u64, p: u64) -> u32 {
    debug_assert!(n > 0 && p >= 2);
    let mut v = 0;
    while n.is_multiple_of(p) {
        n /= p;
        v += 1;
    }
    v
}

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= p {
        if p.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// `p^e` for a (possibly negative) integer exponent.
#[inline]
pub fn pow_level(p: u64, e: i32) -> f64 {
    (p as f64).powi(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BallModel {
    p: u64,
    radius: i32,
    resolution: i32,
    order: usize,
}

impl BallModel {
    pub fn new(p: u64, radius: i32, resolution: i32) -> Result<Self> {
        Self::with_cap(p, radius, resolution, DEFAULT_ORDER_CAP)
    }

    /// Builds the model for `B_radius / B_{-resolution}`, failing when
    /// `p^(radius + resolution)` exceeds `cap`.
    pub fn with_cap(p: u64, radius: i32, resolution: i32, cap: usize) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::InvalidModel(format!("p = {p} is not prime")));
        }
        let levels = radius as i64 + resolution as i64;
        if levels < 0 {
            return Err(Error::InvalidModel(format!(
                "need N + M >= 0, got N = {radius}, M = {resolution}"
            )));
        }
        let mut order: usize = 1;
        for _ in 0..levels {
            order = order
                .checked_mul(p as usize)
                .filter(|&o| o <= cap)
                .ok_or(Error::CapExceeded { p, levels, cap })?;
        }
        if order > cap {
            return Err(Error::CapExceeded { p, levels, cap });
        }
        Ok(Self {
            p,
            radius,
            resolution,
            order,
        })
    }

    #[inline]
    pub fn p(&self) -> u64 {
        self.p
    }

    /// `N`: the ball is `{|x|_p <= p^N}`.
    #[inline]
    pub fn radius(&self) -> i32 {
        self.radius
    }

    /// `M`: functions are constant on cosets of `B_{-M}`.
    #[inline]
    pub fn resolution(&self) -> i32 {
        self.resolution
    }

    /// Group order `S = p^(N+M)`.
    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of base-p digits of an index, `N + M`.
    #[inline]
    pub fn digits(&self) -> u32 {
        (self.radius + self.resolution) as u32
    }

    /// Haar measure of one coset, `p^(-M)`.
    #[inline]
    pub fn coset_measure(&self) -> f64 {
        pow_level(self.p, -self.resolution)
    }

    /// Haar measure of the ball, `p^N`.
    #[inline]
    pub fn ball_measure(&self) -> f64 {
        pow_level(self.p, self.radius)
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index < self.order {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index,
                order: self.order,
            })
        }
    }

    /// Level `m` with `|p^(-N) n|_p = p^m`, or `None` for the zero coset.
    #[inline]
    pub fn point_level(&self, n: usize) -> Option<i32> {
        let n = n % self.order;
        (n != 0).then(|| self.radius - valuation(n as u64, self.p) as i32)
    }

    /// Level `s` with `|p^(-M) k|_p = p^s`, or `None` for the trivial frequency.
    #[inline]
    pub fn freq_level(&self, k: usize) -> Option<i32> {
        let k = k % self.order;
        (k != 0).then(|| self.resolution - valuation(k as u64, self.p) as i32)
    }

    /// `|x|_p` of the coset with index `n`; the zero coset yields `0`.
    pub fn point_abs(&self, n: usize) -> Result<f64> {
        self.check_index(n)?;
        Ok(self.point_level(n).map_or(0.0, |m| pow_level(self.p, m)))
    }

    /// `|xi|_p` of the frequency with index `k`; the trivial frequency yields `0`.
    pub fn freq_abs(&self, k: usize) -> Result<f64> {
        self.check_index(k)?;
        Ok(self.freq_level(k).map_or(0.0, |s| pow_level(self.p, s)))
    }

    /// `chi(x xi) = exp(2 pi i n k / S)`.
    pub fn character(&self, n: usize, k: usize) -> Result<Complex64> {
        self.check_index(n)?;
        self.check_index(k)?;
        Ok(self.phase((n as u128 * k as u128 % self.order as u128) as usize))
    }

    /// `exp(2 pi i j / S)` for a phase index already reduced mod `S`.
    #[inline]
    pub(crate) fn phase(&self, j: usize) -> Complex64 {
        let theta = 2.0 * PI * j as f64 / self.order as f64;
        let (s, c) = theta.sin_cos();
        Complex64::new(c, s)
    }

    /// The same ball at resolution `M + levels`.
    pub fn refined(&self, levels: u32) -> Result<Self> {
        Self::with_cap(
            self.p,
            self.radius,
            self.resolution + levels as i32,
            DEFAULT_ORDER_CAP,
        )
    }

    /// The same ball at resolution `M - levels`.
    pub fn coarsened(&self, levels: u32) -> Result<Self> {
        if self.digits() < levels {
            return Err(Error::InvalidModel(format!(
                "cannot coarsen by {levels}: resolution would drop below -N"
            )));
        }
        Self::new(self.p, self.radius, self.resolution - levels as i32)
    }

    /// A larger ball `B_{N+levels}` at the same resolution.
    pub fn enlarged(&self, levels: u32) -> Result<Self> {
        Self::new(self.p, self.radius + levels as i32, self.resolution)
    }
}

/// `int_{|y|_p = p^l} chi(y xi) dy` where `|xi|_p = p^s` (`None` for `xi = 0`).
pub fn sphere_character_integral(p: u64, l: i32, s: Option<i32>) -> f64 {
    let pf = p as f64;
    match s {
        None => pow_level(p, l) * (1.0 - 1.0 / pf),
        Some(s) if l + s <= 0 => pow_level(p, l) * (1.0 - 1.0 / pf),
        Some(s) if l + s == 1 => -pow_level(p, l - 1),
        Some(_) => 0.0,
    }
}

/// `lambda = (p - 1) / (p^(alpha+1) - 1) * p^(alpha (1 - N))`, the smallest
/// eigenvalue of the ball operator.
pub fn lambda_value(p: u64, alpha: f64, radius: i32) -> f64 {
    let pf = p as f64;
    (pf - 1.0) / (pf.powf(alpha + 1.0) - 1.0) * pf.powf(alpha * (1.0 - radius as f64))
}

/// Second closed form of `lambda`: `(1 - 1/p) / (1 - p^(-alpha-1)) * p^(-alpha N)`.
pub fn lambda_value_alt(p: u64, alpha: f64, radius: i32) -> f64 {
    let pf = p as f64;
    (1.0 - 1.0 / pf) / (1.0 - pf.powf(-alpha - 1.0)) * pf.powf(-alpha * radius as f64)
}

/// `a_p = (1 - p^alpha) / (1 - p^(-alpha-1))`, negative for `alpha > 0`.
pub fn coefficient_ap(p: u64, alpha: f64) -> f64 {
    let pf = p as f64;
    (1.0 - pf.powf(alpha)) / (1.0 - pf.powf(-alpha - 1.0))
}

/// Scalar constants attached to an operator order on a given ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub alpha: f64,
    pub lambda: f64,
    pub a_p: f64,
}

impl Constants {
    pub fn new(p: u64, alpha: f64, radius: i32) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            alpha,
            lambda: lambda_value(p, alpha, radius),
            a_p: coefficient_ap(p, alpha),
        })
    }

    pub fn for_model(model: &BallModel, alpha: f64) -> Result<Self> {
        Self::new(model.p(), alpha, model.radius())
    }
}
