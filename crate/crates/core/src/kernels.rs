//! Pointwise heat and Green kernels, and the resolvent.
//!
//! Every kernel here is radial, so pointwise evaluators take the level `m`
//! of `|x|_p = p^m` (or the origin) rather than a point. Sums over spheres of
//! the dual group reduce to finite geometric-type sums by the sphere
//! character integral.
//!
//! Conventions: the ball semigroup is `T_N(t) = exp(-t (D - lambda))`, so
//! constants are fixed and every other mode decays; the resolvent is
//! `(D - lambda + mu)^(-1)`, the Laplace transform of `T_N`.

use serde::{Deserialize, Serialize};

use crate::ball_model::{pow_level, BallModel, Constants};
use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::fourier_ball;
use crate::function_space::GridFunction;
use crate::vladimirov::SpectralMultiplier;

/// Relative size below which a series tail is dropped.
pub const EPS_TAIL: f64 = 1e-17;

/// Lowest sphere used when integrating a radial kernel over the ball.
pub const SPHERE_CUTOFF: i32 = -40;

/// `exp(-y)` is exactly zero in f64 beyond this.
const EXP_UNDERFLOW: f64 = 746.0;

const C_SERIES_MAX_TERMS: usize = 100_000;

/// `max term / |sum|` above which the alternating c-series is rejected.
const C_SERIES_MAX_CANCELLATION: f64 = 1e16;

/// Where a radial kernel is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Radius {
    Origin,
    /// `|x|_p = p^m`.
    Level(i32),
}

impl Radius {
    /// The radius of the point with index `n` in `model`.
    pub fn of_point(model: &BallModel, n: usize) -> Self {
        model.point_level(n).map_or(Radius::Origin, Radius::Level)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "time must be positive and finite, got {t}"
        )))
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu.is_finite() && mu > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "mu must be positive and finite, got {mu}"
        )))
    }
}

/// Sum of `(1 - 1/p) p^l exp(-t p^(alpha l))` over `l <= top`, dropping the
/// lower tail once its bound `p^l` is negligible.
fn lower_shell_sum(p: u64, alpha: f64, t: f64, top: i32) -> f64 {
    let pf = p as f64;
    let shell = 1.0 - 1.0 / pf;
    let mut acc = 0.0;
    let mut l = top;
    loop {
        let pl = pow_level(p, l);
        let y = t * pf.powf(alpha * l as f64);
        if y < EXP_UNDERFLOW {
            acc += shell * pl * (-y).exp();
        }
        let tail = pow_level(p, l - 1);
        if (acc > 0.0 && tail < EPS_TAIL * acc) || tail < f64::MIN_POSITIVE {
            return acc;
        }
        l -= 1;
    }
}

/// The heat kernel of `D^alpha` on all of `Q_p`:
/// `Z(t, p^m) = sum_{l <= -m} (1 - 1/p) p^l e^(-t p^(alpha l)) - p^(-m) e^(-t p^(alpha (1 - m)))`.
pub fn heat_kernel_global(p: u64, alpha: f64, t: f64, r: Radius) -> Result<f64> {
    Constants::new(p, alpha, 0)?;
    check_time(t)?;
    let pf = p as f64;
    match r {
        Radius::Level(m) => {
            let last = (-t * pf.powf(alpha * (1 - m) as f64)).exp();
            Ok(lower_shell_sum(p, alpha, t, -m) - pow_level(p, -m) * last)
        }
        Radius::Origin => {
            let mut top = 0;
            while t * pf.powf(alpha * top as f64) < EXP_UNDERFLOW {
                top += 1;
            }
            Ok(lower_shell_sum(p, alpha, t, top))
        }
    }
}

/// Result of summing the c-series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CSeries {
    pub value: f64,
    pub terms: usize,
    /// Largest term magnitude over the magnitude of the sum.
    pub cancellation: f64,
}

/// Heat, Green and resolvent evaluators for a fixed `(p, N, alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEvaluator {
    p: u64,
    radius: i32,
    alpha: f64,
    lambda: f64,
}

impl KernelEvaluator {
    pub fn new(p: u64, radius: i32, alpha: f64) -> Result<Self> {
        // Validates p and N through the model constructor.
        BallModel::new(p, radius, -radius)?;
        let c = Constants::new(p, alpha, radius)?;
        Ok(Self {
            p,
            radius,
            alpha,
            lambda: c.lambda,
        })
    }

    pub fn for_model(model: &BallModel, alpha: f64) -> Result<Self> {
        Self::new(model.p(), model.radius(), alpha)
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn radius(&self) -> i32 {
        self.radius
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn check_radius(&self, r: Radius) -> Result<()> {
        match r {
            Radius::Level(m) if m > self.radius => Err(Error::InvalidParameter(format!(
                "level {m} lies outside the ball of radius p^{}",
                self.radius
            ))),
            _ => Ok(()),
        }
    }

    /// `c(t) = p^-N - p^-N (1 - 1/p) e^(lambda t) sum_n (-x)^n / (n! (1 - p^(-alpha n - 1)))`
    /// with `x = t p^(-N alpha)`, summed in double-double.
    pub fn c_series(&self, t: f64) -> Result<CSeries> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "time must be nonnegative, got {t}"
            )));
        }
        let pf = self.p as f64;
        let x = t * pf.powf(-self.alpha * self.radius as f64);
        let one = Dd::from_f64(1.0);
        let mut power = one;
        let mut sum = Dd::ZERO;
        let mut max_term = 0.0f64;
        let mut n = 0usize;
        loop {
            let w = pf.powf(-self.alpha * n as f64 - 1.0);
            let term = power.div(Dd::sum_of(1.0, -w));
            sum = sum.add(term);
            max_term = max_term.max(term.hi.abs());
            if !term.hi.is_finite() {
                return Err(Error::NoConvergence {
                    what: format!("c(t) series at t = {t}"),
                    residual: f64::INFINITY,
                });
            }
            n += 1;
            if (n as f64) > x && (term.hi == 0.0 || term.hi.abs() < 1e-34 * sum.hi.abs()) {
                break;
            }
            if n >= C_SERIES_MAX_TERMS {
                return Err(Error::NoConvergence {
                    what: format!("c(t) series at t = {t}"),
                    residual: term.hi.abs(),
                });
            }
            power = power.mul_f64(-x).div(Dd::from_f64(n as f64));
        }
        let cancellation = max_term / sum.hi.abs();
        if cancellation > C_SERIES_MAX_CANCELLATION {
            return Err(Error::Consistency(format!(
                "c(t) series at t = {t} cancels by a factor {cancellation:e}"
            )));
        }
        let scale = pow_level(self.p, -self.radius);
        let growth = (self.lambda * t).exp() * (1.0 - 1.0 / pf);
        let value = one.sub(sum.mul_f64(growth)).mul_f64(scale).to_f64();
        Ok(CSeries {
            value,
            terms: n,
            cancellation,
        })
    }

    /// `Z_N(t, x)` by the finite character sum over the dual of the ball.
    pub fn heat_kernel_ball(&self, t: f64, r: Radius) -> Result<f64> {
        check_time(t)?;
        self.check_radius(r)?;
        let pf = self.p as f64;
        let shell = 1.0 - 1.0 / pf;
        let lt = self.lambda * t;
        let decay = |l: i32| (lt - t * pf.powf(self.alpha * l as f64)).exp();
        let mut acc = 0.0;
        match r {
            Radius::Level(m) => {
                for l in 1 - self.radius..=-m {
                    acc += shell * pow_level(self.p, l) * decay(l);
                }
                acc -= pow_level(self.p, -m) * decay(1 - m);
            }
            Radius::Origin => {
                let mut l = 1 - self.radius;
                while t * pf.powf(self.alpha * l as f64) - lt < EXP_UNDERFLOW {
                    acc += shell * pow_level(self.p, l) * decay(l);
                    l += 1;
                }
            }
        }
        Ok(pow_level(self.p, -self.radius) + acc)
    }

    /// `Z_N(t, x) = e^(lambda t) Z(t, x) + c(t)`.
    pub fn heat_kernel_ball_via_c(&self, t: f64, r: Radius) -> Result<f64> {
        check_time(t)?;
        self.check_radius(r)?;
        let z = heat_kernel_global(self.p, self.alpha, t, r)?;
        Ok((self.lambda * t).exp() * z + self.c_series(t)?.value)
    }

    /// `int_{B_N} f(|x|) dx` by sphere summation down to [`SPHERE_CUTOFF`],
    /// with the innermost ball weighted by the value at the origin.
    pub fn integrate_radial(&self, f: impl Fn(Radius) -> Result<f64>) -> Result<f64> {
        self.integrate_radial_below(self.radius, f)
    }

    /// `int_{B_top} f(|x|) dx` by sphere summation, for `top <= N`.
    pub fn integrate_radial_below(
        &self,
        top: i32,
        f: impl Fn(Radius) -> Result<f64>,
    ) -> Result<f64> {
        let shell = 1.0 - 1.0 / self.p as f64;
        let bottom = SPHERE_CUTOFF.min(top);
        let mut acc = f(Radius::Origin)? * pow_level(self.p, bottom - 1);
        for m in bottom..=top {
            acc += pow_level(self.p, m) * shell * f(Radius::Level(m))?;
        }
        Ok(acc)
    }

    /// `int_{B_N} Z_N(t, x) dx`, which should be 1.
    pub fn heat_kernel_ball_integral(&self, t: f64) -> Result<f64> {
        self.integrate_radial(|r| self.heat_kernel_ball(t, r))
    }

    fn green_denominator(&self, mu: f64, l: i32) -> f64 {
        (self.p as f64).powf(self.alpha * l as f64) - self.lambda + mu
    }

    /// Green kernel `K_mu(x)` for `x != 0`:
    /// `(1 - 1/p) sum_{l=1-N}^{-m} p^l / (p^(alpha l) - lambda + mu) - p^(-m) / (p^(alpha (1-m)) - lambda + mu)`.
    ///
    /// At the origin the kernel is finite only for `alpha > 1`, where it is
    /// given by [`KernelEvaluator::green_kernel_series`].
    pub fn green_kernel(&self, mu: f64, r: Radius) -> Result<f64> {
        check_mu(mu)?;
        self.check_radius(r)?;
        match r {
            Radius::Origin => self.green_kernel_series(mu),
            Radius::Level(m) => {
                let shell = 1.0 - 1.0 / self.p as f64;
                let mut acc = 0.0;
                for l in 1 - self.radius..=-m {
                    acc += shell * pow_level(self.p, l) / self.green_denominator(mu, l);
                }
                Ok(acc - pow_level(self.p, -m) / self.green_denominator(mu, 1 - m))
            }
        }
    }

    /// `K_mu(0) = (1 - 1/p) sum_{l >= 1-N} p^l / (p^(alpha l) - lambda + mu)`,
    /// convergent for `alpha > 1`.
    pub fn green_kernel_series(&self, mu: f64) -> Result<f64> {
        check_mu(mu)?;
        if self.alpha <= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "the Green kernel is unbounded at the origin for alpha = {} <= 1",
                self.alpha
            )));
        }
        let pf = self.p as f64;
        let shell = 1.0 - 1.0 / pf;
        let ratio = pf.powf(1.0 - self.alpha);
        let mut acc = 0.0;
        let mut l = 1 - self.radius;
        loop {
            acc += shell * pow_level(self.p, l) / self.green_denominator(mu, l);
            // Once p^(alpha l) >= 2 lambda every later term is at most
            // 2 (1 - 1/p) p^(l (1 - alpha)).
            let pa = pf.powf(self.alpha * (l + 1) as f64);
            if pa >= 2.0 * self.lambda {
                let tail = 2.0 * shell * ratio.powi(l + 1) / (1.0 - ratio);
                if tail < EPS_TAIL * acc.abs() {
                    return Ok(acc);
                }
            }
            l += 1;
            if l > 100_000 {
                return Err(Error::NoConvergence {
                    what: "Green kernel series at the origin".into(),
                    residual: acc,
                });
            }
        }
    }
}

/// `Z_N(t, .)` on `model` through its spectral coefficients
/// `p^-N exp(-t (m_k - lambda))`; the value on each coset is the coset
/// average of the pointwise kernel.
pub fn ball_kernel_gridfunction(model: &BallModel, alpha: f64, t: f64) -> Result<GridFunction> {
    check_time(t)?;
    let mult = SpectralMultiplier::new(*model, alpha)?;
    spectral_kernel(&mult, |m| (-t * (m - mult.lambda())).exp(), false)
}

/// `Z_N(t, .)` on `model` from the pointwise evaluator: nonzero cosets take
/// the value on their sphere, the zero coset is fixed by `int Z_N = 1`.
pub fn ball_kernel_pointwise_grid(model: &BallModel, alpha: f64, t: f64) -> Result<GridFunction> {
    let eval = KernelEvaluator::for_model(model, alpha)?;
    pointwise_grid(model, 1.0, |r| eval.heat_kernel_ball(t, r))
}

/// Truncated Fourier series `p^-N sum_{k != 0} chi / (m_k - lambda + mu)` of
/// the Green kernel on `model`.
pub fn green_kernel_fourier(model: &BallModel, alpha: f64, mu: f64) -> Result<GridFunction> {
    check_mu(mu)?;
    let mult = SpectralMultiplier::new(*model, alpha)?;
    spectral_kernel(&mult, |m| 1.0 / (m - mult.lambda() + mu), true)
}

/// `K_mu` on `model` from the pointwise evaluator, zero coset fixed by
/// `int K_mu = 0`.
pub fn green_kernel_gridfunction(model: &BallModel, alpha: f64, mu: f64) -> Result<GridFunction> {
    let eval = KernelEvaluator::for_model(model, alpha)?;
    check_mu(mu)?;
    pointwise_grid(model, 0.0, |r| eval.green_kernel(mu, r))
}

fn spectral_kernel(
    mult: &SpectralMultiplier,
    f: impl Fn(f64) -> f64,
    drop_constant: bool,
) -> Result<GridFunction> {
    let model = *mult.model();
    let scale = model.ball_measure().recip();
    let mut spec = fourier_ball::SpectralFunction::delta(model, 0, 1.0.into())?;
    let ev = mult.eigenvalues();
    for (k, c) in spec.coeffs_mut().iter_mut().enumerate() {
        *c = if k == 0 && drop_constant {
            0.0
        } else {
            scale * f(ev[k])
        }
        .into();
    }
    Ok(fourier_ball::inverse(&spec))
}

fn pointwise_grid(
    model: &BallModel,
    integral: f64,
    value: impl Fn(Radius) -> Result<f64>,
) -> Result<GridFunction> {
    let top = model.radius();
    let bottom = 1 - model.resolution();
    let mut by_level = Vec::with_capacity((top - bottom + 1).max(0) as usize);
    for m in bottom..=top {
        by_level.push(value(Radius::Level(m))?);
    }
    let cell = model.coset_measure();
    let mut values: Vec<f64> = (0..model.order())
        .map(|n| match model.point_level(n) {
            None => 0.0,
            Some(m) => by_level[(m - bottom) as usize],
        })
        .collect();
    let rest: f64 = values.iter().sum::<f64>() * cell;
    values[0] = (integral - rest) / cell;
    GridFunction::new(*model, values)
}

/// `(D - lambda + mu)^(-1) u = K_mu * u + mu^-1 p^-N int u`.
pub fn resolvent_apply(u: &GridFunction, alpha: f64, mu: f64) -> Result<GridFunction> {
    let model = *u.model();
    let k = green_kernel_gridfunction(&model, alpha, mu)?;
    let constant = u.integral() / (mu * model.ball_measure());
    Ok(k.convolve(u)?.map(|v| v + constant))
}

/// The resolvent computed by dividing Fourier coefficients by `m_k - lambda + mu`.
pub fn resolvent_spectral(u: &GridFunction, alpha: f64, mu: f64) -> Result<GridFunction> {
    check_mu(mu)?;
    let mult = SpectralMultiplier::new(*u.model(), alpha)?;
    let lambda = mult.lambda();
    mult.apply_fn(u, |m| 1.0 / (m - lambda + mu))
}

/// How `K_mu(x)` behaves as `x -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenRegime {
    /// `alpha > 1`: continuous at the origin.
    Continuous,
    /// `alpha = 1`: `O(|log |x||)`.
    Logarithmic,
    /// `alpha < 1`: `O(|x|^(alpha - 1))`.
    Power,
}

impl GreenRegime {
    pub fn of(alpha: f64) -> Self {
        if (alpha - 1.0).abs() < 1e-12 {
            GreenRegime::Logarithmic
        } else if alpha > 1.0 {
            GreenRegime::Continuous
        } else {
            GreenRegime::Power
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenRow {
    pub m: i32,
    pub abs_x: f64,
    pub value: f64,
    /// `1`, `max(1, |m|) log p` or `p^(m (alpha - 1))` depending on the regime.
    pub weight: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenReport {
    pub p: u64,
    pub radius: i32,
    pub alpha: f64,
    pub mu: f64,
    pub regime: GreenRegime,
    /// Ordered from the outermost sphere inwards.
    pub rows: Vec<GreenRow>,
    /// `max |K| / weight` over the rows.
    pub bound: f64,
    /// `K_mu(0)` when it exists.
    pub origin_value: Option<f64>,
}

/// Tabulates `|K_mu(p^m)|` against the regime's comparison weight for
/// `m` from `m_hi` down to `m_lo`.
pub fn green_estimates_report(
    p: u64,
    radius: i32,
    alpha: f64,
    mu: f64,
    m_lo: i32,
    m_hi: i32,
) -> Result<GreenReport> {
    let eval = KernelEvaluator::new(p, radius, alpha)?;
    if m_lo > m_hi || m_hi > radius {
        return Err(Error::InvalidParameter(format!(
            "level range [{m_lo}, {m_hi}] must be ordered and lie below N = {radius}"
        )));
    }
    let regime = GreenRegime::of(alpha);
    let pf = p as f64;
    let mut rows = Vec::new();
    for m in (m_lo..=m_hi).rev() {
        let value = eval.green_kernel(mu, Radius::Level(m))?;
        let weight = match regime {
            GreenRegime::Continuous => 1.0,
            GreenRegime::Logarithmic => (m.abs().max(1) as f64) * pf.ln(),
            GreenRegime::Power => pf.powf(m as f64 * (alpha - 1.0)),
        };
        rows.push(GreenRow {
            m,
            abs_x: pow_level(p, m),
            value,
            weight,
            ratio: value.abs() / weight,
        });
    }
    let bound = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let origin_value = match regime {
        GreenRegime::Continuous => Some(eval.green_kernel_series(mu)?),
        _ => None,
    };
    Ok(GreenReport {
        p,
        radius,
        alpha,
        mu,
        regime,
        rows,
        bound,
        origin_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::{make_initial, InitialSpec};
    use approx::assert_relative_eq;

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

    /// Plain truncated shell sum, no adaptive cutoffs.
    fn z_global_naive(p: u64, alpha: f64, t: f64, m: i32) -> f64 {
        let pf = p as f64;
        let mut acc = 0.0;
        for l in -200..=-m {
            acc += (1.0 - 1.0 / pf) * pf.powi(l) * (-t * pf.powf(alpha * l as f64)).exp();
        }
        acc - pf.powi(-m) * (-t * pf.powf(alpha * (1 - m) as f64)).exp()
    }

    #[test]
    fn global_kernel_example_and_positivity() {
        let z = heat_kernel_global(2, 1.0, 1.0, Radius::Level(0)).unwrap();
        assert_relative_eq!(z, z_global_naive(2, 1.0, 1.0, 0), max_relative = 1e-14);
        for &t in &[0.01, 0.3, 1.0, 7.0, 100.0] {
            for m in -10..=10 {
                assert!(heat_kernel_global(3, 0.7, t, Radius::Level(m)).unwrap() >= -1e-15);
            }
        }
        assert!(heat_kernel_global(2, 1.0, 0.0, Radius::Origin).is_err());
    }

    #[test]
    fn global_kernel_is_a_probability_density() {
        for &(p, alpha, t) in &[(2u64, 1.0, 1.0), (3, 0.5, 0.2), (5, 2.0, 3.0)] {
            let shell = 1.0 - 1.0 / p as f64;
            let mut acc =
                heat_kernel_global(p, alpha, t, Radius::Origin).unwrap() * pow_level(p, -61);
            for m in -60..=200 {
                acc += pow_level(p, m)
                    * shell
                    * heat_kernel_global(p, alpha, t, Radius::Level(m)).unwrap();
            }
            // The far tail decays like |x|^(-alpha-1); bound what was dropped.
            let dropped = 10.0 * t * pow_level(p, -200).powf(alpha);
            assert!((acc - 1.0).abs() < 1e-10 + dropped, "p={p}: {acc}");
        }
    }

    #[test]
    fn global_kernel_origin_is_limit() {
        let z0 = heat_kernel_global(2, 1.5, 0.7, Radius::Origin).unwrap();
        let z = heat_kernel_global(2, 1.5, 0.7, Radius::Level(-60)).unwrap();
        assert_relative_eq!(z0, z, max_relative = 1e-14);
    }

    #[test]
    fn c_series_small_cases() {
        let e = KernelEvaluator::new(2, 0, 1.0).unwrap();
        assert!(e.c_series(0.0).unwrap().value.abs() < 1e-15);
        // c(t) = p^-N - e^(lambda t) p^-N int_{B_N} Z.
        for &t in &[0.1, 1.0, 10.0] {
            let zint = e
                .integrate_radial(|r| heat_kernel_global(2, 1.0, t, r))
                .unwrap();
            let expect = 1.0 - (e.lambda() * t).exp() * zint;
            assert!(
                (e.c_series(t).unwrap().value - expect).abs() < 1e-12,
                "t={t}"
            );
        }
    }

    #[test]
    fn c_series_matches_sphere_identity() {
        // sum_n (-x)^n / (n! (1 - p^(-alpha n - 1))) = sum_{j >= 0} p^-j e^(-x p^(-alpha j)).
        for &(p, n, alpha, t) in &[(3u64, 1, 0.5, 2.0), (5, -1, 1.5, 0.3), (2, 2, 2.0, 30.0)] {
            let e = KernelEvaluator::new(p, n, alpha).unwrap();
            let pf = p as f64;
            let x = t * pf.powf(-alpha * n as f64);
            let s: f64 = (0..400)
                .map(|j| pf.powi(-j) * (-x * pf.powf(-alpha * j as f64)).exp())
                .sum();
            let expect = pf.powi(-n) * (1.0 - (1.0 - 1.0 / pf) * (e.lambda() * t).exp() * s);
            let got = e.c_series(t).unwrap();
            assert!(
                (got.value - expect).abs() < 1e-12 * pf.powi(-n).max(1.0),
                "p={p}"
            );
        }
    }

    #[test]
    fn c_series_refuses_catastrophic_cancellation() {
        let e = KernelEvaluator::new(2, 0, 1.0).unwrap();
        assert!(matches!(e.c_series(200.0), Err(Error::Consistency(_))));
    }

    #[test]
    fn ball_kernel_pinned_value() {
        let e = KernelEvaluator::new(2, 0, 1.0).unwrap();
        let z = e.heat_kernel_ball(1.0, Radius::Level(0)).unwrap();
        assert_relative_eq!(z, 1.0 - (2.0f64 / 3.0 - 2.0).exp(), max_relative = 1e-14);
        assert!(e.heat_kernel_ball(1.0, Radius::Level(1)).is_err());
    }

    #[test]
    fn ball_kernel_two_routes_agree() {
        for &(p, n, alpha) in &[(2u64, 0, 1.0), (3, 1, 0.5), (2, 1, 2.0), (5, 0, 1.2)] {
            let e = KernelEvaluator::new(p, n, alpha).unwrap();
            for &t in &[0.1, 1.0, 10.0] {
                for m in (n - 6..=n).map(Radius::Level).chain([Radius::Origin]) {
                    let a = e.heat_kernel_ball(t, m).unwrap();
                    let b = e.heat_kernel_ball_via_c(t, m).unwrap();
                    assert!((a - b).abs() < 1e-10, "p={p} t={t} {m:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn ball_kernel_normalized_and_positive() {
        for &(p, n, alpha) in &[(2u64, 0, 1.0), (3, -1, 0.6), (5, 2, 2.0)] {
            let e = KernelEvaluator::new(p, n, alpha).unwrap();
            for &t in &[0.05, 1.0, 20.0] {
                assert!((e.heat_kernel_ball_integral(t).unwrap() - 1.0).abs() < 1e-10);
                for m in -30..=n {
                    assert!(e.heat_kernel_ball(t, Radius::Level(m)).unwrap() >= -1e-12);
                }
            }
            let far = e.heat_kernel_ball(1e4, Radius::Level(n - 3)).unwrap();
            assert_relative_eq!(far, pow_level(p, -n), max_relative = 1e-12);
        }
    }

    #[test]
    fn grid_kernel_is_coset_average() {
        let m = model(2, 1, 3);
        let e = KernelEvaluator::for_model(&m, 0.8).unwrap();
        let t = 0.4;
        let g = ball_kernel_gridfunction(&m, 0.8, t).unwrap();
        assert!((g.integral() - 1.0).abs() < 1e-14);
        for n in 1..m.order() {
            let r = Radius::of_point(&m, n);
            assert!((g.values()[n] - e.heat_kernel_ball(t, r).unwrap()).abs() < 1e-13);
        }
        let avg = e
            .integrate_radial_below(-m.resolution(), |r| e.heat_kernel_ball(t, r))
            .unwrap()
            / m.coset_measure();
        assert!((g.values()[0] - avg).abs() < 1e-11);
        let pw = ball_kernel_pointwise_grid(&m, 0.8, t).unwrap();
        assert!(pw.sub(&g).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn chapman_kolmogorov() {
        let m = model(3, 0, 3);
        let a = ball_kernel_gridfunction(&m, 1.2, 0.3).unwrap();
        let b = ball_kernel_gridfunction(&m, 1.2, 0.5).unwrap();
        let ab = ball_kernel_gridfunction(&m, 1.2, 0.8).unwrap();
        assert!(a.convolve(&b).unwrap().sub(&ab).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn green_pinned_value_and_regimes() {
        let e = KernelEvaluator::new(2, 0, 1.0).unwrap();
        assert_relative_eq!(
            e.green_kernel(1.0, Radius::Level(0)).unwrap(),
            -3.0 / 7.0,
            max_relative = 1e-15
        );
        assert!(e.green_kernel(1.0, Radius::Origin).is_err());
        assert!(e.green_kernel(0.0, Radius::Level(0)).is_err());
        let e = KernelEvaluator::new(2, 0, 1.5).unwrap();
        let k0 = e.green_kernel(1.0, Radius::Origin).unwrap();
        let k = e.green_kernel(1.0, Radius::Level(-120)).unwrap();
        assert!((k - k0).abs() < 1e-12);
    }

    #[test]
    fn green_kernel_integrates_to_zero() {
        // For alpha < 1 the singular core below the cutoff carries
        // O(p^(40 (alpha - 1))) of mass, so the tolerance follows that bound.
        for &(p, n, alpha, mu) in &[(2u64, 0, 1.0, 1.0), (3, 1, 0.5, 0.2), (2, -1, 2.0, 3.0)] {
            let e = KernelEvaluator::new(p, n, alpha).unwrap();
            let tol = 1e-10f64.max(10.0 * pow_level(p, SPHERE_CUTOFF).powf(1.0 - alpha.min(1.0)));
            // The origin is a null set; use the innermost sphere value there.
            let f = |r: Radius| match r {
                Radius::Origin => e.green_kernel(mu, Radius::Level(SPHERE_CUTOFF)),
                r => e.green_kernel(mu, r),
            };
            assert!(e.integrate_radial(f).unwrap().abs() < tol, "p={p}");
        }
    }

    #[test]
    fn green_fourier_series_matches_closed_form() {
        for &(p, n, r, alpha) in &[(2u64, 0, 5, 1.0), (3, 1, 2, 0.5), (5, 0, 2, 1.5)] {
            let m = model(p, n, r);
            let f = green_kernel_fourier(&m, alpha, 0.7).unwrap();
            let g = green_kernel_gridfunction(&m, alpha, 0.7).unwrap();
            assert!(f.sub(&g).unwrap().max_abs() < 1e-10, "p={p}");
            assert!(g.integral().abs() < 1e-12);
        }
    }

    #[test]
    fn resolvent_paths_agree() {
        for &(p, n, r, alpha) in &[(2u64, 0, 4, 1.0), (3, 1, 2, 0.5), (2, 0, 9, 2.0)] {
            let m = model(p, n, r);
            let u = random(m, 9);
            let a = resolvent_apply(&u, alpha, 0.6).unwrap();
            let b = resolvent_spectral(&u, alpha, 0.6).unwrap();
            assert!(a.sub(&b).unwrap().max_abs() < 1e-10 * b.max_abs());
        }
        let m = model(2, 0, 3);
        let c = GridFunction::constant(m, 3.0);
        for v in resolvent_apply(&c, 1.0, 2.0).unwrap().values() {
            assert!((v - 1.5).abs() < 1e-14);
        }
    }

    #[test]
    fn resolvent_identity() {
        let m = model(3, 0, 3);
        let u = random(m, 4);
        let (mu, nu) = (0.4, 2.5);
        let lhs = resolvent_spectral(&u, 0.9, mu)
            .unwrap()
            .sub(&resolvent_spectral(&u, 0.9, nu).unwrap())
            .unwrap();
        let inner = resolvent_apply(&u, 0.9, nu).unwrap();
        let rhs = resolvent_apply(&inner, 0.9, mu).unwrap().scale(nu - mu);
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn green_report_shapes() {
        let r = green_estimates_report(2, 0, 0.5, 1.0, -25, 0).unwrap();
        assert_eq!(r.regime, GreenRegime::Power);
        assert_eq!(r.rows.len(), 26);
        assert_eq!(r.rows[0].m, 0);
        assert!(r.bound.is_finite());
        let r = green_estimates_report(2, 0, 2.0, 1.0, -25, 0).unwrap();
        assert_eq!(r.regime, GreenRegime::Continuous);
        assert!(r.origin_value.is_some());
        assert!(green_estimates_report(2, 0, 1.0, 1.0, 0, 3).is_err());
    }
}
