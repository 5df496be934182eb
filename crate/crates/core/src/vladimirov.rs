//! The Vladimirov operator `D^alpha_N` on the ball `B_N`.
//!
//! On level-M functions the operator has four interchangeable realizations,
//! all exact up to rounding:
//!
//! * spectral: multiply Fourier coefficient `k` by `lambda` (k = 0) or
//!   `|xi_k|^alpha` (k != 0), see [`SpectralMultiplier`];
//! * hypersingular integral over the ball plus `lambda u`, see
//!   [`apply_hypersingular`];
//! * convolution with the Riesz distribution of order `-alpha`, see
//!   [`convolve_riesz`];
//! * the hypersingular integral over all of `Q_p` applied to the zero
//!   extension and restricted back, see [`apply_global_restriction`].
//!
//! The eigenvalue formula `|xi|^alpha` is a closed form of the symbol
//! integral; [`SpectralMultiplier::new`] re-derives every distinct eigenvalue
//! from [`symbol_quadrature`] and refuses to build if they disagree.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ball_model::{pow_level, sphere_character_integral, BallModel, Constants};
use crate::error::{check_alpha, Error, Result};
use crate::fourier_ball;
use crate::function_space::GridFunction;

/// Largest group order for which dense matrices are built.
pub const DENSE_MATRIX_CAP: usize = 4096;

const MULTIPLIER_CHECK_TOL: f64 = 1e-10;

/// `P_{N,alpha}(xi_k) = a_p int_{B_N} |y|^(-alpha-1) [chi(y xi) - 1] dy`, summed
/// sphere by sphere. Spheres with `|y| <= 1/|xi|` contribute nothing.
pub fn symbol_quadrature(model: &BallModel, alpha: f64, k: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if k >= model.order() {
        return Err(Error::IndexOutOfRange {
            index: k,
            order: model.order(),
        });
    }
    let Some(s) = model.freq_level(k) else {
        return Ok(0.0);
    };
    let p = model.p();
    let consts = Constants::for_model(model, alpha)?;
    let shell = 1.0 - 1.0 / p as f64;
    let sum: f64 = (1 - s..=model.radius())
        .map(|l| {
            let sphere = sphere_character_integral(p, l, Some(s)) - pow_level(p, l) * shell;
            (p as f64).powf(-(l as f64) * (alpha + 1.0)) * sphere
        })
        .sum();
    Ok(consts.a_p * sum)
}

/// Eigenvalues of `D^alpha_N` indexed by frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMultiplier {
    model: BallModel,
    alpha: f64,
    lambda: f64,
    eigenvalues: Vec<f64>,
}

impl SpectralMultiplier {
    pub fn new(model: BallModel, alpha: f64) -> Result<Self> {
        let consts = Constants::for_model(&model, alpha)?;
        let lambda = consts.lambda;
        let p = model.p();
        // One eigenvalue per frequency level 1-N ..= M.
        let mut by_level = Vec::with_capacity(model.digits() as usize);
        for level in 1 - model.radius()..=model.resolution() {
            let closed = (p as f64).powf(alpha * level as f64);
            let k = p.pow((model.resolution() - level) as u32) as usize;
            let quad = symbol_quadrature(&model, alpha, k)? + lambda;
            if ((quad - closed) / closed).abs() > MULTIPLIER_CHECK_TOL {
                return Err(Error::Consistency(format!(
                    "eigenvalue at |xi| = p^{level}: closed form {closed} vs symbol integral {quad}"
                )));
            }
            by_level.push(closed);
        }
        let base = 1 - model.radius();
        let eigenvalues = (0..model.order())
            .map(|k| match model.freq_level(k) {
                None => lambda,
                Some(level) => by_level[(level - base) as usize],
            })
            .collect();
        Ok(Self {
            model,
            alpha,
            lambda,
            eigenvalues,
        })
    }

    pub fn model(&self) -> &BallModel {
        &self.model
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Smallest eigenvalue on nonconstant modes, `p^(alpha (1 - N))`.
    pub fn spectral_gap_eigenvalue(&self) -> f64 {
        (self.model.p() as f64).powf(self.alpha * (1 - self.model.radius()) as f64)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(self.lambda, f64::max)
    }

    /// `f(D) u` for a real function `f` of the eigenvalue.
    pub fn apply_fn(&self, u: &GridFunction, f: impl Fn(f64) -> f64) -> Result<GridFunction> {
        if *u.model() != self.model {
            return Err(Error::ModelMismatch);
        }
        let mut spec = fourier_ball::forward(u);
        spec.scale_by(|k| f(self.eigenvalues[k]));
        Ok(fourier_ball::inverse(&spec))
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.apply_fn(u, |m| m)
    }
}

pub fn multiplier(model: BallModel, alpha: f64) -> Result<SpectralMultiplier> {
    SpectralMultiplier::new(model, alpha)
}

pub fn apply_spectral(u: &GridFunction, alpha: f64) -> Result<GridFunction> {
    SpectralMultiplier::new(*u.model(), alpha)?.apply(u)
}

/// `w[j] = a_p p^(-M) |y_j|^(-alpha-1)` for `j != 0`; `w[0] = 0`.
fn hypersingular_weights(model: &BallModel, alpha: f64, a_p: f64) -> Vec<f64> {
    let p = model.p() as f64;
    let cell = model.coset_measure();
    (0..model.order())
        .map(|j| match model.point_level(j) {
            None => 0.0,
            Some(level) => a_p * cell * p.powf(-(alpha + 1.0) * level as f64),
        })
        .collect()
}

/// `lambda u(x) + a_p int_{B_N} |y|^(-alpha-1) [u(x-y) - u(x)] dy`.
pub fn apply_hypersingular(u: &GridFunction, alpha: f64) -> Result<GridFunction> {
    let model = *u.model();
    let consts = Constants::for_model(&model, alpha)?;
    let w = hypersingular_weights(&model, alpha, consts.a_p);
    let s = model.order();
    let vals = u.values();
    Ok(GridFunction::from_fn(model, |n| {
        let un = vals[n];
        let mut acc = 0.0;
        for j in 1..s {
            acc += w[j] * (vals[(n + s - j) % s] - un);
        }
        consts.lambda * un + acc
    }))
}

/// Applies the `Q_p` hypersingular operator to the zero extension of `u` and
/// restricts to `B_N`.
///
/// The integral over `B_{N+1}` is summed coset by coset on the enlarged ball
/// (where the zero extension vanishes off `B_N`); the remaining shells
/// `|y| > p^(N+1)` only see `-u(x)` and are summed as a geometric series.
pub fn apply_global_restriction(u: &GridFunction, alpha: f64) -> Result<GridFunction> {
    let model = *u.model();
    let consts = Constants::for_model(&model, alpha)?;
    let big = BallModel::with_cap(
        model.p(),
        model.radius() + 1,
        model.resolution(),
        usize::MAX,
    )?;
    let p = model.p() as usize;
    let s = model.order();
    let sb = big.order();
    let w = hypersingular_weights(&big, alpha, consts.a_p);
    let extended = |i: usize| {
        if i.is_multiple_of(p) {
            u.values()[i / p]
        } else {
            0.0
        }
    };

    let pf = model.p() as f64;
    let outer = model.radius() as f64 + 2.0;
    let tail_mass = (1.0 - 1.0 / pf) * pf.powf(-alpha * outer) / (1.0 - pf.powf(-alpha));
    let tail = -consts.a_p * tail_mass;

    Ok(GridFunction::from_fn(model, |n| {
        let nb = n * p;
        let un = u.values()[n];
        let mut acc = 0.0;
        for (j, wj) in w.iter().enumerate().take(sb).skip(1) {
            acc += wj * (extended((nb + sb - j) % sb) - un);
        }
        debug_assert!(s * p == sb);
        acc + tail * un
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RieszOrder {
    /// `f^(N)_alpha`; requires `alpha != 1`.
    Positive,
    /// `f^(N)_{-alpha}`, the kernel of `D^alpha_N`.
    Negative,
}

/// Riesz distribution `f^(N)_{+-alpha}` on `B_N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RieszDistribution {
    model: BallModel,
    alpha: f64,
    order: RieszOrder,
}

impl RieszDistribution {
    pub fn new(model: BallModel, alpha: f64, order: RieszOrder) -> Result<Self> {
        check_alpha(alpha)?;
        if order == RieszOrder::Positive && (alpha - 1.0).abs() < 1e-12 {
            return Err(Error::InvalidParameter(
                "the positive-order Riesz distribution is undefined at alpha = 1".into(),
            ));
        }
        Ok(Self {
            model,
            alpha,
            order,
        })
    }

    pub fn model(&self) -> &BallModel {
        &self.model
    }

    /// `(point coefficient, integral coefficient, exponent)` such that
    /// `<f, phi> = c0 phi(0) + c1 int [phi(x) - phi(0)] |x|^exponent dx`.
    fn coefficients(&self) -> (f64, f64, f64) {
        let p = self.model.p() as f64;
        let a = self.alpha;
        let radius = self.model.radius() as f64;
        match self.order {
            RieszOrder::Positive => {
                let d = 1.0 - p.powf(a - 1.0);
                (
                    (1.0 - 1.0 / p) / d * p.powf(a * radius),
                    (1.0 - p.powf(-a)) / d,
                    a - 1.0,
                )
            }
            RieszOrder::Negative => {
                let c = Constants::for_model(&self.model, a).expect("alpha checked");
                (c.lambda, c.a_p, -a - 1.0)
            }
        }
    }

    /// Pairing with the function `j -> phi(j)` given by index.
    fn pair_with(&self, phi: impl Fn(usize) -> f64, weights: &[f64], c0: f64) -> f64 {
        let phi0 = phi(0);
        let mut acc = 0.0;
        for (j, w) in weights.iter().enumerate().skip(1) {
            acc += w * (phi(j) - phi0);
        }
        c0 * phi0 + acc
    }

    fn weights(&self, c1: f64, exponent: f64) -> Vec<f64> {
        let p = self.model.p() as f64;
        let cell = self.model.coset_measure();
        (0..self.model.order())
            .map(|j| match self.model.point_level(j) {
                None => 0.0,
                Some(level) => c1 * cell * p.powf(exponent * level as f64),
            })
            .collect()
    }
}

pub fn riesz_pairing(dist: &RieszDistribution, phi: &GridFunction) -> Result<f64> {
    if *phi.model() != dist.model {
        return Err(Error::ModelMismatch);
    }
    let (c0, c1, exponent) = dist.coefficients();
    let weights = dist.weights(c1, exponent);
    Ok(dist.pair_with(|j| phi.values()[j], &weights, c0))
}

/// `(f^(N)_{-alpha} * u)(x) = <f^(N)_{-alpha}, u(x - .)>`.
pub fn convolve_riesz(u: &GridFunction, alpha: f64) -> Result<GridFunction> {
    let model = *u.model();
    let dist = RieszDistribution::new(model, alpha, RieszOrder::Negative)?;
    let (c0, c1, exponent) = dist.coefficients();
    let weights = dist.weights(c1, exponent);
    let s = model.order();
    let vals = u.values();
    Ok(GridFunction::from_fn(model, |n| {
        dist.pair_with(|j| vals[(n + s - j) % s], &weights, c0)
    }))
}

/// Dense matrix of `D^alpha_N` in the coset basis (hypersingular form).
pub fn build_matrix(model: &BallModel, alpha: f64) -> Result<DMatrix<f64>> {
    build_matrix_with_cap(model, alpha, DENSE_MATRIX_CAP)
}

pub fn build_matrix_with_cap(model: &BallModel, alpha: f64, cap: usize) -> Result<DMatrix<f64>> {
    let s = model.order();
    if s > cap {
        return Err(Error::CapExceeded {
            p: model.p(),
            levels: model.digits() as i64,
            cap,
        });
    }
    let consts = Constants::for_model(model, alpha)?;
    let w = hypersingular_weights(model, alpha, consts.a_p);
    let diag = consts.lambda - w.iter().sum::<f64>();
    Ok(DMatrix::from_fn(s, s, |n, i| {
        if n == i {
            diag
        } else {
            w[(n + s - i) % s]
        }
    }))
}

/// The eigenvalue multiset `{lambda} u {p^(alpha k) with multiplicity
/// p^(N+k-1)(p-1) : k = 1-N ..= M}`, sorted ascending.
pub fn closed_form_spectrum(model: &BallModel, alpha: f64) -> Result<Vec<f64>> {
    let consts = Constants::for_model(model, alpha)?;
    let p = model.p();
    let mut out = Vec::with_capacity(model.order());
    out.push(consts.lambda);
    for k in 1 - model.radius()..=model.resolution() {
        let mult = p.pow((model.radius() + k - 1) as u32) as usize * (p as usize - 1);
        out.extend(std::iter::repeat_n((p as f64).powf(alpha * k as f64), mult));
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// `L^1` norms of `D^alpha_N u` across resolutions, a finite-resolution proxy
/// for membership of `u` in the operator domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub resolutions: Vec<i32>,
    pub l1_norms: Vec<f64>,
    /// Successive differences of `l1_norms`.
    pub increments: Vec<f64>,
    /// Increments shrink (or vanish), so the sequence looks bounded.
    pub appears_bounded: bool,
}

impl DomainReport {
    fn from_norms(resolutions: Vec<i32>, l1_norms: Vec<f64>) -> Self {
        let increments: Vec<f64> = l1_norms.windows(2).map(|w| w[1] - w[0]).collect();
        let scale = l1_norms
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-300);
        let negligible = |d: f64| d.abs() <= 1e-10 * scale;
        let appears_bounded = increments.iter().all(|&d| negligible(d))
            || increments
                .windows(2)
                .all(|w| negligible(w[1]) || w[1].abs() < 0.9 * w[0].abs());
        Self {
            resolutions,
            l1_norms,
            increments,
            appears_bounded,
        }
    }
}

/// Refines `u` by `0..=levels` and records `||D u||_1` at each resolution.
pub fn domain_check(u: &GridFunction, alpha: f64, levels: u32) -> Result<DomainReport> {
    let base = *u.model();
    domain_check_with(&base, alpha, levels, |model| {
        u.refine((model.resolution() - base.resolution()) as u32)
    })
}

/// Like [`domain_check`], but samples a fresh profile at every resolution.
pub fn domain_check_with(
    base: &BallModel,
    alpha: f64,
    levels: u32,
    sample: impl Fn(&BallModel) -> Result<GridFunction>,
) -> Result<DomainReport> {
    let mut resolutions = Vec::new();
    let mut norms = Vec::new();
    for extra in 0..=levels {
        let model = base.refined(extra)?;
        let u = sample(&model)?;
        if *u.model() != model {
            return Err(Error::ModelMismatch);
        }
        norms.push(convolve_riesz_fast(&u, alpha)?.lp_norm(1.0)?);
        resolutions.push(model.resolution());
    }
    Ok(DomainReport::from_norms(resolutions, norms))
}

/// Riesz convolution evaluated spectrally, for resolutions where the O(S^2)
/// pairing loop is too slow.
fn convolve_riesz_fast(u: &GridFunction, alpha: f64) -> Result<GridFunction> {
    if u.model().order() <= 1024 {
        convolve_riesz(u, alpha)
    } else {
        apply_spectral(u, alpha)
    }
}
