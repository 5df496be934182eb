//! The porous medium equation `du/dt + D(Phi(u)) = 0` on the ball, solved by
//! backward Euler: each step solves `v + h D(Phi(v)) = g`, and the mild
//! solution is the limit of `k` steps of size `t / k` as `k` grows.
//!
//! Inner solves use damped Newton with the Jacobian `I + h D diag(Phi'(v))`:
//! dense LU up to [`DENSE_NEWTON_CAP`] cosets, preconditioned BiCGSTAB above.
//! If Newton stalls (kinks in a piecewise-linear `Phi`), a relaxed
//! fixed-point iteration takes over.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_alpha, Error, Result};
use crate::function_space::GridFunction;
use crate::vladimirov::{build_matrix, SpectralMultiplier};

/// Largest group order solved with a dense Jacobian.
pub const DENSE_NEWTON_CAP: usize = 4096;

/// Extra Newton steps allowed after the tolerance is met, while the residual
/// keeps dropping.
const POLISH_STEPS: usize = 2;

const KRYLOV_TOL: f64 = 1e-14;
const KRYLOV_MAX_ITER: usize = 1000;

/// A strictly increasing `Phi` with `Phi(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Nonlinearity {
    /// `sign(u) |u|^exponent`, `exponent >= 1`.
    Power {
        exponent: f64,
    },
    Identity,
    /// Linear interpolation through `points` (sorted, strictly increasing in
    /// both coordinates, containing `(0, 0)`), extended linearly by the end slopes.
    PiecewiseLinear {
        points: Vec<(f64, f64)>,
    },
}

impl Nonlinearity {
    pub fn power(exponent: f64) -> Result<Self> {
        let phi = Nonlinearity::Power { exponent };
        phi.validate()?;
        Ok(phi)
    }

    pub fn piecewise_linear(points: Vec<(f64, f64)>) -> Result<Self> {
        let phi = Nonlinearity::PiecewiseLinear { points };
        phi.validate()?;
        Ok(phi)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Nonlinearity::Power { exponent } => {
                if !(exponent.is_finite() && *exponent >= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "power exponent must be >= 1, got {exponent}"
                    )));
                }
            }
            Nonlinearity::Identity => {}
            Nonlinearity::PiecewiseLinear { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidParameter(
                        "a table needs at least two points".into(),
                    ));
                }
                if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "table entries must be finite".into(),
                    ));
                }
                if points
                    .windows(2)
                    .any(|w| w[1].0 <= w[0].0 || w[1].1 <= w[0].1)
                {
                    return Err(Error::InvalidParameter(
                        "table must be strictly increasing".into(),
                    ));
                }
                if !points.contains(&(0.0, 0.0)) {
                    return Err(Error::InvalidParameter(
                        "table must pass through (0, 0)".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn is_linear(&self) -> bool {
        match self {
            Nonlinearity::Identity => true,
            Nonlinearity::Power { exponent } => *exponent == 1.0,
            Nonlinearity::PiecewiseLinear { points } => points.len() == 2,
        }
    }

    /// Index `i` of the segment `[points[i], points[i+1]]` used at `x`.
    fn segment(points: &[(f64, f64)], x: f64, key: impl Fn(&(f64, f64)) -> f64) -> usize {
        let last = points.len() - 2;
        points[1..=last]
            .iter()
            .take_while(|pt| key(pt) <= x)
            .count()
    }

    pub fn value(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Power { exponent } => u.signum() * u.abs().powf(*exponent),
            Nonlinearity::Identity => u,
            Nonlinearity::PiecewiseLinear { points } => {
                let i = Self::segment(points, u, |pt| pt.0);
                let ((x0, y0), (x1, y1)) = (points[i], points[i + 1]);
                y0 + (u - x0) * (y1 - y0) / (x1 - x0)
            }
        }
    }

    /// `Phi'(u)`; right-sided at kinks.
    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Power { exponent } => {
                if *exponent == 1.0 {
                    1.0
                } else {
                    exponent * u.abs().powf(exponent - 1.0)
                }
            }
            Nonlinearity::Identity => 1.0,
            Nonlinearity::PiecewiseLinear { points } => {
                let i = Self::segment(points, u, |pt| pt.0);
                let ((x0, y0), (x1, y1)) = (points[i], points[i + 1]);
                (y1 - y0) / (x1 - x0)
            }
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match self {
            Nonlinearity::Power { exponent } => y.signum() * y.abs().powf(exponent.recip()),
            Nonlinearity::Identity => y,
            Nonlinearity::PiecewiseLinear { points } => {
                let i = Self::segment(points, y, |pt| pt.1);
                let ((x0, y0), (x1, y1)) = (points[i], points[i + 1]);
                x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            }
        }
    }

    /// Largest slope of `Phi` on `[-bound, bound]`.
    pub fn max_slope(&self, bound: f64) -> f64 {
        match self {
            Nonlinearity::Power { .. } | Nonlinearity::Identity => self.derivative(bound),
            Nonlinearity::PiecewiseLinear { points } => points
                .windows(2)
                .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImplicitStepConfig {
    /// Stop once `||F(v)||_inf < newton_tol (1 + ||g||_inf)`.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Step-length factor per backtracking halving.
    pub damping: f64,
    pub max_halvings: usize,
    /// Fall back to the relaxed fixed-point iteration when Newton fails.
    pub fallback: bool,
    pub max_fallback_iter: usize,
}

impl Default for ImplicitStepConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            max_newton: 50,
            damping: 0.5,
            max_halvings: 30,
            fallback: true,
            max_fallback_iter: 200_000,
        }
    }
}

impl ImplicitStepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0 && self.newton_tol.is_finite()) {
            return Err(Error::InvalidParameter(
                "newton_tol must be positive".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::InvalidParameter("damping must lie in (0, 1)".into()));
        }
        if self.max_newton == 0 {
            return Err(Error::InvalidParameter(
                "max_newton must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub newton_iterations: usize,
    pub fallback_iterations: usize,
    /// Final `||F(v)||_inf`.
    pub residual: f64,
}

/// Solver for `v + h D(Phi(v)) = g` at a fixed model, order, step and `Phi`.
#[derive(Debug, Clone)]
pub struct ImplicitStepper {
    mult: SpectralMultiplier,
    dense: Option<DMatrix<f64>>,
    h: f64,
    phi: Nonlinearity,
    config: ImplicitStepConfig,
}

impl ImplicitStepper {
    pub fn new(
        model: crate::ball_model::BallModel,
        alpha: f64,
        h: f64,
        phi: Nonlinearity,
        config: ImplicitStepConfig,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "step must be positive, got {h}"
            )));
        }
        phi.validate()?;
        config.validate()?;
        let mult = SpectralMultiplier::new(model, alpha)?;
        let dense = if model.order() <= DENSE_NEWTON_CAP {
            Some(build_matrix(&model, alpha)?)
        } else {
            None
        };
        Ok(Self {
            mult,
            dense,
            h,
            phi,
            config,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn phi(&self) -> &Nonlinearity {
        &self.phi
    }

    pub fn multiplier(&self) -> &SpectralMultiplier {
        &self.mult
    }

    fn apply_d(&self, x: &[f64]) -> Vec<f64> {
        match &self.dense {
            Some(a) => (a * DVector::from_column_slice(x)).data.into(),
            None => {
                let f = GridFunction::new(*self.mult.model(), x.to_vec()).expect("length matches");
                self.mult.apply(&f).expect("model matches").into_values()
            }
        }
    }

    /// `F(v) = v + h D(Phi(v)) - g`.
    pub fn residual(&self, v: &[f64], g: &[f64]) -> Vec<f64> {
        let phi_v: Vec<f64> = v.iter().map(|&x| self.phi.value(x)).collect();
        let d = self.apply_d(&phi_v);
        v.iter()
            .zip(&d)
            .zip(g)
            .map(|((vi, di), gi)| vi + self.h * di - gi)
            .collect()
    }

    /// Dense Jacobian `I + h D diag(Phi'(v))`; requires a dense operator.
    pub fn jacobian(&self, v: &[f64]) -> Result<DMatrix<f64>> {
        let a = self.dense.as_ref().ok_or(Error::CapExceeded {
            p: self.mult.model().p(),
            levels: self.mult.model().digits() as i64,
            cap: DENSE_NEWTON_CAP,
        })?;
        let s = v.len();
        let dphi: Vec<f64> = v.iter().map(|&x| self.phi.derivative(x)).collect();
        Ok(DMatrix::from_fn(s, s, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id + self.h * a[(i, j)] * dphi[j]
        }))
    }

    fn newton_direction(&self, v: &[f64], f: &[f64]) -> Option<Vec<f64>> {
        let rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        if self.dense.is_some() {
            let j = self.jacobian(v).ok()?;
            let sol = j.lu().solve(&DVector::from_vec(rhs))?;
            Some(sol.data.into())
        } else {
            self.krylov_direction(v, &rhs)
        }
    }

    /// Right-preconditioned BiCGSTAB on `J x = b`; the preconditioner divides
    /// mode `k` by `1 + h m_k mean(Phi')`, exact when `Phi` is linear.
    fn krylov_direction(&self, v: &[f64], b: &[f64]) -> Option<Vec<f64>> {
        let model = *self.mult.model();
        let dphi: Vec<f64> = v.iter().map(|&x| self.phi.derivative(x)).collect();
        let mean = dphi.iter().sum::<f64>() / dphi.len() as f64;
        let h = self.h;
        let jmul = |x: &[f64]| -> Vec<f64> {
            let scaled: Vec<f64> = x.iter().zip(&dphi).map(|(a, b)| a * b).collect();
            let d = self.apply_d(&scaled);
            x.iter().zip(&d).map(|(a, b)| a + h * b).collect()
        };
        let precond = |x: &[f64]| -> Vec<f64> {
            let f = GridFunction::new(model, x.to_vec()).expect("length matches");
            self.mult
                .apply_fn(&f, |m| 1.0 / (1.0 + h * m * mean))
                .expect("model matches")
                .into_values()
        };
        bicgstab(jmul, precond, b)
    }

    /// Solves `v + h D(Phi(v)) = g`.
    pub fn solve(&self, g: &GridFunction) -> Result<(GridFunction, StepStats)> {
        if g.model() != self.mult.model() {
            return Err(Error::ModelMismatch);
        }
        let gv = g.values();
        let target = self.config.newton_tol * (1.0 + g.max_abs());
        match self.newton(gv, target) {
            Ok((v, stats)) => Ok((GridFunction::new(*g.model(), v)?, stats)),
            Err(err) if self.config.fallback => {
                let (v, mut stats) = self.fixed_point(gv, target).map_err(|fp| match fp {
                    Error::NoConvergence { residual, .. } => Error::NoConvergence {
                        what: format!("implicit step (Newton: {err}; fixed point)"),
                        residual,
                    },
                    other => other,
                })?;
                if let Error::NoConvergence { .. } = err {
                    stats.newton_iterations = self.config.max_newton;
                }
                Ok((GridFunction::new(*g.model(), v)?, stats))
            }
            Err(err) => Err(err),
        }
    }

    fn newton(&self, g: &[f64], target: f64) -> Result<(Vec<f64>, StepStats)> {
        let norm2 = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let inf = |x: &[f64]| x.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let mut v = g.to_vec();
        let mut f = self.residual(&v, g);
        let mut polish = 0;
        let mut converged = inf(&f) < target;
        let mut iterations = 0;
        while iterations < self.config.max_newton + POLISH_STEPS {
            if converged && polish >= POLISH_STEPS {
                break;
            }
            if !converged && iterations >= self.config.max_newton {
                break;
            }
            let Some(dir) = self.newton_direction(&v, &f) else {
                break;
            };
            iterations += 1;
            let base = norm2(&f);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=self.config.max_halvings {
                let trial: Vec<f64> = v.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                let ft = self.residual(&trial, g);
                if norm2(&ft) < (1.0 - 1e-4 * step) * base {
                    accepted = Some((trial, ft));
                    break;
                }
                step *= self.config.damping;
            }
            match accepted {
                Some((trial, ft)) => {
                    v = trial;
                    f = ft;
                }
                // No decrease possible: at round-off level if already converged.
                None => break,
            }
            if converged {
                polish += 1;
            }
            converged = converged || inf(&f) < target;
        }
        let residual = inf(&f);
        if converged {
            Ok((
                v,
                StepStats {
                    newton_iterations: iterations,
                    fallback_iterations: 0,
                    residual,
                },
            ))
        } else {
            Err(Error::NoConvergence {
                what: "Newton iteration".into(),
                residual,
            })
        }
    }

    /// `v <- v - omega F(v)` with `omega = 1 / (1 + h m_max L)`.
    fn fixed_point(&self, g: &[f64], target: f64) -> Result<(Vec<f64>, StepStats)> {
        let bound = g.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let slope = self.phi.max_slope(bound).max(f64::MIN_POSITIVE);
        let omega = 1.0 / (1.0 + self.h * self.mult.max_eigenvalue() * slope);
        let mut v = g.to_vec();
        let mut residual = f64::INFINITY;
        for it in 1..=self.config.max_fallback_iter {
            let f = self.residual(&v, g);
            residual = f.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            if residual < target {
                let stats = StepStats {
                    newton_iterations: 0,
                    fallback_iterations: it,
                    residual,
                };
                return Ok((v, stats));
            }
            for (vi, fi) in v.iter_mut().zip(&f) {
                *vi -= omega * fi;
            }
        }
        Err(Error::NoConvergence {
            what: "relaxed fixed-point iteration".into(),
            residual,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bicgstab(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
) -> Option<Vec<f64>> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Some(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..KRYLOV_MAX_ITER {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            return None;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = precond(&p);
        v = apply(&ph);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(a, b)| a - alpha * b).collect();
        if dot(&s, &s).sqrt() < KRYLOV_TOL * bnorm {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Some(x);
        }
        let sh = precond(&s);
        let t = apply(&sh);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        if dot(&r, &r).sqrt() < KRYLOV_TOL * bnorm {
            return Some(x);
        }
        if omega == 0.0 || !omega.is_finite() {
            return None;
        }
    }
    None
}

/// One backward-Euler step with default settings.
pub fn implicit_step(
    g: &GridFunction,
    h: f64,
    alpha: f64,
    phi: &Nonlinearity,
) -> Result<GridFunction> {
    let stepper = ImplicitStepper::new(
        *g.model(),
        alpha,
        h,
        phi.clone(),
        ImplicitStepConfig::default(),
    )?;
    Ok(stepper.solve(g)?.0)
}

/// Bookkeeping for one step of [`evolve_pme_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    /// `int u_{j+1} - int u_j + h lambda int Phi(u_{j+1})`, zero in exact arithmetic.
    pub mass_defect: f64,
    pub stats: StepStats,
}

/// `k` backward-Euler steps of size `t / k`.
pub fn evolve_pme(
    u0: &GridFunction,
    t: f64,
    k: usize,
    alpha: f64,
    phi: &Nonlinearity,
) -> Result<GridFunction> {
    evolve_pme_with(
        u0,
        t,
        k,
        alpha,
        phi,
        &ImplicitStepConfig::default(),
        |_, _| {},
    )
}

/// Like [`evolve_pme`], calling `observe` after every step.
pub fn evolve_pme_with(
    u0: &GridFunction,
    t: f64,
    k: usize,
    alpha: f64,
    phi: &Nonlinearity,
    config: &ImplicitStepConfig,
    mut observe: impl FnMut(&StepRecord, &GridFunction),
) -> Result<GridFunction> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "step count must be at least 1".into(),
        ));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "final time must be positive, got {t}"
        )));
    }
    let h = t / k as f64;
    let stepper = ImplicitStepper::new(*u0.model(), alpha, h, phi.clone(), config.clone())?;
    let lambda = stepper.multiplier().lambda();
    let mut u = u0.clone();
    let mut mass = u.integral();
    for step in 1..=k {
        let (next, stats) = stepper.solve(&u)?;
        let next_mass = next.integral();
        let flux = next.map(|x| phi.value(x)).integral();
        let record = StepRecord {
            step,
            time: h * step as f64,
            mass: next_mass,
            mass_defect: next_mass - mass + h * lambda * flux,
            stats,
        };
        observe(&record, &next);
        u = next;
        mass = next_mass;
    }
    Ok(u)
}

/// The doubling sequence behind [`crandall_liggett`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClReport {
    /// Step counts `k` with a computed solution.
    pub ks: Vec<usize>,
    /// `||u^(2k) - u^(k)||_1` for consecutive entries of `ks`.
    pub diffs: Vec<f64>,
    /// `diffs[i+1] / diffs[i]`.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub tol: f64,
}

impl ClReport {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_monotone(&self) -> bool {
        self.diffs.windows(2).all(|w| w[1] < w[0])
    }
}

pub const CL_START: usize = 8;
pub const CL_CAP: usize = 1 << 16;

/// Doubles `k` from 8 until `||u^(2k) - u^(k)||_1 < tol`. Fails past `k = 2^16`.
pub fn crandall_liggett(
    u0: &GridFunction,
    t: f64,
    alpha: f64,
    phi: &Nonlinearity,
    tol: f64,
) -> Result<(GridFunction, ClReport)> {
    crandall_liggett_capped(u0, t, alpha, phi, tol, CL_CAP)
}

pub fn crandall_liggett_capped(
    u0: &GridFunction,
    t: f64,
    alpha: f64,
    phi: &Nonlinearity,
    tol: f64,
    cap: usize,
) -> Result<(GridFunction, ClReport)> {
    crandall_liggett_with(u0, t, alpha, phi, tol, &ImplicitStepConfig::default(), cap)
}

/// [`crandall_liggett`] with explicit inner-solver settings and step cap.
pub fn crandall_liggett_with(
    u0: &GridFunction,
    t: f64,
    alpha: f64,
    phi: &Nonlinearity,
    tol: f64,
    config: &ImplicitStepConfig,
    cap: usize,
) -> Result<(GridFunction, ClReport)> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let run = |k: usize| evolve_pme_with(u0, t, k, alpha, phi, config, |_, _| {});
    let mut report = ClReport {
        ks: vec![CL_START],
        diffs: vec![],
        ratios: vec![],
        converged: false,
        tol,
    };
    let mut prev = run(CL_START)?;
    let mut k = CL_START;
    while 2 * k <= cap {
        k *= 2;
        let next = run(k)?;
        let diff = next.sub(&prev)?.lp_norm(1.0)?;
        if let Some(&last) = report.diffs.last() {
            report.ratios.push(diff / last);
        }
        report.ks.push(k);
        report.diffs.push(diff);
        prev = next;
        if diff < tol {
            report.converged = true;
            return Ok((prev, report));
        }
    }
    Err(Error::NoConvergence {
        what: format!("Crandall-Liggett doubling up to k = {cap}"),
        residual: report.diffs.last().copied().unwrap_or(f64::INFINITY),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgammaViolation {
    pub gamma: f64,
    pub time: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgammaReport {
    pub times: Vec<f64>,
    pub gammas: Vec<f64>,
    /// `norms[g][i]` is `||u(times[i])||_gammas[g]`; index 0 is the initial data.
    pub norms: Vec<Vec<f64>>,
    pub violations: Vec<LgammaViolation>,
    pub slack: f64,
}

impl LgammaReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Tracks `||u(t)||_gamma` over the output `times` (which must start after 0),
/// stepping with at most `max_step` per backward-Euler step, and flags any
/// increase beyond `slack`.
pub fn lgamma_decay_suite(
    u0: &GridFunction,
    times: &[f64],
    gammas: &[f64],
    alpha: f64,
    phi: &Nonlinearity,
    max_step: f64,
    slack: f64,
) -> Result<LgammaReport> {
    if u0.min_value() <= 0.0 {
        return Err(Error::InvalidParameter(
            "initial data must be strictly positive".into(),
        ));
    }
    if max_step.is_nan() || max_step <= 0.0 {
        return Err(Error::InvalidParameter("max_step must be positive".into()));
    }
    let mut all_times = vec![0.0];
    let mut states = vec![u0.clone()];
    let mut u = u0.clone();
    for &t in times {
        let dt = t - all_times.last().unwrap();
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::InvalidParameter(
                "output times must be increasing and positive".into(),
            ));
        }
        let k = (dt / max_step).ceil().max(1.0) as usize;
        u = evolve_pme(&u, dt, k, alpha, phi)?;
        all_times.push(t);
        states.push(u.clone());
    }
    let mut norms = Vec::with_capacity(gammas.len());
    let mut violations = Vec::new();
    for &gamma in gammas {
        let row = states
            .iter()
            .map(|s| s.lp_norm(gamma))
            .collect::<Result<Vec<_>>>()?;
        for i in 1..row.len() {
            if row[i] > row[i - 1] + slack {
                violations.push(LgammaViolation {
                    gamma,
                    time: all_times[i],
                    excess: row[i] - row[i - 1],
                });
            }
        }
        norms.push(row);
    }
    Ok(LgammaReport {
        times: all_times,
        gammas: gammas.to_vec(),
        norms,
        violations,
        slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball_model::{lambda_value, BallModel};
    use crate::function_space::{make_initial, InitialSpec};
    use crate::kernels::resolvent_spectral;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model() -> BallModel {
        BallModel::new(2, 0, 6).unwrap()
    }

    fn random(model: BallModel, seed: u64, lo: f64, hi: f64) -> GridFunction {
        make_initial(model, &InitialSpec::Random { seed, lo, hi }).unwrap()
    }

    fn table() -> Nonlinearity {
        Nonlinearity::piecewise_linear(vec![
            (-2.0, -3.0),
            (0.0, 0.0),
            (0.5, 0.25),
            (1.0, 1.5),
            (3.0, 4.0),
        ])
        .unwrap()
    }

    #[test]
    fn nonlinearity_inverse_round_trips() {
        let phis = [
            Nonlinearity::power(2.0).unwrap(),
            Nonlinearity::power(3.5).unwrap(),
            Nonlinearity::Identity,
            table(),
        ];
        for phi in &phis {
            assert_eq!(phi.value(0.0), 0.0);
            for i in -200..=200 {
                let u = i as f64 * 0.037;
                assert!(
                    (phi.inverse(phi.value(u)) - u).abs() < 1e-12,
                    "{phi:?} at {u}"
                );
                assert!(phi.value(u + 1e-3) > phi.value(u));
            }
        }
        assert!(Nonlinearity::power(0.5).is_err());
        assert!(Nonlinearity::piecewise_linear(vec![(0.0, 0.0), (1.0, 0.0)]).is_err());
        assert!(Nonlinearity::piecewise_linear(vec![(0.5, 0.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn nonlinearity_derivatives() {
        let t = table();
        assert_eq!(t.derivative(0.0), 0.5);
        assert_eq!(t.derivative(-0.1), 1.5);
        assert_eq!(t.derivative(10.0), 1.25);
        let p = Nonlinearity::power(2.0).unwrap();
        assert_eq!(p.derivative(-1.5), 3.0);
        assert_eq!(p.value(-1.5), -2.25);
        assert_eq!(t.max_slope(1.0), 2.5);
    }

    #[test]
    fn nonlinearity_serde() {
        let phi: Nonlinearity = serde_json::from_str(r#"{"kind":"power","exponent":2.0}"#).unwrap();
        assert_eq!(phi, Nonlinearity::Power { exponent: 2.0 });
        let phi: Nonlinearity = serde_json::from_str(r#"{"kind":"identity"}"#).unwrap();
        assert_eq!(phi, Nonlinearity::Identity);
        assert!(
            serde_json::from_str::<Nonlinearity>(r#"{"kind":"power","exponent":2.0,"x":1}"#)
                .is_err()
        );
    }

    #[test]
    fn constant_data_solves_scalar_quadratic() {
        let m = BallModel::new(2, 0, 3).unwrap();
        let g = GridFunction::constant(m, 1.0);
        let v = implicit_step(&g, 1.0, 1.0, &Nonlinearity::power(2.0).unwrap()).unwrap();
        let expect = (-1.0 + (1.0f64 + 8.0 / 3.0).sqrt()) / (4.0 / 3.0);
        assert_relative_eq!(expect, 0.686141, epsilon = 1e-6);
        for x in v.values() {
            assert!((x - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn identity_phi_is_the_linear_resolvent() {
        let m = model();
        let g = random(m, 2, -1.0, 1.0);
        let h = 0.3;
        let v = implicit_step(&g, h, 1.0, &Nonlinearity::Identity).unwrap();
        // v = (1 + h D)^-1 g = h^-1 (D - lambda + mu)^-1 g with mu = lambda + 1/h.
        let lambda = lambda_value(2, 1.0, 0);
        let w = resolvent_spectral(&g, 1.0, lambda + 1.0 / h)
            .unwrap()
            .scale(1.0 / h);
        assert!(v.sub(&w).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = model();
        let phi = Nonlinearity::power(2.0).unwrap();
        let stepper =
            ImplicitStepper::new(m, 1.0, 0.2, phi, ImplicitStepConfig::default()).unwrap();
        let v = random(m, 4, 0.5, 2.0);
        let g = random(m, 5, 0.5, 2.0);
        let dir = random(m, 6, -1.0, 1.0);
        let j = stepper.jacobian(v.values()).unwrap();
        let jd = &j * DVector::from_column_slice(dir.values());
        let eps = 1e-6;
        let plus: Vec<f64> = v
            .values()
            .iter()
            .zip(dir.values())
            .map(|(a, d)| a + eps * d)
            .collect();
        let minus: Vec<f64> = v
            .values()
            .iter()
            .zip(dir.values())
            .map(|(a, d)| a - eps * d)
            .collect();
        let fp = stepper.residual(&plus, g.values());
        let fm = stepper.residual(&minus, g.values());
        let fd: Vec<f64> = fp
            .iter()
            .zip(&fm)
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect();
        let err = fd
            .iter()
            .zip(jd.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = jd.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        assert!(err / scale < 1e-6, "{}", err / scale);
    }

    #[test]
    fn krylov_path_matches_dense_path() {
        let m = BallModel::new(2, 0, 5).unwrap();
        let phi = Nonlinearity::power(2.0).unwrap();
        let g = random(m, 8, 0.2, 1.5);
        let dense =
            ImplicitStepper::new(m, 0.8, 0.5, phi.clone(), ImplicitStepConfig::default()).unwrap();
        let mut krylov = dense.clone();
        krylov.dense = None;
        let (a, _) = dense.solve(&g).unwrap();
        let (b, stats) = krylov.solve(&g).unwrap();
        assert_eq!(stats.fallback_iterations, 0);
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn large_model_uses_krylov() {
        let m = BallModel::new(2, 0, 13).unwrap();
        let phi = Nonlinearity::power(2.0).unwrap();
        let g = make_initial(
            m,
            &InitialSpec::PositiveBump {
                center: 0,
                radius: -3,
            },
        )
        .unwrap();
        let stepper =
            ImplicitStepper::new(m, 1.0, 0.05, phi, ImplicitStepConfig::default()).unwrap();
        assert!(stepper.dense.is_none());
        let (v, stats) = stepper.solve(&g).unwrap();
        assert!(stats.residual < 1e-12 * (1.0 + g.max_abs()));
        assert!(v.min_value() > 0.0);
    }

    #[test]
    fn piecewise_linear_steps_converge() {
        let m = BallModel::new(3, 0, 3).unwrap();
        let g = random(m, 9, -1.0, 2.0);
        let stepper =
            ImplicitStepper::new(m, 1.0, 0.5, table(), ImplicitStepConfig::default()).unwrap();
        let (v, stats) = stepper.solve(&g).unwrap();
        assert!(stats.residual < 1e-12 * (1.0 + g.max_abs()));
        let f = stepper.residual(v.values(), g.values());
        assert!(f.iter().all(|x| x.abs() < 1e-11));
    }

    #[test]
    fn fixed_point_fallback_alone_converges() {
        let m = BallModel::new(2, 0, 4).unwrap();
        let g = random(m, 10, 0.0, 1.0);
        let config = ImplicitStepConfig {
            max_newton: 1,
            newton_tol: 1e-13,
            ..Default::default()
        };
        let stepper = ImplicitStepper::new(m, 1.0, 0.1, table(), config).unwrap();
        let (v, _) = stepper.fixed_point(g.values(), 1e-12).unwrap();
        let reference =
            ImplicitStepper::new(m, 1.0, 0.1, table(), ImplicitStepConfig::default()).unwrap();
        let (w, _) = reference.solve(&g).unwrap();
        assert!(GridFunction::new(m, v).unwrap().sub(&w).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn mass_identity_per_step() {
        let m = model();
        let u0 = make_initial(
            m,
            &InitialSpec::PositiveBump {
                center: 5,
                radius: -3,
            },
        )
        .unwrap();
        let phi = Nonlinearity::power(2.0).unwrap();
        let mut worst = 0.0f64;
        let mut masses = vec![u0.integral()];
        evolve_pme_with(
            &u0,
            1.0,
            40,
            1.0,
            &phi,
            &ImplicitStepConfig::default(),
            |rec, _| {
                worst = worst.max(rec.mass_defect.abs());
                masses.push(rec.mass);
            },
        )
        .unwrap();
        assert!(worst < 1e-12, "{worst}");
        assert!(masses.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn scalar_ode_for_constant_data() {
        let m = BallModel::new(2, 0, 2).unwrap();
        let c = 1.0;
        let lambda = lambda_value(2, 1.0, 0);
        let u = evolve_pme(
            &GridFunction::constant(m, c),
            1.0,
            2048,
            1.0,
            &Nonlinearity::power(2.0).unwrap(),
        )
        .unwrap();
        let exact = c / (1.0 + lambda * c);
        for x in u.values() {
            assert!(((x - exact) / exact).abs() < 1e-4);
        }
    }

    #[test]
    fn step_halving_ratio() {
        // ||J_h g - J_{h/2}^2 g|| shrinks by ~4 when h is halved.
        let m = BallModel::new(2, 0, 4).unwrap();
        let phi = Nonlinearity::power(2.0).unwrap();
        let g = make_initial(
            m,
            &InitialSpec::PositiveBump {
                center: 0,
                radius: -1,
            },
        )
        .unwrap();
        let gap = |h: f64| {
            let one = implicit_step(&g, h, 1.0, &phi).unwrap();
            let half = implicit_step(
                &implicit_step(&g, h / 2.0, 1.0, &phi).unwrap(),
                h / 2.0,
                1.0,
                &phi,
            )
            .unwrap();
            one.sub(&half).unwrap().lp_norm(1.0).unwrap()
        };
        let (a, b) = (gap(0.02), gap(0.01));
        let ratio = a / b;
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn crandall_liggett_linear_order() {
        let m = BallModel::new(2, 0, 4).unwrap();
        let u0 = make_initial(
            m,
            &InitialSpec::PositiveBump {
                center: 0,
                radius: -2,
            },
        )
        .unwrap();
        let (_, report) = crandall_liggett(&u0, 0.5, 1.0, &Nonlinearity::Identity, 1e-4).unwrap();
        assert!(report.converged);
        assert!(report.is_monotone());
        assert!(report.max_ratio() <= 0.75);
        assert!(
            crandall_liggett_capped(&u0, 0.5, 1.0, &Nonlinearity::Identity, 1e-12, 64).is_err()
        );
    }

    #[test]
    fn lgamma_suite_on_bump() {
        let m = BallModel::new(2, 0, 5).unwrap();
        let u0 = make_initial(
            m,
            &InitialSpec::PositiveBump {
                center: 3,
                radius: -2,
            },
        )
        .unwrap();
        let times: Vec<f64> = (1..=5).map(|i| 0.2 * i as f64).collect();
        let r = lgamma_decay_suite(
            &u0,
            &times,
            &[1.0, 2.0, f64::INFINITY],
            1.0,
            &Nonlinearity::power(2.0).unwrap(),
            0.05,
            1e-12,
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r.violations);
        assert_eq!(r.norms[0].len(), 6);
        assert!(lgamma_decay_suite(
            &GridFunction::zeros(m),
            &times,
            &[1.0],
            1.0,
            &Nonlinearity::Identity,
            0.1,
            0.0
        )
        .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn resolvent_is_order_preserving_l1_contraction(seed in 0u64..1000, h in 0.05f64..2.0) {
            let m = BallModel::new(2, 0, 4).unwrap();
            let phi = Nonlinearity::power(2.0).unwrap();
            let g1 = random(m, seed, -1.0, 2.0);
            let bump = random(m, seed + 7, 0.0, 0.5);
            let g2 = g1.add(&bump).unwrap();
            let v1 = implicit_step(&g1, h, 1.0, &phi).unwrap();
            let v2 = implicit_step(&g2, h, 1.0, &phi).unwrap();
            let d = v2.sub(&v1).unwrap();
            prop_assert!(d.min_value() >= -1e-12);
            prop_assert!(d.lp_norm(1.0).unwrap() <= bump.lp_norm(1.0).unwrap() + 1e-12);
            let g3 = random(m, seed + 13, -1.0, 2.0);
            let v3 = implicit_step(&g3, h, 1.0, &phi).unwrap();
            prop_assert!(v3.sub(&v1).unwrap().lp_norm(1.0).unwrap() <= g3.sub(&g1).unwrap().lp_norm(1.0).unwrap() + 1e-12);
        }

        #[test]
        fn resolvent_preserves_positivity(seed in 0u64..1000, h in 0.05f64..5.0) {
            let m = BallModel::new(3, 0, 2).unwrap();
            let g = random(m, seed, 0.0, 1.0);
            let v = implicit_step(&g, h, 0.7, &Nonlinearity::power(3.0).unwrap()).unwrap();
            prop_assert!(v.min_value() >= -1e-12);
        }
    }
}
