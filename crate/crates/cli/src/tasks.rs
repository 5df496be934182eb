//! One function per task. Each returns its artifacts together with an
//! optional failure so that outputs are written even when a check fails.

use nalgebra::SymmetricEigen;
use padic_heat::fourier_ball;
use padic_heat::kernels::{
    ball_kernel_gridfunction, green_estimates_report, heat_kernel_global, resolvent_apply,
    resolvent_spectral, KernelEvaluator, Radius,
};
use padic_heat::linear_solver::{evolve_with, LinearEvolution};
use padic_heat::pme_solver::{crandall_liggett_with, evolve_pme_with, CL_CAP};
use padic_heat::vladimirov::{
    apply_global_restriction, apply_hypersingular, apply_spectral, build_matrix,
    closed_form_spectrum, convolve_riesz, symbol_quadrature,
};
use padic_heat::{
    make_initial, BallModel, EvolutionPath, GridFunction, InitialSpec, SpectralMultiplier,
};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Task};
use crate::error::CliError;
use crate::output::{Artifacts, Cell, Table};

pub type Outcome = (Artifacts, Option<CliError>);

/// Largest order for which `spectrum` and `verify` diagonalize the dense matrix.
const EIGEN_CAP: usize = 1024;

pub fn run(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    config.validate()?;
    match config.task.expect("validated") {
        Task::Spectrum => spectrum(config),
        Task::HeatKernel => heat_kernel(config),
        Task::Green => green(config),
        Task::SolveLinear => solve_linear(config),
        Task::SolvePme => solve_pme(config),
        Task::Verify => verify(config),
    }
}

fn header(config: &ExperimentConfig, model: &BallModel) -> Value {
    json!({
        "task": config.task.map(Task::name),
        "p": model.p(),
        "radius": model.radius(),
        "resolution": model.resolution(),
        "order": model.order(),
        "alpha": config.alpha(),
    })
}

fn extend(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut base, extra) {
        a.extend(b);
    }
    base
}

fn check(failure: &mut Option<CliError>, ok: bool, message: impl FnOnce() -> String) {
    if !ok && failure.is_none() {
        *failure = Some(CliError::Consistency(message()));
    }
}

fn spectrum(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let model = config.model()?;
    let alpha = config.alpha();
    let tol = config.tol.unwrap_or(1e-9);
    let expect = closed_form_spectrum(&model, alpha)?;
    let numeric: Option<Vec<f64>> = if model.order() <= EIGEN_CAP {
        let mut ev: Vec<f64> = SymmetricEigen::new(build_matrix(&model, alpha)?)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        Some(ev)
    } else {
        None
    };
    let mut table = Table::new(
        "spectrum",
        &["index", "eigenvalue", "closed_form", "abs_error"],
    );
    let mut worst = 0.0f64;
    for (i, &c) in expect.iter().enumerate() {
        let (ev, err) = match &numeric {
            Some(ev) => (ev[i], (ev[i] - c).abs()),
            None => (f64::NAN, f64::NAN),
        };
        if err.is_finite() {
            worst = worst.max(err);
        }
        table.push(vec![i.into(), ev.into(), c.into(), err.into()]);
    }
    let mut failure = None;
    check(&mut failure, worst < tol, || {
        format!("eigenvalue error {worst:e} exceeds {tol:e}")
    });
    let summary = extend(
        header(config, &model),
        json!({
            "lambda": expect[0],
            "diagonalized": numeric.is_some(),
            "max_abs_error": worst,
            "tol": tol,
            "passed": failure.is_none(),
        }),
    );
    Ok((
        Artifacts {
            tables: vec![table],
            documents: vec![],
            summary,
        },
        failure,
    ))
}

fn heat_kernel(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let model = config.model()?;
    let alpha = config.alpha();
    let tol = config.tol.unwrap_or(1e-10);
    let eval = KernelEvaluator::for_model(&model, alpha)?;
    let n = model.radius();
    let levels = config
        .heat_kernel
        .levels
        .clone()
        .unwrap_or_else(|| (n - 6..=n).rev().collect());
    let mut values = Table::new(
        "heat_kernel",
        &[
            "t",
            "m",
            "abs_x",
            "z_ball",
            "z_ball_via_c",
            "z_global",
            "route_gap",
        ],
    );
    let mut integrals = Table::new("heat_kernel_integral", &["t", "integral", "c"]);
    let mut worst = 0.0f64;
    let mut unavailable: Option<CliError> = None;
    for &t in &config.heat_kernel.times {
        let radii = levels
            .iter()
            .map(|&m| Radius::Level(m))
            .chain([Radius::Origin]);
        for r in radii {
            let z = eval.heat_kernel_ball(t, r)?;
            let via_c = match eval.heat_kernel_ball_via_c(t, r) {
                Ok(v) => v,
                Err(
                    e @ (padic_heat::Error::Consistency(_)
                    | padic_heat::Error::NoConvergence { .. }),
                ) => {
                    unavailable.get_or_insert(e.into());
                    f64::NAN
                }
                Err(e) => return Err(e.into()),
            };
            let gap = (z - via_c).abs();
            if gap.is_finite() {
                worst = worst.max(gap);
            }
            let (m, abs_x) = match r {
                Radius::Level(m) => (Cell::from(m), (model.p() as f64).powi(m)),
                Radius::Origin => (Cell::from("origin"), 0.0),
            };
            let global = heat_kernel_global(model.p(), alpha, t, r)?;
            values.push(vec![
                t.into(),
                m,
                abs_x.into(),
                z.into(),
                via_c.into(),
                global.into(),
                gap.into(),
            ]);
        }
        let c = eval.c_series(t).map(|c| c.value).unwrap_or(f64::NAN);
        integrals.push(vec![
            t.into(),
            eval.heat_kernel_ball_integral(t)?.into(),
            c.into(),
        ]);
    }
    let mut failure = unavailable;
    check(&mut failure, worst < tol, || {
        format!("heat kernel routes differ by {worst:e} (tol {tol:e})")
    });
    let summary = extend(
        header(config, &model),
        json!({ "lambda": eval.lambda(), "max_route_gap": worst, "tol": tol, "passed": failure.is_none() }),
    );
    Ok((
        Artifacts {
            tables: vec![values, integrals],
            documents: vec![],
            summary,
        },
        failure,
    ))
}

fn green(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let model = config.model()?;
    let g = &config.green;
    let m_hi = g.m_hi.unwrap_or(model.radius());
    let mut tables = Vec::new();
    let mut reports = Vec::new();
    for &alpha in &g.alphas {
        for &mu in &g.mu {
            let report =
                green_estimates_report(model.p(), model.radius(), alpha, mu, g.m_lo, m_hi)?;
            let mut t = Table::new(
                format!("green_alpha{alpha}_mu{mu}"),
                &["m", "abs_x", "value", "weight", "ratio"],
            );
            for row in &report.rows {
                t.push(vec![
                    row.m.into(),
                    row.abs_x.into(),
                    row.value.into(),
                    row.weight.into(),
                    row.ratio.into(),
                ]);
            }
            tables.push(t);
            reports.push(json!({
                "alpha": alpha,
                "mu": mu,
                "regime": report.regime,
                "bound": report.bound,
                "origin_value": report.origin_value,
            }));
        }
    }
    let summary = extend(header(config, &model), json!({ "reports": reports }));
    Ok((
        Artifacts {
            tables,
            documents: vec![],
            summary,
        },
        None,
    ))
}

fn norms(u: &GridFunction) -> Result<[f64; 4], CliError> {
    Ok([
        u.lp_norm(1.0)?,
        u.lp_norm(2.0)?,
        u.lp_norm(4.0)?,
        u.lp_norm(f64::INFINITY)?,
    ])
}

fn state_rows(table: &mut Table, t: f64, u: &GridFunction) {
    for (n, v) in u.values().iter().enumerate() {
        table.push(vec![t.into(), n.into(), (*v).into()]);
    }
}

fn solve_linear(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let model = config.model()?;
    let alpha = config.alpha();
    let tol = config.tol.unwrap_or(1e-9);
    let lin = &config.linear;
    let u0 = make_initial(model, &config.linear_initial())?;
    let run = LinearEvolution::new(alpha, lin.times.clone(), lin.path)?;
    let states = run.run(&u0)?;
    let mass0 = u0.integral();
    let mut table = Table::new(
        "linear",
        &["t", "mass", "l1", "l2", "linf", "min", "path_gap"],
    );
    let mut states_table = Table::new("linear_states", &["t", "n", "value"]);
    let [l1, l2, _, linf] = norms(&u0)?;
    table.push(vec![
        0.0.into(),
        mass0.into(),
        l1.into(),
        l2.into(),
        linf.into(),
        u0.min_value().into(),
        0.0.into(),
    ]);
    if lin.dump_states {
        state_rows(&mut states_table, 0.0, &u0);
    }
    let (mut worst_gap, mut worst_mass) = (0.0f64, 0.0f64);
    for (&t, u) in lin.times.iter().zip(&states) {
        let other = match lin.path {
            EvolutionPath::Spectral => EvolutionPath::Kernel,
            EvolutionPath::Kernel => EvolutionPath::Spectral,
        };
        let gap = evolve_with(&u0, alpha, t, other)?.sub(u)?.max_abs();
        worst_gap = worst_gap.max(gap);
        worst_mass = worst_mass.max((u.integral() - mass0).abs());
        let [l1, l2, _, linf] = norms(u)?;
        table.push(vec![
            t.into(),
            u.integral().into(),
            l1.into(),
            l2.into(),
            linf.into(),
            u.min_value().into(),
            gap.into(),
        ]);
        if lin.dump_states {
            state_rows(&mut states_table, t, u);
        }
    }
    let mut failure = None;
    let mass_tol = 1e-12 * u0.lp_norm(1.0)?.max(1.0);
    check(&mut failure, worst_gap < tol, || {
        format!("spectral and kernel paths differ by {worst_gap:e}")
    });
    check(&mut failure, worst_mass < mass_tol, || {
        format!("mass drifted by {worst_mass:e}")
    });
    let mut tables = vec![table];
    if lin.dump_states {
        tables.push(states_table);
    }
    let summary = extend(
        header(config, &model),
        json!({
            "path": lin.path,
            "initial": config.linear_initial(),
            "max_path_gap": worst_gap,
            "max_mass_drift": worst_mass,
            "tol": tol,
            "passed": failure.is_none(),
        }),
    );
    Ok((
        Artifacts {
            tables,
            documents: vec![],
            summary,
        },
        failure,
    ))
}

fn solve_pme(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let model = config.model()?;
    let alpha = config.alpha();
    let pme = &config.pme;
    let u0 = make_initial(model, &config.pme_initial())?;
    let mut table = Table::new(
        "pme",
        &[
            "t",
            "mass",
            "l1",
            "l2",
            "l4",
            "linf",
            "min",
            "newton_iterations",
            "max_residual",
            "max_mass_defect",
        ],
    );
    let mut states_table = Table::new("pme_states", &["t", "n", "value"]);
    let push = |table: &mut Table,
                t: f64,
                u: &GridFunction,
                its: usize,
                res: f64,
                defect: f64|
     -> Result<(), CliError> {
        let [l1, l2, l4, linf] = norms(u)?;
        table.push(vec![
            t.into(),
            u.integral().into(),
            l1.into(),
            l2.into(),
            l4.into(),
            linf.into(),
            u.min_value().into(),
            its.into(),
            res.into(),
            defect.into(),
        ]);
        Ok(())
    };
    push(&mut table, 0.0, &u0, 0, 0.0, 0.0)?;
    if pme.dump_states {
        state_rows(&mut states_table, 0.0, &u0);
    }
    let mut u = u0.clone();
    let mut prev_t = 0.0;
    let mut prev_norms = norms(&u0)?;
    let mut worst_defect = 0.0f64;
    let mut increases = Vec::new();
    for &t in &pme.times {
        let (mut its, mut res, mut defect) = (0usize, 0.0f64, 0.0f64);
        u = evolve_pme_with(
            &u,
            t - prev_t,
            pme.steps_per_output,
            alpha,
            &pme.phi,
            &pme.newton,
            |rec, _| {
                its += rec.stats.newton_iterations;
                res = res.max(rec.stats.residual);
                defect = defect.max(rec.mass_defect.abs());
            },
        )?;
        worst_defect = worst_defect.max(defect);
        push(&mut table, t, &u, its, res, defect)?;
        if pme.dump_states {
            state_rows(&mut states_table, t, &u);
        }
        let now = norms(&u)?;
        for (i, gamma) in ["1", "2", "4", "inf"].iter().enumerate() {
            // Only L1 and L-inf decay for signed data; all norms decay for positive data.
            let applies = u0.min_value() > 0.0 || i == 0 || i == 3;
            if applies && now[i] > prev_norms[i] + 1e-12 {
                increases.push(format!("L^{gamma} norm grew at t = {t}"));
            }
        }
        prev_norms = now;
        prev_t = t;
    }
    let mut failure = None;
    let defect_tol = 1e-12 * u0.lp_norm(1.0)?.max(1.0);
    check(&mut failure, worst_defect < defect_tol, || {
        format!("mass identity violated by {worst_defect:e}")
    });
    check(&mut failure, increases.is_empty(), || increases[0].clone());

    let mut documents = Vec::new();
    if pme.convergence_study {
        let tol = config.tol.unwrap_or(1e-4);
        let t_final = *pme.times.last().expect("validated");
        match crandall_liggett_with(&u0, t_final, alpha, &pme.phi, tol, &pme.newton, CL_CAP) {
            Ok((_, report)) => {
                let max_ratio = report.max_ratio();
                let monotone = report.is_monotone();
                documents.push((
                    "pme_convergence".to_string(),
                    json!({ "t": t_final, "report": report, "max_ratio": max_ratio, "monotone": monotone }),
                ));
            }
            Err(e) => {
                if failure.is_none() {
                    failure = Some(e.into());
                }
            }
        }
    }
    let mut tables = vec![table];
    if pme.dump_states {
        tables.push(states_table);
    }
    let summary = extend(
        header(config, &model),
        json!({
            "phi": pme.phi,
            "initial": config.pme_initial(),
            "steps_per_output": pme.steps_per_output,
            "max_mass_defect": worst_defect,
            "passed": failure.is_none(),
        }),
    );
    Ok((
        Artifacts {
            tables,
            documents,
            summary,
        },
        failure,
    ))
}

struct Checks {
    table: Table,
    failed: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Self {
            table: Table::new("verify", &["check", "value", "tol", "passed"]),
            failed: Vec::new(),
        }
    }

    fn record(&mut self, name: &str, value: f64, tol: f64) {
        let ok = value.is_finite() && value < tol;
        if !ok {
            self.failed.push(format!("{name}: {value:e} (tol {tol:e})"));
        }
        self.table
            .push(vec![name.into(), value.into(), tol.into(), ok.into()]);
    }
}

fn max_gap(a: &GridFunction, b: &GridFunction) -> Result<f64, CliError> {
    Ok(a.sub(b)?.max_abs())
}

fn verify(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let model = config.model()?;
    let alpha = config.alpha();
    let seed = config.seed.unwrap_or(0);
    let random = |k: u64, lo: f64| {
        make_initial(
            model,
            &InitialSpec::Random {
                seed: seed + k,
                lo,
                hi: 1.0,
            },
        )
    };
    let mut c = Checks::new();

    if model.order() <= EIGEN_CAP {
        let mut ev: Vec<f64> = SymmetricEigen::new(build_matrix(&model, alpha)?)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        let expect = closed_form_spectrum(&model, alpha)?;
        let scale = expect.last().copied().unwrap_or(1.0).max(1.0);
        let err = ev
            .iter()
            .zip(&expect)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        c.record("spectrum_relative_error", err / scale, 1e-12);
    }

    let mut rep = 0.0f64;
    for k in 0..10 {
        let u = random(k, -1.0)?;
        let reference = apply_hypersingular(&u, alpha)?;
        let scale = reference.max_abs();
        for other in [
            apply_spectral(&u, alpha)?,
            convolve_riesz(&u, alpha)?,
            apply_global_restriction(&u, alpha)?,
        ] {
            rep = rep.max(max_gap(&other, &reference)? / scale);
        }
    }
    c.record("representations_relative_gap", rep, 1e-10);

    let mult = SpectralMultiplier::new(model, alpha)?;
    let mut sym = 0.0f64;
    for k in 1..model.order() {
        let target = model.freq_abs(k)?.powf(alpha);
        sym = sym
            .max(((symbol_quadrature(&model, alpha, k)? + mult.lambda() - target) / target).abs());
    }
    c.record("symbol_identity_relative_error", sym, 1e-11);

    // Times on the scale where the c-series stays well conditioned.
    let eval = KernelEvaluator::for_model(&model, alpha)?;
    let scale_t = (model.p() as f64).powf(alpha * model.radius() as f64);
    let n = model.radius();
    let (mut route, mut norm) = (0.0f64, 0.0f64);
    for t in [0.1, 1.0, 10.0].map(|t| t * scale_t) {
        for m in n - 6..=n {
            let r = Radius::Level(m);
            route = route
                .max((eval.heat_kernel_ball(t, r)? - eval.heat_kernel_ball_via_c(t, r)?).abs());
        }
        norm = norm.max((eval.heat_kernel_ball_integral(t)? - 1.0).abs());
    }
    c.record(
        "heat_kernel_route_gap",
        route * (model.p() as f64).powi(n),
        1e-10,
    );
    c.record("heat_kernel_normalization", norm, 1e-10);

    let (t1, t2) = (0.3 * scale_t, 0.7 * scale_t);
    let ck = ball_kernel_gridfunction(&model, alpha, t1)?
        .convolve(&ball_kernel_gridfunction(&model, alpha, t2)?)?
        .sub(&ball_kernel_gridfunction(&model, alpha, t1 + t2)?)?
        .max_abs();
    c.record(
        "chapman_kolmogorov",
        ck / ball_kernel_gridfunction(&model, alpha, t1 + t2)?.max_abs(),
        1e-9,
    );

    let u = random(20, -1.0)?;
    let mut res = 0.0f64;
    for mu in [0.1, 1.0, 10.0] {
        res = res.max(max_gap(
            &resolvent_apply(&u, alpha, mu)?,
            &resolvent_spectral(&u, alpha, mu)?,
        )?);
    }
    c.record("resolvent_path_gap", res, 1e-10);
    let one = GridFunction::constant(model, 1.0);
    c.record(
        "resolvent_of_constant",
        resolvent_apply(&one, alpha, 2.0)?
            .map(|v| v - 0.5)
            .max_abs(),
        1e-13,
    );

    let u0 = random(30, 0.0)?;
    let times: Vec<f64> = [0.1, 1.0, 10.0].iter().map(|t| t * scale_t).collect();
    let lin = LinearEvolution::new(alpha, times, EvolutionPath::Spectral)?;
    c.record("linear_path_gap", lin.path_disagreement(&u0)?, 1e-9);
    let end = fourier_ball::forward(&lin.run(&u0)?.pop().expect("nonempty"));
    c.record(
        "linear_mass_drift",
        (end.coeffs()[0].re - fourier_ball::forward(&u0).coeffs()[0].re).abs(),
        1e-13,
    );

    let mut plancherel = 0.0f64;
    let mut round = 0.0f64;
    for k in 0..3 {
        let u = random(40 + k, -1.0)?;
        let spec = fourier_ball::forward(&u);
        round = round.max(max_gap(&fourier_ball::inverse(&spec), &u)?);
        let lhs = u.lp_norm(2.0)?.powi(2) / model.ball_measure();
        let rhs: f64 = spec.coeffs().iter().map(|z| z.norm_sqr()).sum();
        plancherel = plancherel.max(((lhs - rhs) / lhs).abs());
    }
    c.record("fft_round_trip", round, 1e-12);
    c.record("plancherel", plancherel, 1e-12);

    let phi = padic_heat::Nonlinearity::Power { exponent: 2.0 };
    let bump = make_initial(
        model,
        &InitialSpec::PositiveBump {
            center: 0,
            radius: (-model.resolution()).max(n - 2),
        },
    )?;
    let other = random(50, 0.5)?;
    let mut defect = 0.0f64;
    let (mut u, mut v) = (bump.clone(), other.clone());
    let d0 = other.sub(&bump)?.lp_norm(1.0)?;
    let mut growth = 0.0f64;
    let mut contraction = f64::NEG_INFINITY;
    let h_total = 0.1 * scale_t;
    for _ in 0..5 {
        let before = norms(&u)?;
        u = evolve_pme_with(
            &u,
            h_total,
            8,
            alpha,
            &phi,
            &Default::default(),
            |rec, _| {
                defect = defect.max(rec.mass_defect.abs());
            },
        )?;
        v = evolve_pme_with(&v, h_total, 8, alpha, &phi, &Default::default(), |_, _| {})?;
        let after = norms(&u)?;
        for i in 0..4 {
            growth = growth.max(after[i] - before[i]);
        }
        contraction = contraction.max(v.sub(&u)?.lp_norm(1.0)? - d0);
    }
    c.record(
        "pme_mass_identity",
        defect,
        1e-12 * bump.lp_norm(1.0)?.max(1.0),
    );
    c.record("pme_lgamma_growth", growth.max(0.0), 1e-12);
    c.record("pme_l1_contraction_excess", contraction.max(0.0), 1e-10);

    let failure = if c.failed.is_empty() {
        None
    } else {
        Some(CliError::Consistency(format!(
            "verify failed: {}",
            c.failed.join("; ")
        )))
    };
    let summary = extend(
        header(config, &model),
        json!({ "checks": c.table.rows.len(), "failed": c.failed, "passed": failure.is_none() }),
    );
    Ok((
        Artifacts {
            tables: vec![c.table],
            documents: vec![],
            summary,
        },
        failure,
    ))
}
