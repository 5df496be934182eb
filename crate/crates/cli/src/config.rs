//! Experiment configuration: a TOML file, overridden by command-line flags.

use std::path::PathBuf;

use padic_heat::{BallModel, EvolutionPath, ImplicitStepConfig, InitialSpec, Nonlinearity};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Spectrum,
    HeatKernel,
    Green,
    SolveLinear,
    SolvePme,
    Verify,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Spectrum => "spectrum",
            Task::HeatKernel => "heat-kernel",
            Task::Green => "green",
            Task::SolveLinear => "solve-linear",
            Task::SolvePme => "solve-pme",
            Task::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub p: u64,
    pub radius: i32,
    pub resolution: i32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            p: 2,
            radius: 0,
            resolution: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub alpha: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatKernelConfig {
    pub times: Vec<f64>,
    /// Levels `m` of `|x|_p = p^m`; defaults to `N, N-1, ..., N-6`.
    pub levels: Option<Vec<i32>>,
}

impl Default for HeatKernelConfig {
    fn default() -> Self {
        Self {
            times: vec![0.1, 1.0, 10.0],
            levels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreenConfig {
    /// Orders to tabulate; defaults to `[0.5, 1, 2]`.
    pub alphas: Vec<f64>,
    pub mu: Vec<f64>,
    pub m_lo: i32,
    /// Defaults to `N`.
    pub m_hi: Option<i32>,
}

impl Default for GreenConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.5, 1.0, 2.0],
            mu: vec![1.0],
            m_lo: -25,
            m_hi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub times: Vec<f64>,
    pub path: EvolutionPath,
    pub initial: InitialSpec,
    /// Also write every state at every output time.
    pub dump_states: bool,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            times: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            path: EvolutionPath::Spectral,
            initial: InitialSpec::Random {
                seed: 0,
                lo: 0.0,
                hi: 1.0,
            },
            dump_states: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmeConfig {
    pub phi: Nonlinearity,
    pub initial: InitialSpec,
    pub times: Vec<f64>,
    /// Backward-Euler steps between consecutive output times.
    pub steps_per_output: usize,
    /// Run the Crandall-Liggett doubling study to the final time.
    pub convergence_study: bool,
    pub newton: ImplicitStepConfig,
    pub dump_states: bool,
}

impl Default for PmeConfig {
    fn default() -> Self {
        Self {
            phi: Nonlinearity::Power { exponent: 2.0 },
            initial: InitialSpec::PositiveBump {
                center: 0,
                radius: -3,
            },
            times: (1..=10).map(|i| i as f64 / 10.0).collect(),
            steps_per_output: 10,
            convergence_study: false,
            newton: ImplicitStepConfig::default(),
            dump_states: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub format: Format,
}

/// The whole run description after merging file and flags.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Option<Task>,
    pub model: ModelConfig,
    pub operator: OperatorConfig,
    /// Seed for every random input; replaces seeds in `initial` specs.
    pub seed: Option<u64>,
    /// Main tolerance of the task (see the README for its meaning per task).
    pub tol: Option<f64>,
    pub heat_kernel: HeatKernelConfig,
    pub green: GreenConfig,
    pub linear: LinearConfig,
    pub pme: PmeConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn model(&self) -> Result<BallModel, CliError> {
        Ok(BallModel::new(
            self.model.p,
            self.model.radius,
            self.model.resolution,
        )?)
    }

    pub fn alpha(&self) -> f64 {
        self.operator.alpha
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("padic-heat-out"))
    }

    pub fn linear_initial(&self) -> InitialSpec {
        with_seed(&self.linear.initial, self.seed)
    }

    pub fn pme_initial(&self) -> InitialSpec {
        with_seed(&self.pme.initial, self.seed)
    }

    /// Checks everything that can be checked before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        let model = self.model()?;
        let alpha = self.alpha();
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(CliError::Validation(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if let Some(tol) = self.tol {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(CliError::Validation(format!(
                    "tol must be positive, got {tol}"
                )));
            }
        }
        let Some(task) = self.task else {
            return Err(CliError::Validation("no task given".into()));
        };
        let increasing = |name: &str, times: &[f64]| -> Result<(), CliError> {
            if times.is_empty() {
                return Err(CliError::Validation(format!(
                    "{name}: at least one time is required"
                )));
            }
            let mut prev = 0.0;
            for &t in times {
                if !(t.is_finite() && t > prev) {
                    return Err(CliError::Validation(format!(
                        "{name}: times must be positive and strictly increasing"
                    )));
                }
                prev = t;
            }
            Ok(())
        };
        match task {
            Task::Spectrum | Task::Verify => {}
            Task::HeatKernel => {
                increasing("heat_kernel.times", &self.heat_kernel.times)?;
                if let Some(levels) = &self.heat_kernel.levels {
                    if levels.iter().any(|&m| m > model.radius()) {
                        return Err(CliError::Validation(
                            "heat_kernel.levels must be <= N".into(),
                        ));
                    }
                }
            }
            Task::Green => {
                let g = &self.green;
                if g.alphas.is_empty() || g.alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return Err(CliError::Validation("green.alphas must be positive".into()));
                }
                if g.mu.is_empty() || g.mu.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                    return Err(CliError::Validation("green.mu must be positive".into()));
                }
                let hi = g.m_hi.unwrap_or(model.radius());
                if g.m_lo > hi || hi > model.radius() {
                    return Err(CliError::Validation("green: need m_lo <= m_hi <= N".into()));
                }
            }
            Task::SolveLinear => {
                increasing("linear.times", &self.linear.times)?;
                padic_heat::make_initial(model, &self.linear_initial())?;
            }
            Task::SolvePme => {
                increasing("pme.times", &self.pme.times)?;
                if self.pme.steps_per_output == 0 {
                    return Err(CliError::Validation(
                        "pme.steps_per_output must be positive".into(),
                    ));
                }
                self.pme.phi.validate()?;
                self.pme.newton.validate()?;
                padic_heat::make_initial(model, &self.pme_initial())?;
            }
        }
        Ok(())
    }
}

fn with_seed(spec: &InitialSpec, seed: Option<u64>) -> InitialSpec {
    match (spec, seed) {
        (InitialSpec::Random { lo, hi, .. }, Some(seed)) => InitialSpec::Random {
            seed,
            lo: *lo,
            hi: *hi,
        },
        _ => spec.clone(),
    }
}
