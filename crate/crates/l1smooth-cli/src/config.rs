//! Experiment configuration: TOML schema, validation, and model construction.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use l1smooth::model::{LinearModel, NonlinearModel};
use l1smooth::splitting::{SplittingConfig, Variant};
use l1smooth::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LinearTracking,
    CoordinatedTurn,
    Tomography,
    LambdaSweep,
    Scaling,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::LinearTracking => "linear-tracking",
            ExperimentKind::CoordinatedTurn => "coordinated-turn",
            ExperimentKind::Tomography => "tomography",
            ExperimentKind::LambdaSweep => "lambda-sweep",
            ExperimentKind::Scaling => "scaling",
        }
    }

    pub fn all_names() -> &'static str {
        "linear-tracking, coordinated-turn, tomography, lambda-sweep, scaling"
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-tracking" => Ok(ExperimentKind::LinearTracking),
            "coordinated-turn" => Ok(ExperimentKind::CoordinatedTurn),
            "tomography" => Ok(ExperimentKind::Tomography),
            "lambda-sweep" => Ok(ExperimentKind::LambdaSweep),
            "scaling" => Ok(ExperimentKind::Scaling),
            other => Err(Error::Config(format!(
                "unknown experiment '{}'; valid names: {}",
                other,
                ExperimentKind::all_names()
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `linear-tracking`, `coordinated-turn`, or `file`.
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_qc")]
    pub qc: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Model config path used when `preset = "file"`.
    pub file: Option<PathBuf>,
}

fn default_preset() -> String {
    "linear-tracking".to_string()
}
fn default_dt() -> f64 {
    0.1
}
fn default_qc() -> f64 {
    0.5
}
fn default_sigma() -> f64 {
    0.2
}
fn default_steps() -> usize {
    100
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            dt: default_dt(),
            qc: default_qc(),
            sigma: default_sigma(),
            steps: default_steps(),
            file: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub alpha: Option<f64>,
    pub sbm_inner: Option<usize>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tol")]
    pub primal_tol: f64,
    #[serde(default = "default_tol")]
    pub dual_tol: f64,
    #[serde(default)]
    pub adaptive_rho: bool,
    pub ieks_max_iterations: Option<usize>,
    pub ieks_tol: Option<f64>,
}

fn default_variant() -> String {
    "admm".to_string()
}
fn default_lambda() -> f64 {
    1.0
}
fn default_rho() -> f64 {
    1.0
}
fn default_max_iterations() -> usize {
    20
}
fn default_tol() -> f64 {
    1e-6
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            variant: default_variant(),
            lambda: default_lambda(),
            rho: default_rho(),
            alpha: None,
            sbm_inner: None,
            tau: None,
            gamma: None,
            max_iterations: default_max_iterations(),
            primal_tol: default_tol(),
            dual_tol: default_tol(),
            adaptive_rho: false,
            ieks_max_iterations: None,
            ieks_tol: None,
        }
    }
}

impl SolverSection {
    pub fn to_splitting_config(&self) -> Result<SplittingConfig<f64>> {
        let variant = Variant::from_str(&self.variant)?;
        let mut config = SplittingConfig::new(variant, self.lambda, self.rho);
        if let Some(alpha) = self.alpha {
            config.alpha = alpha;
        }
        if let Some(m) = self.sbm_inner {
            config.sbm_inner = m;
        }
        config.tau = self.tau;
        config.gamma = self.gamma;
        config.max_iterations = self.max_iterations;
        config.primal_tol = self.primal_tol;
        config.dual_tol = self.dual_tol;
        config.adaptive_rho = self.adaptive_rho;
        if let Some(i) = self.ieks_max_iterations {
            config.ieks_max_iterations = i;
        }
        if let Some(tol) = self.ieks_tol {
            config.ieks_tol = tol;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Explicit grid; when absent a log-spaced grid is generated.
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_lambda_count")]
    pub lambda_count: usize,
    #[serde(default = "default_lambda_min")]
    pub lambda_min: f64,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
}

fn default_lambda_count() -> usize {
    50
}
fn default_lambda_min() -> f64 {
    0.01
}
fn default_lambda_max() -> f64 {
    10.0
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lambda_grid: None,
            lambda_count: default_lambda_count(),
            lambda_min: default_lambda_min(),
            lambda_max: default_lambda_max(),
        }
    }
}

impl SweepSection {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() {
                return Err(Error::Config("lambda grid must be nonempty".to_string()));
            }
            return Ok(grid.clone());
        }
        if self.lambda_count == 0 || self.lambda_min <= 0.0 || self.lambda_max < self.lambda_min {
            return Err(Error::Config(
                "lambda grid bounds must satisfy 0 < min <= max with count >= 1".to_string(),
            ));
        }
        if self.lambda_count == 1 {
            return Ok(vec![self.lambda_min]);
        }
        let (lo, hi) = (self.lambda_min.ln(), self.lambda_max.ln());
        Ok((0..self.lambda_count)
            .map(|i| (lo + (hi - lo) * i as f64 / (self.lambda_count - 1) as f64).exp())
            .collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<usize>,
    #[serde(default = "default_budget")]
    pub iterations: usize,
    #[serde(default = "default_dense_limit")]
    pub dense_limit: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_t_grid() -> Vec<usize> {
    vec![1_000, 10_000, 100_000, 1_000_000]
}
fn default_budget() -> usize {
    10
}
fn default_dense_limit() -> usize {
    l1smooth::batch::DEFAULT_DENSE_LIMIT
}
fn default_repeats() -> usize {
    3
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self {
            t_grid: default_t_grid(),
            iterations: default_budget(),
            dense_limit: default_dense_limit(),
            repeats: default_repeats(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySection {
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_angles")]
    pub angles: usize,
    #[serde(default = "default_detectors")]
    pub detectors: usize,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Random-walk process noise intensity of the dynamic reconstruction model.
    #[serde(default = "default_walk")]
    pub walk_intensity: f64,
    /// Optional image blob to reconstruct instead of the generated phantom.
    pub images: Option<PathBuf>,
    /// Also run the unregularized baseline for PSNR comparison.
    #[serde(default = "default_true")]
    pub baseline: bool,
}

fn default_side() -> usize {
    32
}
fn default_frames() -> usize {
    4
}
fn default_angles() -> usize {
    30
}
fn default_detectors() -> usize {
    32
}
fn default_noise() -> f64 {
    0.02
}
fn default_walk() -> f64 {
    0.01
}
fn default_true() -> bool {
    true
}

impl Default for TomographySection {
    fn default() -> Self {
        Self {
            side: default_side(),
            frames: default_frames(),
            angles: default_angles(),
            detectors: default_detectors(),
            noise_sigma: default_noise(),
            walk_intensity: default_walk(),
            images: None,
            baseline: default_true(),
        }
    }
}

/// Top-level experiment configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub scaling: ScalingSection,
    #[serde(default)]
    pub tomography: TomographySection,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

/// Which model the experiment solves with.
pub enum BuiltModel {
    Linear(LinearModel<f64>),
    Nonlinear(NonlinearModel<f64>),
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        // Resolve a relative model file against the config location.
        if let Some(file) = &config.model.file {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    config.model.file = Some(dir.join(file));
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".to_string()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".to_string()));
        }
        if self.scaling.t_grid.is_empty() {
            return Err(Error::Config("scaling t_grid must be nonempty".to_string()));
        }
        if self.scaling.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("scaling t_grid must be ascending".to_string()));
        }
        self.sweep.grid()?;
        self.solver.to_splitting_config()?;
        Ok(())
    }

    /// Build the solver model described by the `[model]` section.
    pub fn build_model(&self) -> Result<BuiltModel> {
        match self.model.preset.as_str() {
            "linear-tracking" => Ok(BuiltModel::Linear(l1smooth::presets::linear_tracking_model(
                self.model.dt,
                self.model.qc,
                self.model.sigma,
                self.model.steps,
            )?)),
            "coordinated-turn" => Ok(BuiltModel::Nonlinear(
                l1smooth::presets::coordinated_turn_model(
                    self.model.dt,
                    self.model.qc,
                    self.model.sigma,
                    self.model.steps,
                )?,
            )),
            "file" => {
                let path = self.model.file.as_ref().ok_or_else(|| {
                    Error::Config("model.preset = \"file\" requires model.file".to_string())
                })?;
                Ok(BuiltModel::Linear(l1smooth::io::load_linear_model(path)?))
            }
            other => Err(Error::Config(format!(
                "unknown model preset '{other}' (expected linear-tracking, coordinated-turn, or file)"
            ))),
        }
    }
}
