//! JSON run configuration and the built-in figure presets.

use std::fs;
use std::path::{Path, PathBuf};

use collapse_core::{DesignMode, Kernel, SpectrumSpec, SweepSpec};
use serde::Deserialize;

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

pub const PRESETS: &[(&str, &str)] = &[
    ("fig1", include_str!("../presets/fig1.json")),
    ("fig2", include_str!("../presets/fig2.json")),
    ("fig3", include_str!("../presets/fig3.json")),
    ("fig4", include_str!("../presets/fig4.json")),
];

/// A configuration document. Each command reads its own section; sections it
/// does not use are ignored, unknown keys are rejected.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub predict: Option<PredictConfig>,
    #[serde(default)]
    pub scaling: Option<ScalingConfig>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub mnist: Option<MnistSection>,
    #[serde(default)]
    pub slope: Option<SlopeConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoForm {
    /// Pick the closed form that applies to `T0` and `d`.
    #[default]
    Auto,
    /// Insist on the `T0 > d` form; fails when the generators are over-parametrized.
    UnderParametrized,
}

/// Test-error decomposition at a single `(n, T0, T, lambda)` point.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub spectrum: SpectrumSpec,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub t0: Option<usize>,
    pub t: usize,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Alternative to `lambda`: `lambda = T^-ell`.
    #[serde(default)]
    pub ell: Option<f64>,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub sigma0: f64,
    #[serde(default)]
    pub design_mode: DesignMode,
    #[serde(default)]
    pub finite_size_rho: bool,
    #[serde(default)]
    pub rho_form: RhoForm,
}

/// Power-law scaling exponents, with `n ~ T^a` and `T0 ~ T^b`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub beta: f64,
    pub r: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    /// Exponent at which slopes are reported; defaults to `ell_crit`.
    #[serde(default)]
    pub ell: Option<f64>,
    /// Generator signal-to-noise ratio and `d/T0`, for the null-predictor crossover.
    #[serde(default)]
    pub snr0: Option<f64>,
    #[serde(default)]
    pub phi0: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub runs: Vec<SweepSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSection {
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory holding the IDX files; overrides `COLLAPSE_LAB_DATA`.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    pub runs: Vec<MnistRun>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedEll {
    Crit,
    Star,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum EllChoice {
    Value(f64),
    Named(NamedEll),
}

/// Capacity and source exponents of the kernel spectrum.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Capacity {
    pub beta: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistRun {
    pub kernel: Kernel,
    /// Needed when `ells` names `crit` or `star`.
    #[serde(default)]
    pub capacity: Option<Capacity>,
    pub t0: usize,
    pub n_grid: Vec<usize>,
    pub t_grid: Vec<usize>,
    pub ells: Vec<EllChoice>,
    /// Generator ridge exponent; omitted means a ridgeless generator.
    #[serde(default)]
    pub generator_ell: Option<f64>,
    #[serde(default = "one")]
    pub sigma0: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "ten")]
    pub replicates: usize,
    #[serde(default = "test_size")]
    pub test_size: usize,
    #[serde(default)]
    pub test_label_noise: bool,
    pub seed: u64,
}

fn ten() -> usize {
    10
}

fn test_size() -> usize {
    10_000
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub ell: Option<f64>,
    #[serde(default)]
    pub t_min: Option<f64>,
    #[serde(default)]
    pub t_max: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "{origin}: unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
            CliError::Config(format!("unknown preset `{name}` (available: {})", names.join(", ")))
        })?;
        Self::parse(text, &format!("preset {name}"))
    }
}
