//! Covariance spectra and ground-truth vectors.
//!
//! The covariance is always diagonal (its eigenvectors are the standard basis),
//! so a [`Spectrum`] is just the sorted list of eigenvalues and a
//! [`GroundTruth`] holds the coefficients of `w0` in that basis.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::standard_normal_vector;
use crate::rng::StreamRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("power-law exponent beta must exceed 1 (got {0})")]
    BetaTooSmall(f64),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("source exponent r must be non-negative (got {0})")]
    NegativeSource(f64),
    #[error("ground-truth norm must be positive (got {0})")]
    NonPositiveNorm(f64),
    #[error("eigenvalues must be finite, non-negative, sorted descending with a positive leading value")]
    InvalidEigenvalues,
    #[error("dimension mismatch: spectrum has d={spectrum}, vector has {other}")]
    DimensionMismatch { spectrum: usize, other: usize },
    #[error("noise levels must be non-negative")]
    NegativeNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumKind {
    Isotropic,
    PowerLaw { beta: f64 },
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    kind: SpectrumKind,
}

impl Spectrum {
    pub fn isotropic(d: usize) -> Result<Self, SpectrumError> {
        if d == 0 {
            return Err(SpectrumError::ZeroDimension);
        }
        Ok(Self {
            eigenvalues: vec![1.0; d],
            kind: SpectrumKind::Isotropic,
        })
    }

    /// `lambda_j = j^(-beta)` exactly, `j = 1..=d`.
    pub fn power_law(d: usize, beta: f64) -> Result<Self, SpectrumError> {
        if d == 0 {
            return Err(SpectrumError::ZeroDimension);
        }
        if !(beta > 1.0) || !beta.is_finite() {
            return Err(SpectrumError::BetaTooSmall(beta));
        }
        let eigenvalues = (1..=d).map(|j| (j as f64).powf(-beta)).collect();
        Ok(Self {
            eigenvalues,
            kind: SpectrumKind::PowerLaw { beta },
        })
    }

    pub fn explicit(eigenvalues: Vec<f64>) -> Result<Self, SpectrumError> {
        if eigenvalues.is_empty() {
            return Err(SpectrumError::ZeroDimension);
        }
        let sorted = eigenvalues.windows(2).all(|w| w[0] >= w[1]);
        let valid = eigenvalues.iter().all(|l| l.is_finite() && *l >= 0.0);
        if !sorted || !valid || !(eigenvalues[0] > 0.0) {
            return Err(SpectrumError::InvalidEigenvalues);
        }
        Ok(Self {
            eigenvalues,
            kind: SpectrumKind::Explicit,
        })
    }

    pub fn d(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    pub fn is_isotropic(&self) -> bool {
        matches!(self.kind, SpectrumKind::Isotropic)
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Number of strictly positive eigenvalues.
    pub fn rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l > 0.0).count()
    }
}

/// Source exponents of a power-law ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceExponents {
    pub r: f64,
    /// `1 + beta (2r - 1)`
    pub delta: f64,
}

impl SourceExponents {
    pub fn new(beta: f64, r: f64) -> Self {
        Self {
            r,
            delta: 1.0 + beta * (2.0 * r - 1.0),
        }
    }

    pub fn r_lower(&self) -> f64 {
        self.r.min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    coefficients: Vec<f64>,
    source: Option<SourceExponents>,
}

impl GroundTruth {
    pub fn new(coefficients: Vec<f64>) -> Self {
        Self {
            coefficients,
            source: None,
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn source(&self) -> Option<SourceExponents> {
        self.source
    }

    pub fn d(&self) -> usize {
        self.coefficients.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }

    pub fn to_dvector(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_column_slice(&self.coefficients)
    }
}

/// Label noise of the generator stages (`sigma0`) and of the final sample (`sigma`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub sigma0: f64,
    pub sigma: f64,
}

impl NoiseLevels {
    pub fn new(sigma0: f64, sigma: f64) -> Result<Self, SpectrumError> {
        if !(sigma0 >= 0.0) || !(sigma >= 0.0) {
            return Err(SpectrumError::NegativeNoise);
        }
        Ok(Self { sigma0, sigma })
    }
}

/// Capacity/source pair: `lambda_j = j^-beta`, `c_j = j^(-delta/2)`.
pub fn make_power_law(d: usize, beta: f64, r: f64) -> Result<(Spectrum, GroundTruth), SpectrumError> {
    if !(r >= 0.0) {
        return Err(SpectrumError::NegativeSource(r));
    }
    let spectrum = Spectrum::power_law(d, beta)?;
    let source = SourceExponents::new(beta, r);
    let coefficients = (1..=d).map(|j| (j as f64).powf(-source.delta / 2.0)).collect();
    Ok((
        spectrum,
        GroundTruth {
            coefficients,
            source: Some(source),
        },
    ))
}

/// Direction of the isotropic ground truth. Isotropic results only depend on
/// its norm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsotropicDirection {
    /// `(1, ..., 1) / sqrt(d)`
    #[default]
    Uniform,
    /// Uniformly random unit vector drawn from the given seed.
    Random { seed: u64 },
}

pub fn make_isotropic(d: usize, w0_norm: f64) -> Result<(Spectrum, GroundTruth), SpectrumError> {
    make_isotropic_with(d, w0_norm, IsotropicDirection::Uniform)
}

pub fn make_isotropic_with(
    d: usize,
    w0_norm: f64,
    direction: IsotropicDirection,
) -> Result<(Spectrum, GroundTruth), SpectrumError> {
    if !(w0_norm > 0.0) {
        return Err(SpectrumError::NonPositiveNorm(w0_norm));
    }
    let spectrum = Spectrum::isotropic(d)?;
    let coefficients = match direction {
        IsotropicDirection::Uniform => vec![w0_norm / (d as f64).sqrt(); d],
        IsotropicDirection::Random { seed } => {
            let mut rng = StreamRng::seed_from_u64(seed);
            let mut v = standard_normal_vector(d, &mut rng);
            let norm = v.norm();
            v *= w0_norm / norm;
            v.iter().cloned().collect()
        }
    };
    Ok((spectrum, GroundTruth::new(coefficients)))
}

/// `sum_j lambda_j c_j^2`, the squared Mahalanobis norm of `w0`.
pub fn sigma_norm_sq(s: &Spectrum, g: &GroundTruth) -> Result<f64, SpectrumError> {
    if s.d() != g.d() {
        return Err(SpectrumError::DimensionMismatch {
            spectrum: s.d(),
            other: g.d(),
        });
    }
    Ok(s.eigenvalues.iter().zip(&g.coefficients).map(|(l, c)| l * c * c).sum())
}

/// Config-file description of a spectrum together with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumSpec {
    Isotropic {
        d: usize,
        #[serde(default = "default_w0_norm")]
        w0_norm: f64,
        #[serde(default)]
        direction: IsotropicDirection,
    },
    PowerLaw {
        d: usize,
        beta: f64,
        r: f64,
    },
    Explicit {
        eigenvalues: Vec<f64>,
        coefficients: Vec<f64>,
    },
}

fn default_w0_norm() -> f64 {
    1.0
}

impl SpectrumSpec {
    pub fn build(&self) -> Result<(Spectrum, GroundTruth), SpectrumError> {
        match self {
            SpectrumSpec::Isotropic { d, w0_norm, direction } => make_isotropic_with(*d, *w0_norm, *direction),
            SpectrumSpec::PowerLaw { d, beta, r } => make_power_law(*d, *beta, *r),
            SpectrumSpec::Explicit {
                eigenvalues,
                coefficients,
            } => {
                let s = Spectrum::explicit(eigenvalues.clone())?;
                if coefficients.len() != s.d() {
                    return Err(SpectrumError::DimensionMismatch {
                        spectrum: s.d(),
                        other: coefficients.len(),
                    });
                }
                Ok((s, GroundTruth::new(coefficients.clone())))
            }
        }
    }

    pub fn d(&self) -> usize {
        match self {
            SpectrumSpec::Isotropic { d, .. } | SpectrumSpec::PowerLaw { d, .. } => *d,
            SpectrumSpec::Explicit { eigenvalues, .. } => eigenvalues.len(),
        }
    }
}
