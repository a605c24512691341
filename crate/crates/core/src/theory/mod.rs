//! Closed-form predictions for the test error of a ridge model trained on
//! `n`-fold synthetic data.
//!
//! The test error decomposes as
//!
//! ```text
//! E_test = Bias + DeltaBias + Var + n * sigma0^2 * rho
//! ```
//!
//! where `Bias + Var` is the clean-data ridge error, `rho` is the penalty paid
//! per generation of noisy relabelling and `DeltaBias` is the bias increase
//! caused by over-parametrized generators (`T0 < d`).

mod kappa;
mod scaling;

pub use kappa::{df, kappa_derivative, kappa_isotropic, solve_kappa, Kappa};
pub use scaling::{exponents, null_crossover, scaling_law, ScalingExponents, ScalingLaw, ScalingSlopes, T0Schedule};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulate::DesignMode;
use crate::spectra::{GroundTruth, NoiseLevels, Spectrum};
use kappa::trace_ratio;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("divergent prediction: df_2(kappa) = {df2} >= T = {t}")]
    Divergent { df2: f64, t: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("kappa solver did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: spectrum d={spectrum}, ground truth d={truth}")]
    DimensionMismatch { spectrum: usize, truth: usize },
    #[error("no closed form applies: {0}")]
    NotApplicable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub n: usize,
    pub sigma0: f64,
    pub bias: f64,
    pub variance: f64,
    pub rho: f64,
    pub delta_bias: f64,
    pub total: f64,
    /// The bias with synthetic data is only bounded below by `bias + delta_bias`
    /// when the generators are over-parametrized.
    pub lower_bound: bool,
}

impl TheoryPrediction {
    pub fn rho_term(&self) -> f64 {
        self.n as f64 * self.sigma0 * self.sigma0 * self.rho
    }

    pub fn clean(&self) -> f64 {
        self.bias + self.variance
    }
}

fn check_dims(s: &Spectrum, g: &GroundTruth) -> Result<(), TheoryError> {
    if s.d() != g.d() {
        return Err(TheoryError::DimensionMismatch {
            spectrum: s.d(),
            truth: g.d(),
        });
    }
    Ok(())
}

/// Clean-data ridge bias and variance:
///
/// ```text
/// bias = kappa^2 sum_j l_j c_j^2 / (l_j + kappa)^2 / (1 - df_2/T)
/// var  = sigma^2 (df_2 / T) / (1 - df_2 / T)
/// ```
pub fn clean_bias_variance(
    s: &Spectrum,
    g: &GroundTruth,
    t: usize,
    lambda: f64,
    sigma: f64,
) -> Result<(f64, f64), TheoryError> {
    check_dims(s, g)?;
    let kappa = solve_kappa(lambda, t, s)?.value;
    clean_bias_variance_at(s, g, t, kappa, sigma)
}

fn clean_bias_variance_at(
    s: &Spectrum,
    g: &GroundTruth,
    t: usize,
    kappa: f64,
    sigma: f64,
) -> Result<(f64, f64), TheoryError> {
    let tf = t as f64;
    let df2 = df(s, kappa, 2);
    if df2 >= tf {
        return Err(TheoryError::Divergent { df2, t });
    }
    let amplification = 1.0 / (1.0 - df2 / tf);
    let weighted: f64 = if kappa == 0.0 {
        0.0
    } else {
        s.eigenvalues()
            .iter()
            .zip(g.coefficients())
            .map(|(&l, &c)| l * c * c / ((l + kappa) * (l + kappa)))
            .sum()
    };
    let bias = kappa * kappa * weighted * amplification;
    let variance = sigma * sigma * (df2 / tf) * amplification;
    Ok((bias, variance))
}

/// Per-generation penalty `rho` for generators trained on `T0` samples.
///
/// For `T0 > d` this is the under-parametrized form
/// `df_2/(T0 - d) + kappa^2 tr(Sigma + kappa)^-2 / (T0 - d) * df_2 / (T - df_2)`;
/// otherwise the general form with `kappa0 = kappa(0, T0)`. The general form
/// assumes either `T0 >= d` or a design shared across generations.
pub fn rho(s: &Spectrum, t0: usize, t: usize, lambda: f64) -> Result<f64, TheoryError> {
    let d = s.d();
    if t0 == 0 {
        return Err(TheoryError::InvalidInput("T0 must be positive".into()));
    }
    if t0 == d {
        return Err(TheoryError::DegenerateInput(format!(
            "T0 = d = {d}: rho has a zero divisor"
        )));
    }
    let kappa = solve_kappa(lambda, t, s)?.value;
    if t0 > d {
        rho_underparametrized(s, t0 as f64 - d as f64, t, kappa)
    } else {
        let kappa0 = solve_kappa(0.0, t0, s)?.value;
        rho_general(s, t0, t, kappa, kappa0)
    }
}

/// `rho` for `T0 >= d + 2` with the exact inverse-Wishart divisor `T0 - d - 1`
/// in place of `T0 - d`. Falls back to [`rho`] when `T0 < d + 2`.
pub fn rho_finite_size(s: &Spectrum, t0: usize, t: usize, lambda: f64) -> Result<f64, TheoryError> {
    let d = s.d();
    if t0 < d + 2 {
        return rho(s, t0, t, lambda);
    }
    let kappa = solve_kappa(lambda, t, s)?.value;
    rho_underparametrized(s, (t0 - d - 1) as f64, t, kappa)
}

fn rho_underparametrized(s: &Spectrum, divisor: f64, t: usize, kappa: f64) -> Result<f64, TheoryError> {
    let tf = t as f64;
    let df2 = df(s, kappa, 2);
    if df2 >= tf {
        return Err(TheoryError::Divergent { df2, t });
    }
    let resolvent_sq = trace_ratio(s, kappa, 0, 2);
    let second = if kappa == 0.0 {
        0.0
    } else {
        kappa * kappa * resolvent_sq / divisor * df2 / (tf - df2)
    };
    Ok(df2 / divisor + second)
}

/// General form with `kappa0 = kappa(0, T0)`:
///
/// ```text
/// rho = tr S^4 (S + k0)^-2 (S + k)^-2 / (T0 - df_2(k0))
///     + k^2 tr S^2 (S + k0)^-2 (S + k)^-2 / (T0 - df_2(k0)) * df_2(k) / (T - df_2(k))
/// ```
pub fn rho_general(s: &Spectrum, t0: usize, t: usize, kappa: f64, kappa0: f64) -> Result<f64, TheoryError> {
    let tf = t as f64;
    let df2 = df(s, kappa, 2);
    if df2 >= tf {
        return Err(TheoryError::Divergent { df2, t });
    }
    let df2_0 = df(s, kappa0, 2);
    let denom0 = t0 as f64 - df2_0;
    if denom0 <= 0.0 {
        return Err(TheoryError::DegenerateInput(format!(
            "T0 - df_2(kappa0) = {denom0} <= 0"
        )));
    }
    let mut fourth = 0.0;
    let mut second = 0.0;
    for &l in s.eigenvalues().iter().filter(|&&l| l > 0.0) {
        let w = 1.0 / ((l + kappa0) * (l + kappa0) * (l + kappa) * (l + kappa));
        fourth += l.powi(4) * w;
        second += l * l * w;
    }
    Ok(fourth / denom0 + kappa * kappa * second / denom0 * df2 / (tf - df2))
}

/// Bias increase from noiseless over-parametrized generators, isotropic
/// covariance, ridgeless limit. Returns `(|w_n|^2, delta_bias)`.
///
/// Shared design: `|w_n|^2 = |w0|^2 / phi0` and `delta = |w0|^2 (1 - 1/phi0)` when
/// `phi0 > 1`. Independent designs: the factor is `prod_m min(1/phi_m, 1)`.
pub fn delta_bias_noiseless(phis: &[f64], mode: DesignMode, w0_sq: f64) -> Result<(f64, f64), TheoryError> {
    if phis.iter().any(|&p| !(p > 0.0)) {
        return Err(TheoryError::InvalidInput("aspect ratios must be positive".into()));
    }
    if phis.is_empty() {
        return Ok((w0_sq, 0.0));
    }
    let factor = match mode {
        DesignMode::Shared => {
            let phi0 = phis[0];
            if phis.iter().any(|&p| p != phi0) {
                return Err(TheoryError::InvalidInput(
                    "shared design requires equal aspect ratios".into(),
                ));
            }
            (1.0 / phi0).min(1.0)
        }
        DesignMode::Independent => phis.iter().map(|&p| (1.0 / p).min(1.0)).product(),
    };
    Ok((w0_sq * factor, w0_sq * (1.0 - factor)))
}

/// Exact ridgeless error for generator sizes `T_m` and noises `sigma_m`:
/// `sigma^2 d/(T - d - 1) + sum_m sigma_m^2 d/(T_m - d - 1)`.
pub fn predict_ridgeless_per_generation(
    sizes: &[usize],
    noises: &[f64],
    d: usize,
    t: usize,
    sigma: f64,
) -> Result<f64, TheoryError> {
    if sizes.len() != noises.len() {
        return Err(TheoryError::InvalidInput("sizes and noises differ in length".into()));
    }
    let term = |size: usize, noise: f64| -> Result<f64, TheoryError> {
        if size < d + 2 {
            return Err(TheoryError::DegenerateInput(format!(
                "sample size {size} < d + 2 = {}",
                d + 2
            )));
        }
        Ok(noise * noise * d as f64 / (size - d - 1) as f64)
    };
    let mut total = term(t, sigma)?;
    for (&size, &noise) in sizes.iter().zip(noises) {
        total += term(size, noise)?;
    }
    Ok(total)
}

/// Large-`d` form of the ridgeless error: `sigma^2 phi/(1-phi) + n sigma0^2 phi0/(1-phi0)`.
pub fn ridgeless_asymptotic(phi: f64, phi0: f64, n: usize, sigma: f64, sigma0: f64) -> f64 {
    let mut e = sigma * sigma * phi / (1.0 - phi);
    if n > 0 {
        e += n as f64 * sigma0 * sigma0 * phi0 / (1.0 - phi0);
    }
    e
}

/// Options for [`predict_test_error_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PredictOptions {
    /// Use the exact divisor `T0 - d - 1` in `rho` when `T0 >= d + 2`.
    pub finite_size_rho: bool,
}

/// Full decomposition `bias + delta_bias + variance + n sigma0^2 rho`.
#[allow(clippy::too_many_arguments)]
pub fn predict_test_error(
    s: &Spectrum,
    g: &GroundTruth,
    n: usize,
    t0: usize,
    t: usize,
    lambda: f64,
    noise: NoiseLevels,
    mode: DesignMode,
) -> Result<TheoryPrediction, TheoryError> {
    predict_test_error_with(s, g, n, t0, t, lambda, noise, mode, PredictOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn predict_test_error_with(
    s: &Spectrum,
    g: &GroundTruth,
    n: usize,
    t0: usize,
    t: usize,
    lambda: f64,
    noise: NoiseLevels,
    mode: DesignMode,
    options: PredictOptions,
) -> Result<TheoryPrediction, TheoryError> {
    check_dims(s, g)?;
    let d = s.d();
    let kappa = solve_kappa(lambda, t, s)?.value;
    let (bias, variance) = clean_bias_variance_at(s, g, t, kappa, noise.sigma)?;
    let mut rho_value = 0.0;
    let mut delta_bias = 0.0;
    let mut lower_bound = false;
    if n > 0 {
        if t0 >= d {
            rho_value = if options.finite_size_rho {
                rho_finite_size(s, t0, t, lambda)?
            } else {
                rho(s, t0, t, lambda)?
            };
        } else {
            if mode == DesignMode::Independent && noise.sigma0 > 0.0 {
                return Err(TheoryError::NotApplicable(
                    "rho has no closed form for independent over-parametrized generators".into(),
                ));
            }
            if !s.is_isotropic() {
                return Err(TheoryError::NotApplicable(
                    "bias increase is only available for isotropic covariance".into(),
                ));
            }
            let kappa0 = solve_kappa(0.0, t0, s)?.value;
            rho_value = rho_general(s, t0, t, kappa, kappa0)?;
            let phi0 = d as f64 / t0 as f64;
            let phis = match mode {
                DesignMode::Shared => vec![phi0],
                DesignMode::Independent => vec![phi0; n],
            };
            delta_bias = delta_bias_noiseless(&phis, mode, g.norm_sq())?.1;
            lower_bound = true;
        }
    }
    let sigma0 = noise.sigma0;
    let total = bias + delta_bias + variance + n as f64 * sigma0 * sigma0 * rho_value;
    Ok(TheoryPrediction {
        n,
        sigma0,
        bias,
        variance,
        rho: rho_value,
        delta_bias,
        total,
        lower_bound,
    })
}
