//! `predict`: closed-form test error and scaling exponents.

use collapse_core::theory::{exponents, null_crossover, predict_test_error_with, PredictOptions};
use collapse_core::{DesignMode, NoiseLevels, ScalingExponents, TheoryError, TheoryPrediction};
use serde::Serialize;

use crate::config::{PredictConfig, RhoForm, RunConfig, ScalingConfig};
use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct TestErrorReport {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "T0")]
    pub t0: Option<usize>,
    #[serde(rename = "T")]
    pub t: usize,
    pub lambda: f64,
    pub ell: Option<f64>,
    pub phi: f64,
    pub phi0: Option<f64>,
    pub sigma: f64,
    pub sigma0: f64,
    pub design_mode: DesignMode,
    pub bias: f64,
    pub variance: f64,
    pub rho: f64,
    pub rho_term: f64,
    pub delta_bias: f64,
    pub total: f64,
    pub lower_bound: bool,
}

#[derive(Debug, Serialize)]
pub struct ScalingReport {
    #[serde(flatten)]
    pub exponents: ScalingExponents,
    pub clean_slope_noisy: f64,
    pub clean_slope_noiseless: f64,
    pub fake_slope: f64,
    pub null_crossover: Option<f64>,
}

#[derive(Debug, Default, Serialize)]
pub struct PredictReport {
    pub test_error: Option<TestErrorReport>,
    pub scaling: Option<ScalingReport>,
}

pub fn predict(cfg: &RunConfig) -> Result<PredictReport, CliError> {
    if cfg.predict.is_none() && cfg.scaling.is_none() {
        return Err(CliError::Config(
            "predict needs a `predict` or `scaling` section".into(),
        ));
    }
    Ok(PredictReport {
        test_error: cfg.predict.as_ref().map(test_error).transpose()?,
        scaling: cfg.scaling.as_ref().map(scaling).transpose()?,
    })
}

fn test_error(p: &PredictConfig) -> Result<TestErrorReport, CliError> {
    let (s, g) = p.spectrum.build()?;
    let d = s.d();
    let lambda = match (p.lambda, p.ell) {
        (Some(l), None) => l,
        (None, Some(e)) => (p.t as f64).powf(-e),
        _ => return Err(CliError::Config("give exactly one of `lambda` and `ell`".into())),
    };
    if p.t == 0 {
        return Err(CliError::Config("T must be positive".into()));
    }
    let t0 = match (p.n, p.t0) {
        (0, t0) => t0,
        (_, Some(t0)) if t0 > 0 => Some(t0),
        _ => return Err(CliError::Config("n > 0 needs a positive `t0`".into())),
    };
    if p.n > 0 && p.rho_form == RhoForm::UnderParametrized {
        let t0 = t0.unwrap_or_default();
        if t0 <= d {
            return Err(CliError::Theory(format!(
                "phi0 = d/T0 = {} >= 1: the under-parametrized rho diverges",
                d as f64 / t0 as f64
            )));
        }
    }
    let noise = NoiseLevels::new(p.sigma0, p.sigma)?;
    let options = PredictOptions {
        finite_size_rho: p.finite_size_rho,
    };
    let pred: TheoryPrediction = predict_test_error_with(
        &s,
        &g,
        p.n,
        t0.unwrap_or(p.t),
        p.t,
        lambda,
        noise,
        p.design_mode,
        options,
    )?;
    Ok(TestErrorReport {
        d,
        n: p.n,
        t0,
        t: p.t,
        lambda,
        ell: p.ell,
        phi: d as f64 / p.t as f64,
        phi0: t0.map(|t0| d as f64 / t0 as f64),
        sigma: p.sigma,
        sigma0: p.sigma0,
        design_mode: p.design_mode,
        bias: pred.bias,
        variance: pred.variance,
        rho: pred.rho,
        rho_term: pred.rho_term(),
        delta_bias: pred.delta_bias,
        total: pred.total,
        lower_bound: pred.lower_bound,
    })
}

fn scaling(c: &ScalingConfig) -> Result<ScalingReport, CliError> {
    let mut ex = exponents(c.beta, c.r, c.a, c.b)?;
    if let Some(ell) = c.ell {
        if !(0.0..c.beta).contains(&ell) {
            return Err(TheoryError::InvalidInput(format!("ell must lie in [0, beta), got {ell}")).into());
        }
        ex = ex.with_ell(ell);
    }
    let null_crossover = match (c.snr0, c.phi0) {
        (Some(snr0), Some(phi0)) => Some(null_crossover(snr0, phi0)?),
        (None, None) => None,
        _ => return Err(CliError::Config("`snr0` and `phi0` go together".into())),
    };
    Ok(ScalingReport {
        exponents: ex,
        clean_slope_noisy: ex.clean_slope(true),
        clean_slope_noiseless: ex.clean_slope(false),
        fake_slope: ex.fake_slope(),
        null_crossover,
    })
}

/// Compact decimal rendering: at most 10 decimals, trailing zeros dropped.
fn num(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-4 || x.abs() >= 1e6) {
        return format!("{x:.6e}");
    }
    let s = format!("{x:.10}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn render(report: &PredictReport) -> String {
    let mut out = String::new();
    if let Some(r) = &report.test_error {
        out.push_str(&format!("test error (d={}, n={}, T={}", r.d, r.n, r.t));
        if let Some(t0) = r.t0 {
            out.push_str(&format!(", T0={t0}"));
        }
        out.push_str(&format!(", lambda={}, {})\n", num(r.lambda), r.design_mode.as_str()));
        let rows = [
            ("phi", r.phi),
            ("bias", r.bias),
            ("variance", r.variance),
            ("rho", r.rho),
            ("rho_term", r.rho_term),
            ("delta_bias", r.delta_bias),
            ("total", r.total),
        ];
        for (k, v) in rows {
            out.push_str(&format!("  {k:<12} {}\n", num(v)));
        }
        if let Some(phi0) = r.phi0 {
            out.push_str(&format!("  {:<12} {}\n", "phi0", num(phi0)));
        }
        if r.lower_bound {
            out.push_str("  (over-parametrized generators: total is a lower bound)\n");
        }
    }
    if let Some(r) = &report.scaling {
        let e = &r.exponents;
        out.push_str(&format!(
            "scaling exponents (beta={}, r={}, a={}, b={})\n",
            num(e.beta),
            num(e.r),
            num(e.a),
            num(e.b)
        ));
        let rows = [
            ("ell_crit", e.ell_crit),
            ("c", e.c_rate),
            ("ell_star", e.ell_star),
            ("gamma", e.gamma),
            ("ell", e.ell),
            ("clean_slope", r.clean_slope_noisy),
            ("fake_slope", r.fake_slope),
        ];
        for (k, v) in rows {
            out.push_str(&format!("  {k:<12} {}\n", num(v)));
        }
        if let Some(n) = r.null_crossover {
            out.push_str(&format!("  {:<12} {}\n", "null_n", num(n)));
        }
    }
    out
}
