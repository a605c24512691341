//! The effective regularization `kappa(lambda, T)` and degrees of freedom.
//!
//! `kappa` is the unique solution `kappa >= lambda` of
//!
//! ```text
//! kappa - lambda = kappa * df_1(kappa) / T,   df_m(k) = sum_j l_j^m / (l_j + k)^m
//! ```
//!
//! For `lambda = 0` the equation has the root `kappa = 0`, which is the right
//! one when `T >= rank(Sigma)`; otherwise `kappa > 0` solves `df_1(kappa) = T`.

use serde::Serialize;

use super::TheoryError;
use crate::spectra::Spectrum;

const MAX_ITERATIONS: usize = 500;
const REL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kappa {
    pub value: f64,
    pub lambda: f64,
    pub t: usize,
    pub iterations: usize,
    /// `kappa - lambda - kappa df_1(kappa) / T` at the returned value.
    pub residual: f64,
}

/// `df_m(kappa) = sum_j l_j^m / (l_j + kappa)^m`. Zero eigenvalues contribute
/// nothing, including at `kappa = 0`.
pub fn df(s: &Spectrum, kappa: f64, m: u32) -> f64 {
    s.eigenvalues()
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| (l / (l + kappa)).powi(m as i32))
        .sum()
}

/// `sum_j l_j^p / (l_j + kappa)^q`, the generic trace `tr Sigma^p (Sigma + kappa)^-q`.
pub(crate) fn trace_ratio(s: &Spectrum, kappa: f64, p: i32, q: i32) -> f64 {
    s.eigenvalues()
        .iter()
        .filter(|&&l| l > 0.0 || p == 0)
        .map(|&l| l.powi(p) / (l + kappa).powi(q))
        .sum()
}

fn residual(s: &Spectrum, lambda: f64, t: f64, kappa: f64) -> f64 {
    kappa - lambda - kappa * df(s, kappa, 1) / t
}

/// Solves the self-consistent equation with a safeguarded Newton iteration on
/// the bracket `(lambda, lambda + tr(Sigma) / T]`.
pub fn solve_kappa(lambda: f64, t: usize, s: &Spectrum) -> Result<Kappa, TheoryError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(TheoryError::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    if t == 0 {
        return Err(TheoryError::InvalidInput("sample size T must be positive".into()));
    }
    if lambda == 0.0 {
        return solve_kappa_ridgeless(t, s);
    }
    let tf = t as f64;
    let mut lo = lambda;
    let mut hi = lambda + s.trace() / tf;
    // f is convex with f(lo) < 0 < f(hi): Newton from the right is monotone,
    // the bisection fallback only guards against rounding.
    let mut k = hi;
    for it in 1..=MAX_ITERATIONS {
        let f = residual(s, lambda, tf, k);
        if f > 0.0 {
            hi = k;
        } else {
            lo = k;
        }
        let fprime = 1.0 - df(s, k, 2) / tf;
        let mut next = if fprime > 0.0 { k - f / fprime } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - k).abs() <= REL_TOL * next.max(f64::MIN_POSITIVE) || hi - lo <= REL_TOL * hi {
            let value = next;
            return Ok(Kappa {
                value,
                lambda,
                t,
                iterations: it,
                residual: residual(s, lambda, tf, value),
            });
        }
        k = next;
    }
    Err(TheoryError::NonConvergence {
        iterations: MAX_ITERATIONS,
    })
}

fn solve_kappa_ridgeless(t: usize, s: &Spectrum) -> Result<Kappa, TheoryError> {
    if t >= s.rank() {
        return Ok(Kappa {
            value: 0.0,
            lambda: 0.0,
            t,
            iterations: 0,
            residual: 0.0,
        });
    }
    // df_1 decreases from rank(Sigma) > T at 0 to df_1(tr/T) <= T. Work in log(kappa).
    let tf = t as f64;
    let h = |k: f64| df(s, k, 1) - tf;
    let mut hi = s.trace() / tf;
    let mut lo = hi;
    while h(lo) <= 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(TheoryError::NonConvergence { iterations: 0 });
        }
    }
    let mut k = (lo * hi).sqrt();
    for it in 1..=MAX_ITERATIONS {
        let hk = h(k);
        if hk > 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        // d df_1 / d log k = -k * sum l / (l + k)^2 = df_2 - df_1
        let slope = df(s, k, 2) - df(s, k, 1);
        let mut next = if slope < 0.0 { k * (-hk / slope).exp() } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = (lo * hi).sqrt();
        }
        if (next - k).abs() <= REL_TOL * next || (hi / lo - 1.0) <= REL_TOL {
            return Ok(Kappa {
                value: next,
                lambda: 0.0,
                t,
                iterations: it,
                residual: residual(s, 0.0, tf, next),
            });
        }
        k = next;
    }
    Err(TheoryError::NonConvergence {
        iterations: MAX_ITERATIONS,
    })
}

/// Closed form for `Sigma = I`: `(lambda + phi - 1 + sqrt((lambda + phi - 1)^2 + 4 lambda)) / 2`
/// with `phi = d / T`.
pub fn kappa_isotropic(lambda: f64, phi: f64) -> f64 {
    let a = lambda + phi - 1.0;
    let root = (a * a + 4.0 * lambda).sqrt();
    if a >= 0.0 {
        0.5 * (a + root)
    } else {
        // rationalized to avoid cancellation when a < 0
        2.0 * lambda / (root - a)
    }
}

/// `d kappa / d lambda = 1 / (1 - df_2(kappa) / T)`.
pub fn kappa_derivative(lambda: f64, t: usize, s: &Spectrum) -> Result<f64, TheoryError> {
    let kappa = solve_kappa(lambda, t, s)?;
    let df2 = df(s, kappa.value, 2);
    let tf = t as f64;
    if df2 >= tf {
        return Err(TheoryError::Divergent { df2, t });
    }
    Ok(1.0 / (1.0 - df2 / tf))
}
