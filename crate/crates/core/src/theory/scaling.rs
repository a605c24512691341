//! Power-law scaling exponents and the asymptotic scaling law for ridge
//! regression on fake data.

use serde::{Deserialize, Serialize};

use super::TheoryError;

/// How the generator sample size `T0` scales with the downstream size `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum T0Schedule {
    /// `T0` independent of `T` (`b = 0`).
    Fixed { t0: usize },
    /// `T0 = round(T^b)`.
    Power { b: f64 },
}

impl T0Schedule {
    pub fn t0_at(&self, t: usize) -> usize {
        match *self {
            T0Schedule::Fixed { t0 } => t0,
            T0Schedule::Power { b } => ((t as f64).powf(b).round() as usize).max(1),
        }
    }

    pub fn b(&self) -> f64 {
        match *self {
            T0Schedule::Fixed { .. } => 0.0,
            T0Schedule::Power { b } => b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingExponents {
    pub beta: f64,
    pub r: f64,
    pub r_lower: f64,
    pub ell: f64,
    pub ell_crit: f64,
    pub ell_star: f64,
    pub a: f64,
    pub b: f64,
    pub c_rate: f64,
    pub gamma: f64,
}

impl ScalingExponents {
    /// Same exponents with a different regularization exponent `ell`.
    pub fn with_ell(mut self, ell: f64) -> Self {
        self.ell = ell;
        self
    }

    /// Asymptotic log-log slope in `T` of the clean error at exponent `ell`.
    pub fn clean_slope(&self, noisy: bool) -> f64 {
        let bias = 2.0 * self.r_lower * self.ell;
        if noisy {
            -(1.0 - self.ell / self.beta).min(bias)
        } else {
            -bias
        }
    }

    /// Asymptotic log-log slope in `T` of the fake-data term, `-(b - a - ell/beta)`.
    /// Valid for `b <= 1`, where `T/T0` dominates `phi0`.
    pub fn fake_slope(&self) -> f64 {
        -(self.b.min(1.0) - self.a - self.ell / self.beta)
    }
}

/// Capacity/source exponents for `n ~ T^a` generations on `T0 ~ T^b` samples.
/// `ell` is set to `ell_crit`.
pub fn exponents(beta: f64, r: f64, a: f64, b: f64) -> Result<ScalingExponents, TheoryError> {
    if !(beta > 1.0) || !(r >= 0.0) || !(a >= 0.0) || !(b >= 0.0) {
        return Err(TheoryError::InvalidInput(format!(
            "need beta > 1, r >= 0, a >= 0, b >= 0; got beta={beta}, r={r}, a={a}, b={b}"
        )));
    }
    let r_lower = r.min(1.0);
    let two_br = 2.0 * beta * r_lower;
    let ell_crit = beta / (1.0 + two_br);
    let ell_star = ((b - a) * ell_crit).min(beta).max(0.0);
    Ok(ScalingExponents {
        beta,
        r,
        r_lower,
        ell: ell_crit,
        ell_crit,
        ell_star,
        a,
        b,
        c_rate: two_br / (two_br + 1.0),
        gamma: (b - a).min(1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSlopes {
    pub clean: f64,
    /// `None` when the fake term vanishes (`n = 0` or `sigma0 = 0`).
    pub fake: Option<f64>,
    /// Slope of the dominant term.
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingLaw {
    pub clean_term: f64,
    pub fake_term: f64,
    pub exponents: ScalingExponents,
    pub slopes: ScalingSlopes,
}

/// Unnormalized terms of the scaling law at sample size `T`:
///
/// ```text
/// clean ~ max(sigma^2, T^(1 - 2 r ell - ell/beta)) T^-(1 - ell/beta)
/// fake  ~ n sigma0^2 / (1 - phi0) max(T/T0, phi0) T^-(1 - ell/beta)
/// ```
///
/// Hidden constants are unknown, so only the slopes are meaningful.
#[allow(clippy::too_many_arguments)]
pub fn scaling_law(
    beta: f64,
    r: f64,
    ell: f64,
    n: usize,
    sigma: f64,
    sigma0: f64,
    t: f64,
    schedule: T0Schedule,
    phi0: f64,
) -> Result<ScalingLaw, TheoryError> {
    if !(0.0..beta).contains(&ell) {
        return Err(TheoryError::InvalidInput(format!(
            "ell must lie in [0, beta), got {ell}"
        )));
    }
    if !(phi0 > 0.0 && phi0 < 1.0) {
        return Err(TheoryError::InvalidInput(format!(
            "phi0 must lie in (0, 1), got {phi0}"
        )));
    }
    if !(t >= 1.0) {
        return Err(TheoryError::InvalidInput("T must be >= 1".into()));
    }
    let ex = exponents(beta, r, 0.0, schedule.b())?.with_ell(ell);
    let decay = t.powf(-(1.0 - ell / beta));
    let clean_term = (sigma * sigma).max(t.powf(1.0 - 2.0 * ex.r_lower * ell - ell / beta)) * decay;
    let t0 = match schedule {
        T0Schedule::Fixed { t0 } => t0 as f64,
        T0Schedule::Power { b } => t.powf(b),
    };
    let fake_term = n as f64 * sigma0 * sigma0 / (1.0 - phi0) * (t / t0).max(phi0) * decay;
    let clean = ex.clean_slope(sigma > 0.0);
    let fake = (n > 0 && sigma0 > 0.0).then(|| ex.fake_slope());
    let total = fake.map_or(clean, |f| f.max(clean));
    Ok(ScalingLaw {
        clean_term,
        fake_term,
        exponents: ex,
        slopes: ScalingSlopes { clean, fake, total },
    })
}

/// Generation count beyond which the ridgeless model on fake data is worse
/// than the null predictor `w = 0`: the fake-data term `n phi0 / (SNR0 (1 - phi0))`
/// of the error ratio reaches 1 at `n = SNR0 (1/phi0 - 1)`.
pub fn null_crossover(snr0: f64, phi0: f64) -> Result<f64, TheoryError> {
    if !(snr0 > 0.0) || !(phi0 > 0.0 && phi0 < 1.0) {
        return Err(TheoryError::InvalidInput(format!(
            "need snr0 > 0 and phi0 in (0, 1), got snr0={snr0}, phi0={phi0}"
        )));
    }
    Ok(snr0 * (1.0 / phi0 - 1.0))
}
