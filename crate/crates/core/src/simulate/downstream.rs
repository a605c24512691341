//! The downstream ridge fit on data labelled by the last generator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::ChiSquared;
use serde::{Deserialize, Serialize};

use super::{sample_design, SimError};
use crate::linalg::{cholesky, solve_normal_equations, standard_normal_vector, PseudoInverse};
use crate::rng::{ReplicateStreams, StreamTag};
use crate::spectra::Spectrum;

/// How the downstream training set is drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownstreamSampler {
    /// Sample the `T x d` design and noise explicitly.
    #[default]
    Direct,
    /// Sample the sufficient statistics `X^T X` (Bartlett decomposition of the
    /// Wishart law) and `X^T E` directly. Same distribution as `Direct`, cost
    /// independent of `T`. Requires `T >= d`.
    Wishart,
}

/// `lambda = 0`: `X^+ Y`. Otherwise `(X^T X / T + lambda I)^-1 X^T Y / T`,
/// solved in the dual when `T < d`.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>, SimError> {
    let (t, d) = x.shape();
    if y.len() != t {
        return Err(SimError::DimensionMismatch {
            expected: t,
            got: y.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(SimError::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 || t == 0 {
        return Ok(PseudoInverse::new(x).apply(y));
    }
    if t >= d {
        solve_normal_equations(&x.tr_mul(x), &x.tr_mul(y), t, lambda).ok_or(SimError::Singular)
    } else {
        let mut gram = x * x.transpose();
        for i in 0..t {
            gram[(i, i)] += lambda * t as f64;
        }
        let chol = cholesky(gram).ok_or(SimError::Singular)?;
        Ok(x.tr_mul(&chol.solve(y)))
    }
}

/// A sampled downstream training set, reusable across labellers and ridge
/// strengths. Labels are `Y = X w + E`.
#[derive(Debug, Clone)]
pub enum DownstreamProblem {
    /// Sufficient statistics `X^T X` and `X^T E` (`T >= d`).
    Primal {
        t: usize,
        xtx: DMatrix<f64>,
        xte: DVector<f64>,
        design: Option<(DMatrix<f64>, DVector<f64>)>,
    },
    /// Explicit design, noise and Gram matrix `X X^T` (`T < d`).
    Dual {
        t: usize,
        x: DMatrix<f64>,
        e: DVector<f64>,
        gram: DMatrix<f64>,
    },
}

impl DownstreamProblem {
    /// Draws from the `DownstreamDesign(T)` and `DownstreamNoise(T)` streams.
    pub fn sample(
        s: &Spectrum,
        t: usize,
        sigma: f64,
        sampler: DownstreamSampler,
        streams: &ReplicateStreams,
    ) -> Result<Self, SimError> {
        if t == 0 {
            return Err(SimError::InvalidConfig(
                "downstream sample size must be positive".into(),
            ));
        }
        let d = s.d();
        let mut design_rng = streams.stream(StreamTag::DownstreamDesign(t as u64));
        let mut noise_rng = streams.stream(StreamTag::DownstreamNoise(t as u64));
        match sampler {
            DownstreamSampler::Wishart => {
                if t < d {
                    return Err(SimError::InvalidConfig(format!(
                        "Wishart sampler needs T >= d, got T={t}, d={d}"
                    )));
                }
                let a = bartlett_factor(d, t, &mut design_rng);
                let root: DVector<f64> = DVector::from_iterator(d, s.eigenvalues().iter().map(|l| l.sqrt()));
                let mut xtx = &a * a.transpose();
                for i in 0..d {
                    for j in 0..d {
                        xtx[(i, j)] *= root[i] * root[j];
                    }
                }
                let z = standard_normal_vector(d, &mut noise_rng);
                let xte = (&a * z).component_mul(&root) * sigma;
                Ok(Self::Primal {
                    t,
                    xtx,
                    xte,
                    design: None,
                })
            }
            DownstreamSampler::Direct => {
                let x = sample_design(t, s, &mut design_rng);
                let e = standard_normal_vector(t, &mut noise_rng) * sigma;
                if t >= d {
                    let xtx = x.tr_mul(&x);
                    let xte = x.tr_mul(&e);
                    Ok(Self::Primal {
                        t,
                        xtx,
                        xte,
                        design: Some((x, e)),
                    })
                } else {
                    let gram = &x * x.transpose();
                    Ok(Self::Dual { t, x, e, gram })
                }
            }
        }
    }

    pub fn t(&self) -> usize {
        match self {
            Self::Primal { t, .. } | Self::Dual { t, .. } => *t,
        }
    }

    /// Factorizes the system for ridge strength `lambda`.
    pub fn solver(&self, lambda: f64) -> Result<DownstreamSolver<'_>, SimError> {
        if !(lambda >= 0.0) {
            return Err(SimError::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
        }
        match self {
            Self::Primal { t, xtx, xte, design } => {
                let tf = *t as f64;
                let mut a = xtx / tf;
                for i in 0..a.nrows() {
                    a[(i, i)] += lambda;
                }
                match (cholesky(a), design) {
                    (Some(chol), _) => Ok(DownstreamSolver::Primal { t: tf, chol, xtx, xte }),
                    (None, Some((x, e))) if lambda == 0.0 => Ok(DownstreamSolver::Pinv {
                        pinv: PseudoInverse::new(x),
                        x,
                        e,
                    }),
                    (None, _) => Err(SimError::Singular),
                }
            }
            Self::Dual { t, x, e, gram } => {
                if lambda == 0.0 {
                    return Ok(DownstreamSolver::Pinv {
                        pinv: PseudoInverse::new(x),
                        x,
                        e,
                    });
                }
                let mut a = gram.clone();
                for i in 0..*t {
                    a[(i, i)] += lambda * *t as f64;
                }
                let chol = cholesky(a).ok_or(SimError::Singular)?;
                Ok(DownstreamSolver::Dual { chol, x, e })
            }
        }
    }
}

/// Lower-triangular `A` with `A A^T ~ Wishart(I_d, T)`.
fn bartlett_factor<R: Rng + ?Sized>(d: usize, t: usize, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new((t - i) as f64).expect("positive degrees of freedom");
        a[(i, i)] = rng.sample(chi).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(rand_distr::StandardNormal);
        }
    }
    a
}

/// A factorized downstream system; [`DownstreamSolver::fit`] returns the ridge
/// estimate for labels produced by a given labeller.
pub enum DownstreamSolver<'a> {
    Primal {
        t: f64,
        chol: Cholesky<f64, Dyn>,
        xtx: &'a DMatrix<f64>,
        xte: &'a DVector<f64>,
    },
    Dual {
        chol: Cholesky<f64, Dyn>,
        x: &'a DMatrix<f64>,
        e: &'a DVector<f64>,
    },
    Pinv {
        pinv: PseudoInverse,
        x: &'a DMatrix<f64>,
        e: &'a DVector<f64>,
    },
}

impl DownstreamSolver<'_> {
    pub fn fit(&self, labeller: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Primal { t, chol, xtx, xte } => chol.solve(&((*xtx * labeller + *xte) / *t)),
            Self::Dual { chol, x, e } => x.tr_mul(&chol.solve(&(*x * labeller + *e))),
            Self::Pinv { pinv, x, e } => pinv.apply(&(*x * labeller + *e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{exact_test_error, mean_stderr};
    use crate::spectra::make_power_law;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ridge_hand_example() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 1.0]);
        let w = fit_ridge(&x, &y, 1.0).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ridge_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Spectrum::isotropic(5).unwrap();
        let x = sample_design(20, &s, &mut rng);
        let y = standard_normal_vector(20, &mut rng);
        let mut last = f64::INFINITY;
        for &lambda in &[1.0, 10.0, 1e3, 1e6] {
            let norm = fit_ridge(&x, &y, lambda).unwrap().norm();
            assert!(norm < last);
            last = norm;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn ridgeless_recovers_noiseless_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Spectrum::power_law(8, 2.0).unwrap();
        let x = sample_design(30, &s, &mut rng);
        let w0 = standard_normal_vector(8, &mut rng);
        let w = fit_ridge(&x, &(&x * &w0), 0.0).unwrap();
        assert!((w - &w0).norm() < 1e-10 * w0.norm());
    }

    #[test]
    fn primal_and_dual_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Spectrum::isotropic(12).unwrap();
        let x = sample_design(12, &s, &mut rng);
        let y = standard_normal_vector(12, &mut rng);
        let primal = fit_ridge(&x, &y, 0.3).unwrap();
        let wide = x.clone().remove_row(11);
        let y_wide = y.clone().remove_row(11);
        let dual = fit_ridge(&wide, &y_wide, 0.3).unwrap();
        let direct = solve_normal_equations(&wide.tr_mul(&wide), &wide.tr_mul(&y_wide), 11, 0.3).unwrap();
        assert!((dual - direct).norm() < 1e-10);
        assert_eq!(primal.len(), 12);
    }

    #[test]
    fn problem_solver_matches_fit_ridge() {
        let (s, _) = make_power_law(10, 2.0, 0.5).unwrap();
        let streams = ReplicateStreams::new(1, 2);
        let labeller = DVector::from_element(10, 0.7);
        for &t in &[6usize, 25] {
            let problem = DownstreamProblem::sample(&s, t, 0.3, DownstreamSampler::Direct, &streams).unwrap();
            let (x, e) = match &problem {
                DownstreamProblem::Primal {
                    design: Some((x, e)), ..
                } => (x.clone(), e.clone()),
                DownstreamProblem::Dual { x, e, .. } => (x.clone(), e.clone()),
                _ => unreachable!(),
            };
            let y = &x * &labeller + e;
            for &lambda in &[0.0, 0.05, 2.0] {
                let got = problem.solver(lambda).unwrap().fit(&labeller);
                let want = fit_ridge(&x, &y, lambda).unwrap();
                assert!((&got - &want).norm() < 1e-9 * want.norm(), "t={t} lambda={lambda}");
            }
        }
    }

    #[test]
    fn wishart_sampler_matches_direct_in_distribution() {
        let (s, g) = make_power_law(12, 1.5, 0.4).unwrap();
        let labeller = DVector::from_element(12, 0.2);
        let collect = |sampler| {
            let errs: Vec<f64> = (0..3000)
                .map(|k| {
                    let streams = ReplicateStreams::new(77, k);
                    let p = DownstreamProblem::sample(&s, 20, 0.5, sampler, &streams).unwrap();
                    let w = p.solver(0.01).unwrap().fit(&labeller);
                    exact_test_error(&w, &g, &s).unwrap()
                })
                .collect();
            mean_stderr(&errs)
        };
        let (m1, s1) = collect(DownstreamSampler::Direct);
        let (m2, s2) = collect(DownstreamSampler::Wishart);
        assert!(
            (m1 - m2).abs() < 4.0 * (s1 * s1 + s2 * s2).sqrt(),
            "{m1}±{s1} vs {m2}±{s2}"
        );
    }

    #[test]
    fn bartlett_factor_has_wishart_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (d, t, reps) = (4, 9, 4000);
        let mut mean = DMatrix::<f64>::zeros(d, d);
        for _ in 0..reps {
            let a = bartlett_factor(d, t, &mut rng);
            mean += &a * a.transpose();
        }
        mean /= reps as f64;
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { t as f64 } else { 0.0 };
                assert!((mean[(i, j)] - want).abs() < 0.25, "{mean}");
            }
        }
    }

    #[test]
    fn wishart_rejects_wide_problems() {
        let s = Spectrum::isotropic(10).unwrap();
        let streams = ReplicateStreams::new(0, 0);
        assert!(DownstreamProblem::sample(&s, 5, 0.1, DownstreamSampler::Wishart, &streams).is_err());
    }
}
