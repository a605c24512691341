//! Monte Carlo engine: Gaussian designs, the generator chain, ridge fits and
//! exact test errors.
//!
//! Generation `m` of the chain fits ordinary least squares on `T_m` fresh inputs
//! labelled by generation `m - 1` plus Gaussian noise:
//!
//! ```text
//! w_{m+1} = X_m^+ (X_m w_m + E_m),   w_0 = ground truth
//! ```
//!
//! With [`DesignMode::Shared`] every generation reuses the first design `X_0`.

mod downstream;

pub use downstream::{fit_ridge, DownstreamProblem, DownstreamSampler, DownstreamSolver};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cholesky, standard_normal_matrix, standard_normal_vector, PseudoInverse};
use crate::rng::{ReplicateStreams, StreamTag};
use crate::spectra::{GroundTruth, Spectrum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("chain artifacts were not retained")]
    MissingArtifacts,
    #[error("linear system is numerically singular")]
    Singular,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    /// One design `X_0` for all generations.
    Shared,
    /// A fresh design per generation.
    #[default]
    Independent,
}

impl DesignMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DesignMode::Shared => "shared",
            DesignMode::Independent => "independent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// `T_0, ..., T_{n-1}`
    pub sizes: Vec<usize>,
    /// `sigma_0, ..., sigma_{n-1}`
    pub noises: Vec<f64>,
    pub design_mode: DesignMode,
    pub seed: u64,
    /// Keep designs and noise draws for [`closed_form_labeller`].
    #[serde(default)]
    pub retain_artifacts: bool,
}

impl ChainConfig {
    /// `n` generations of size `t0` and noise `sigma0`.
    pub fn uniform(n: usize, t0: usize, sigma0: f64, design_mode: DesignMode, seed: u64) -> Self {
        Self {
            sizes: vec![t0; n],
            noises: vec![sigma0; n],
            design_mode,
            seed,
            retain_artifacts: false,
        }
    }

    pub fn with_artifacts(mut self) -> Self {
        self.retain_artifacts = true;
        self
    }

    pub fn n(&self) -> usize {
        self.sizes.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.sizes.len() != self.noises.len() {
            return Err(SimError::InvalidConfig(format!(
                "{} sizes but {} noise levels",
                self.sizes.len(),
                self.noises.len()
            )));
        }
        if self.sizes.contains(&0) {
            return Err(SimError::InvalidConfig("generator sizes must be positive".into()));
        }
        if self.noises.iter().any(|&s| !(s >= 0.0)) {
            return Err(SimError::InvalidConfig("noise levels must be non-negative".into()));
        }
        if self.design_mode == DesignMode::Shared && self.sizes.windows(2).any(|w| w[0] != w[1]) {
            return Err(SimError::InvalidConfig("shared design requires equal sizes".into()));
        }
        Ok(())
    }
}

/// Designs `X_m` and noise vectors `E_m` of a chain run. In shared mode
/// `designs` holds only `X_0`.
#[derive(Debug, Clone)]
pub struct ChainArtifacts {
    pub design_mode: DesignMode,
    pub designs: Vec<DMatrix<f64>>,
    pub noises: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct ChainResult {
    /// `w_n`
    pub labeller: DVector<f64>,
    /// `w_0, w_1, ..., w_n`
    pub per_generation: Vec<DVector<f64>>,
    pub artifacts: Option<ChainArtifacts>,
}

/// `T x d` matrix with iid rows `N(0, Sigma)`.
pub fn sample_design<R: Rng + ?Sized>(t: usize, s: &Spectrum, rng: &mut R) -> DMatrix<f64> {
    let mut x = standard_normal_matrix(t, s.d(), rng);
    for (j, &l) in s.eigenvalues().iter().enumerate() {
        x.column_mut(j).scale_mut(l.sqrt());
    }
    x
}

fn check_dims(s: &Spectrum, g: &GroundTruth) -> Result<(), SimError> {
    if s.d() != g.d() {
        return Err(SimError::DimensionMismatch {
            expected: s.d(),
            got: g.d(),
        });
    }
    Ok(())
}

pub fn run_chain(cfg: &ChainConfig, s: &Spectrum, g: &GroundTruth) -> Result<ChainResult, SimError> {
    run_chain_with(cfg, s, g, &ReplicateStreams::new(cfg.seed, 0))
}

/// Runs the chain on the streams of one replicate. Generation `m` draws from
/// `ChainDesign(m)` and `ChainNoise(m)`, so a shorter chain is a prefix of a
/// longer one.
pub fn run_chain_with(
    cfg: &ChainConfig,
    s: &Spectrum,
    g: &GroundTruth,
    streams: &ReplicateStreams,
) -> Result<ChainResult, SimError> {
    cfg.validate()?;
    check_dims(s, g)?;
    let n = cfg.n();
    let mut w = g.to_dvector();
    let mut per_generation = Vec::with_capacity(n + 1);
    per_generation.push(w.clone());
    let mut designs = Vec::new();
    let mut noises = Vec::new();
    let mut shared: Option<(DMatrix<f64>, PseudoInverse)> = None;

    for m in 0..n {
        let t_m = cfg.sizes[m];
        let e = standard_normal_vector(t_m, &mut streams.stream(StreamTag::ChainNoise(m as u64))) * cfg.noises[m];
        let w_next = match cfg.design_mode {
            DesignMode::Shared => {
                let (x, pinv) = shared.get_or_insert_with(|| {
                    let x = sample_design(t_m, s, &mut streams.stream(StreamTag::ChainDesign(0)));
                    let pinv = PseudoInverse::new(&x);
                    (x, pinv)
                });
                pinv.apply(&(&*x * &w + &e))
            }
            DesignMode::Independent => {
                let x = sample_design(t_m, s, &mut streams.stream(StreamTag::ChainDesign(m as u64)));
                let w_next = PseudoInverse::new(&x).apply(&(&x * &w + &e));
                if cfg.retain_artifacts {
                    designs.push(x);
                }
                w_next
            }
        };
        if cfg.retain_artifacts {
            noises.push(e);
        }
        w = w_next;
        per_generation.push(w.clone());
    }

    let artifacts = cfg.retain_artifacts.then(|| {
        if let Some((x, _)) = shared {
            designs.push(x);
        }
        ChainArtifacts {
            design_mode: cfg.design_mode,
            designs,
            noises,
        }
    });
    Ok(ChainResult {
        labeller: w,
        per_generation,
        artifacts,
    })
}

/// Projection onto the row space of `x` and the minimum-norm solution map,
/// computed from the normal equations rather than an SVD.
struct NormalProjector {
    x: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    tall: bool,
}

impl NormalProjector {
    fn new(x: &DMatrix<f64>) -> Result<Self, SimError> {
        let tall = x.nrows() >= x.ncols();
        let gram = if tall { x.tr_mul(x) } else { x * x.transpose() };
        let chol = cholesky(gram).ok_or(SimError::Singular)?;
        Ok(Self {
            x: x.clone(),
            chol,
            tall,
        })
    }

    /// `P v = X^+ X v`
    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.tall {
            v.clone()
        } else {
            self.x.tr_mul(&self.chol.solve(&(&self.x * v)))
        }
    }

    /// `X^+ e`
    fn solve(&self, e: &DVector<f64>) -> DVector<f64> {
        if self.tall {
            self.chol.solve(&self.x.tr_mul(e))
        } else {
            self.x.tr_mul(&self.chol.solve(e))
        }
    }
}

/// Replays a chain from its artifacts through the projector expansion
///
/// ```text
/// w_n = P_{n-1} ... P_0 w_0 + sum_m P_{n-1} ... P_{m+1} X_m^+ E_m
/// ```
///
/// and, for a shared design, `w_n = P_0 w_0 + X_0^+ (E_0 + ... + E_{n-1})`.
pub fn closed_form_labeller(result: &ChainResult, g: &GroundTruth) -> Result<DVector<f64>, SimError> {
    let art = result.artifacts.as_ref().ok_or(SimError::MissingArtifacts)?;
    let w0 = g.to_dvector();
    let n = art.noises.len();
    if n == 0 {
        return Ok(w0);
    }
    match art.design_mode {
        DesignMode::Shared => {
            let p = NormalProjector::new(art.designs.first().ok_or(SimError::MissingArtifacts)?)?;
            let mut e_sum = DVector::zeros(art.noises[0].len());
            for e in &art.noises {
                e_sum += e;
            }
            Ok(p.project(&w0) + p.solve(&e_sum))
        }
        DesignMode::Independent => {
            if art.designs.len() != n {
                return Err(SimError::MissingArtifacts);
            }
            let projectors = art
                .designs
                .iter()
                .map(NormalProjector::new)
                .collect::<Result<Vec<_>, _>>()?;
            let mut total = w0;
            for p in &projectors {
                total = p.project(&total);
            }
            for m in 0..n {
                let mut term = projectors[m].solve(&art.noises[m]);
                for p in &projectors[m + 1..] {
                    term = p.project(&term);
                }
                total += term;
            }
            Ok(total)
        }
    }
}

/// `(w - w0)^T Sigma (w - w0)`, evaluated exactly from the spectrum.
pub fn exact_test_error(w: &DVector<f64>, g: &GroundTruth, s: &Spectrum) -> Result<f64, SimError> {
    if w.len() != s.d() {
        return Err(SimError::DimensionMismatch {
            expected: s.d(),
            got: w.len(),
        });
    }
    check_dims(s, g)?;
    Ok(s.eigenvalues()
        .iter()
        .zip(g.coefficients())
        .zip(w.iter())
        .map(|((&l, &c), &wi)| l * (wi - c) * (wi - c))
        .sum())
}

/// Mean squared error against noiseless labels on `n_test` fresh inputs.
pub fn empirical_test_error<R: Rng + ?Sized>(
    w: &DVector<f64>,
    g: &GroundTruth,
    s: &Spectrum,
    n_test: usize,
    rng: &mut R,
) -> Result<f64, SimError> {
    if w.len() != s.d() {
        return Err(SimError::DimensionMismatch {
            expected: s.d(),
            got: w.len(),
        });
    }
    check_dims(s, g)?;
    if n_test == 0 {
        return Err(SimError::InvalidConfig("test set must be non-empty".into()));
    }
    let diff = w - g.to_dvector();
    let x = sample_design(n_test, s, rng);
    Ok((x * diff).norm_squared() / n_test as f64)
}

/// Downstream training set: size `T`, ridge `lambda`, label noise `sigma`.
/// Randomness comes from the replicate streams of the chain seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub t: usize,
    pub lambda: f64,
    pub sigma: f64,
    #[serde(default)]
    pub sampler: DownstreamSampler,
}

impl FitConfig {
    pub fn new(t: usize, lambda: f64, sigma: f64) -> Self {
        Self {
            t,
            lambda,
            sigma,
            sampler: DownstreamSampler::Direct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean.
    pub stderr: f64,
}

impl ReplicateSummary {
    pub fn from_errors(errors: Vec<f64>) -> Self {
        let (mean, stderr) = mean_stderr(&errors);
        Self { errors, mean, stderr }
    }
}

/// Sample mean and standard error of the mean (zero for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// One full experiment (chain plus downstream fit) on the streams of replicate
/// `k`, for `k = 0..replicates`.
pub fn run_replicates(
    chain: &ChainConfig,
    fit: &FitConfig,
    s: &Spectrum,
    g: &GroundTruth,
    replicates: usize,
) -> Result<ReplicateSummary, SimError> {
    if replicates == 0 {
        return Err(SimError::InvalidConfig("replicates must be >= 1".into()));
    }
    let errors = (0..replicates)
        .into_par_iter()
        .map(|k| {
            let streams = ReplicateStreams::new(chain.seed, k as u64);
            let result = run_chain_with(chain, s, g, &streams)?;
            let problem = DownstreamProblem::sample(s, fit.t, fit.sigma, fit.sampler, &streams)?;
            let w = problem.solver(fit.lambda)?.fit(&result.labeller);
            exact_test_error(&w, g, s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReplicateSummary::from_errors(errors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{make_isotropic, make_power_law};
    use crate::theory::predict_ridgeless_per_generation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn design_shape_and_covariance() {
        let s = Spectrum::isotropic(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = sample_design(100_000, &s, &mut rng);
        assert_eq!(x.shape(), (100_000, 2));
        let cov = x.tr_mul(&x) / 100_000.0;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - want).abs() < 0.02, "{cov}");
            }
        }
    }

    #[test]
    fn power_law_column_variances() {
        let s = Spectrum::power_law(5, 2.0).unwrap();
        let t = 20_000;
        let x = sample_design(t, &s, &mut ChaCha8Rng::seed_from_u64(5));
        for (j, &l) in s.eigenvalues().iter().enumerate() {
            let var = x.column(j).norm_squared() / t as f64;
            // the sample variance of a N(0, l) has standard error l sqrt(2/T)
            assert!((var - l).abs() < 3.0 * l * (2.0 / t as f64).sqrt());
        }
    }

    #[test]
    fn empty_chain_returns_ground_truth() {
        let (s, g) = make_power_law(10, 2.0, 0.5).unwrap();
        let cfg = ChainConfig::uniform(0, 20, 1.0, DesignMode::Independent, 1);
        let r = run_chain(&cfg, &s, &g).unwrap();
        assert_eq!(r.labeller, g.to_dvector());
        assert_eq!(r.per_generation.len(), 1);
    }

    #[test]
    fn noiseless_full_rank_generation_recovers_truth() {
        let (s, g) = make_isotropic(20, 1.0).unwrap();
        let cfg = ChainConfig::uniform(1, 40, 0.0, DesignMode::Independent, 2);
        let r = run_chain(&cfg, &s, &g).unwrap();
        assert!(rel(&r.labeller, &g.to_dvector()) < 1e-10);
    }

    #[test]
    fn closed_form_matches_chain() {
        let (s, g) = make_power_law(20, 1.5, 0.3).unwrap();
        for mode in [DesignMode::Shared, DesignMode::Independent] {
            for &t0 in &[15usize, 35] {
                for &n in &[1usize, 3] {
                    let cfg = ChainConfig::uniform(n, t0, 0.3, mode, 9).with_artifacts();
                    let r = run_chain(&cfg, &s, &g).unwrap();
                    let closed = closed_form_labeller(&r, &g).unwrap();
                    assert!(rel(&r.labeller, &closed) < 1e-8, "{mode:?} t0={t0} n={n}");
                    assert_eq!(r.per_generation.last().unwrap(), &r.labeller);
                }
            }
        }
    }

    #[test]
    fn noiseless_chain_contracts() {
        let (s, g) = make_isotropic(30, 1.0).unwrap();
        let cfg = ChainConfig::uniform(5, 20, 0.0, DesignMode::Independent, 4).with_artifacts();
        let r = run_chain(&cfg, &s, &g).unwrap();
        for w in r.per_generation.windows(2) {
            assert!(w[1].norm() <= w[0].norm() + 1e-12);
        }
        let closed = closed_form_labeller(&r, &g).unwrap();
        assert!(rel(&r.labeller, &closed) < 1e-8);
    }

    #[test]
    fn shared_chain_noise_lives_in_row_space() {
        let (s, g) = make_isotropic(25, 1.0).unwrap();
        let cfg = ChainConfig::uniform(3, 10, 0.5, DesignMode::Shared, 8).with_artifacts();
        let r = run_chain(&cfg, &s, &g).unwrap();
        let x0 = &r.artifacts.as_ref().unwrap().designs[0];
        let p = PseudoInverse::new(x0);
        let residual = &r.labeller - p.project_row_space(&g.to_dvector());
        assert!((p.project_row_space(&residual) - &residual).norm() < 1e-10 * residual.norm());
    }

    #[test]
    fn closed_form_requires_artifacts() {
        let (s, g) = make_isotropic(5, 1.0).unwrap();
        let r = run_chain(&ChainConfig::uniform(2, 10, 0.1, DesignMode::Shared, 1), &s, &g).unwrap();
        assert_eq!(closed_form_labeller(&r, &g), Err(SimError::MissingArtifacts));
    }

    #[test]
    fn chain_config_validation() {
        let mut cfg = ChainConfig::uniform(2, 10, 0.1, DesignMode::Shared, 1);
        cfg.sizes[1] = 11;
        assert!(cfg.validate().is_err());
        cfg.design_mode = DesignMode::Independent;
        assert!(cfg.validate().is_ok());
        cfg.noises.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn chains_are_nested_across_n() {
        let (s, g) = make_isotropic(10, 1.0).unwrap();
        let long = run_chain(&ChainConfig::uniform(4, 30, 0.2, DesignMode::Independent, 3), &s, &g).unwrap();
        let short = run_chain(&ChainConfig::uniform(2, 30, 0.2, DesignMode::Independent, 3), &s, &g).unwrap();
        assert_eq!(long.per_generation[2], short.labeller);
    }

    #[test]
    fn test_error_examples() {
        let (s, g) = make_isotropic(3, 1.0).unwrap();
        assert_eq!(exact_test_error(&g.to_dvector(), &g, &s).unwrap(), 0.0);
        let w = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let want = (&w - g.to_dvector()).norm_squared();
        assert!((exact_test_error(&w, &g, &s).unwrap() - want).abs() < 1e-15);

        let s = Spectrum::explicit(vec![1.0, 0.5]).unwrap();
        let g = GroundTruth::new(vec![0.0, 0.0]);
        let w = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(exact_test_error(&w, &g, &s).unwrap(), 3.0);
        assert!(exact_test_error(&DVector::zeros(3), &g, &s).is_err());
    }

    #[test]
    fn empirical_error_tracks_exact_error() {
        let (s, g) = make_power_law(8, 2.0, 0.5).unwrap();
        let w = DVector::from_element(8, 0.3);
        let exact = exact_test_error(&w, &g, &s).unwrap();
        let emp = empirical_test_error(&w, &g, &s, 100_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((emp - exact).abs() < 0.02 * exact);
    }

    #[test]
    fn replicates_are_deterministic() {
        let (s, g) = make_isotropic(10, 1.0).unwrap();
        let chain = ChainConfig::uniform(2, 30, 0.2, DesignMode::Independent, 17);
        let fit = FitConfig::new(40, 0.0, 0.1);
        let a = run_replicates(&chain, &fit, &s, &g, 1).unwrap();
        let b = run_replicates(&chain, &fit, &s, &g, 1).unwrap();
        assert_eq!(a.errors[0].to_bits(), b.errors[0].to_bits());
    }

    #[test]
    fn ridgeless_replicates_match_finite_size_theory() {
        let (s, g) = make_isotropic(50, 1.0).unwrap();
        let chain = ChainConfig::uniform(4, 100, 0.2, DesignMode::Independent, 2024);
        let fit = FitConfig::new(200, 0.0, 0.1);
        let sum = run_replicates(&chain, &fit, &s, &g, 500).unwrap();
        let theory = predict_ridgeless_per_generation(&[100; 4], &[0.2; 4], 50, 200, 0.1).unwrap();
        assert!(
            (sum.mean - theory).abs() < 3.0 * sum.stderr,
            "{} vs {theory} ± {}",
            sum.mean,
            sum.stderr
        );
    }

    #[test]
    fn stderr_shrinks_like_inverse_root() {
        let (s, g) = make_isotropic(10, 1.0).unwrap();
        let chain = ChainConfig::uniform(1, 30, 0.3, DesignMode::Independent, 99);
        let fit = FitConfig::new(30, 0.0, 0.1);
        let a = run_replicates(&chain, &fit, &s, &g, 100).unwrap();
        let b = run_replicates(&chain, &fit, &s, &g, 400).unwrap();
        let ratio = a.stderr / b.stderr;
        assert!((ratio / 2.0 - 1.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn mean_stderr_basic() {
        assert_eq!(mean_stderr(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
