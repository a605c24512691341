//! Model collapse with kernel ridge regression on a labelled image dataset.
//!
//! A chain of KRR generators is fitted on `T0` fixed inputs: generation 1 sees
//! the true binarized labels plus noise, generation `m + 1` sees the
//! predictions of generation `m` plus fresh noise. A downstream KRR model with
//! ridge `T^-ell` is then trained on `T` other inputs labelled by generation
//! `n` (plus noise) and scored against the true labels of a held-out test set.
//!
//! All subsamples are fixed by the seed; replicates differ only in label noise.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{binarize_labels, factor_kernel_system, gram, Dataset, Kernel, KernelError};
use crate::linalg::standard_normal_vector;
use crate::rng::{ReplicateStreams, StreamRng, StreamTag};
use crate::simulate::mean_stderr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrrCollapseSpec {
    pub kernel: Kernel,
    pub t0: usize,
    pub n_grid: Vec<usize>,
    pub t_grid: Vec<usize>,
    /// Downstream ridge exponents: `lambda = T^-ell`.
    pub ells: Vec<f64>,
    /// Generator ridge `T0^-generator_ell`; `None` fits the generator ridgeless.
    #[serde(default)]
    pub generator_ell: Option<f64>,
    pub sigma0: f64,
    pub sigma: f64,
    pub replicates: usize,
    pub test_size: usize,
    /// Add `sigma` noise to the test labels as well.
    #[serde(default)]
    pub test_label_noise: bool,
    pub seed: u64,
}

impl KrrCollapseSpec {
    pub fn validate(&self) -> Result<(), KernelError> {
        self.kernel.validate()?;
        let bad = |m: &str| Err(KernelError::InvalidParameter(m.into()));
        if self.t0 == 0 {
            return bad("t0 must be positive");
        }
        if self.n_grid.is_empty() || self.t_grid.is_empty() || self.ells.is_empty() {
            return bad("n, T and ell grids must be non-empty");
        }
        if self.t_grid.contains(&0) {
            return bad("T grid entries must be positive");
        }
        if self.replicates == 0 || self.test_size == 0 {
            return bad("replicates and test size must be positive");
        }
        if !(self.sigma0 >= 0.0 && self.sigma >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if self
            .ells
            .iter()
            .chain(self.generator_ell.as_ref())
            .any(|e| !e.is_finite())
        {
            return bad("ridge exponents must be finite");
        }
        Ok(())
    }

    pub fn generator_lambda(&self) -> f64 {
        self.generator_ell.map_or(0.0, |e| (self.t0 as f64).powf(-e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrRecord {
    pub kernel: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "T0")]
    pub t0: usize,
    pub ell: f64,
    pub lambda: f64,
    pub replicate: usize,
    pub test_error: f64,
    pub seed: u64,
}

/// Replicate mean of one `(n, ell, T)` point of a curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrCurvePoint {
    pub n: usize,
    pub ell: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub mean: f64,
    pub stderr: f64,
}

pub fn summarize_krr(records: &[KrrRecord]) -> Vec<KrrCurvePoint> {
    let mut keys: Vec<(usize, u64, usize)> = records.iter().map(|r| (r.n, r.ell.to_bits(), r.t)).collect();
    keys.sort_by(|a, b| {
        (a.0, f64::from_bits(a.1), a.2)
            .partial_cmp(&(b.0, f64::from_bits(b.1), b.2))
            .unwrap()
    });
    keys.dedup();
    keys.into_iter()
        .map(|(n, ell_bits, t)| {
            let errs: Vec<f64> = records
                .iter()
                .filter(|r| r.n == n && r.ell.to_bits() == ell_bits && r.t == t)
                .map(|r| r.test_error)
                .collect();
            let (mean, stderr) = mean_stderr(&errs);
            KrrCurvePoint {
                n,
                ell: f64::from_bits(ell_bits),
                t,
                mean,
                stderr,
            }
        })
        .collect()
}

struct Precomputed {
    chain_chol: Cholesky<f64, Dyn>,
    chain_gram: DMatrix<f64>,
    /// pool x chain
    pool_chain: DMatrix<f64>,
    /// test x pool
    test_pool: DMatrix<f64>,
    chain_labels: DVector<f64>,
    pool_labels: DVector<f64>,
    test_labels: DVector<f64>,
    /// indexed by `(t_grid index, ell index)`
    downstream: Vec<Vec<Cholesky<f64, Dyn>>>,
}

fn shuffled(len: usize, rng: &mut StreamRng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx
}

/// Runs every `(n, T, ell, replicate)` cell. `train` supplies the disjoint
/// chain and downstream inputs, `test` the evaluation set.
pub fn run_krr_collapse(
    spec: &KrrCollapseSpec,
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<KrrRecord>, KernelError> {
    spec.validate()?;
    let pool = *spec.t_grid.iter().max().expect("non-empty grid");
    if spec.t0 + pool > train.len() {
        return Err(KernelError::InsufficientData {
            what: "training points (T0 + max T)",
            needed: spec.t0 + pool,
            available: train.len(),
        });
    }
    if spec.test_size > test.len() {
        return Err(KernelError::InsufficientData {
            what: "test points",
            needed: spec.test_size,
            available: test.len(),
        });
    }
    if train.dim() != test.dim() {
        return Err(KernelError::DimensionMismatch {
            left: train.dim(),
            right: test.dim(),
        });
    }

    let pre = precompute(spec, pool, train, test)?;
    let n_max = *spec.n_grid.iter().max().expect("non-empty grid");

    let per_replicate: Vec<Vec<KrrRecord>> = (0..spec.replicates)
        .into_par_iter()
        .map(|rep| replicate_records(spec, &pre, pool, n_max, rep))
        .collect();
    Ok(per_replicate.into_iter().flatten().collect())
}

fn precompute(
    spec: &KrrCollapseSpec,
    pool: usize,
    train: &Dataset,
    test: &Dataset,
) -> Result<Precomputed, KernelError> {
    let base = ReplicateStreams::new(spec.seed, 0);
    let order = shuffled(train.len(), &mut base.stream(StreamTag::Subsample));
    let chain_idx = &order[..spec.t0];
    let pool_idx = &order[spec.t0..spec.t0 + pool];
    let test_order = shuffled(test.len(), &mut base.stream(StreamTag::TestSet));
    let test_idx = &test_order[..spec.test_size];

    let x_chain = train.select(chain_idx);
    let x_pool = train.select(pool_idx);
    let x_test = test.select(test_idx);

    let mut unused = StreamRng::seed_from_u64(0);
    let chain_labels = binarize_labels(&train.select_labels(chain_idx), 0.0, &mut unused)?;
    let pool_labels = binarize_labels(&train.select_labels(pool_idx), 0.0, &mut unused)?;
    let test_labels = binarize_labels(&test.select_labels(test_idx), 0.0, &mut unused)?;

    let chain_gram = gram(&spec.kernel, &x_chain, &x_chain)?;
    let chain_chol = factor_kernel_system(&chain_gram, spec.generator_lambda())?;
    let pool_chain = gram(&spec.kernel, &x_pool, &x_chain)?;
    let pool_gram = gram(&spec.kernel, &x_pool, &x_pool)?;
    let test_pool = gram(&spec.kernel, &x_test, &x_pool)?;

    let downstream = spec
        .t_grid
        .iter()
        .map(|&t| {
            let g = pool_gram.view((0, 0), (t, t)).into_owned();
            spec.ells
                .iter()
                .map(|&ell| factor_kernel_system(&g, (t as f64).powf(-ell)))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Precomputed {
        chain_chol,
        chain_gram,
        pool_chain,
        test_pool,
        chain_labels,
        pool_labels,
        test_labels,
        downstream,
    })
}

fn replicate_records(
    spec: &KrrCollapseSpec,
    pre: &Precomputed,
    pool: usize,
    n_max: usize,
    rep: usize,
) -> Vec<KrrRecord> {
    let streams = ReplicateStreams::new(spec.seed, rep as u64);
    let t0 = spec.t0;

    // labeller on the pool after n generations, for every n in 0..=n_max
    let mut pool_labellers = Vec::with_capacity(n_max + 1);
    pool_labellers.push(pre.pool_labels.clone());
    let mut chain_targets = pre.chain_labels.clone();
    for m in 0..n_max {
        let noise = standard_normal_vector(t0, &mut streams.stream(StreamTag::LabelNoise(m as u64)));
        let coef = pre.chain_chol.solve(&(chain_targets + noise * spec.sigma0));
        chain_targets = &pre.chain_gram * &coef;
        pool_labellers.push(&pre.pool_chain * &coef);
    }

    let pool_noise = standard_normal_vector(pool, &mut streams.stream(StreamTag::DownstreamNoise(0))) * spec.sigma;
    let test_targets = if spec.test_label_noise {
        let noise = standard_normal_vector(
            pre.test_labels.len(),
            &mut streams.stream(StreamTag::LabelNoise(u64::MAX)),
        );
        &pre.test_labels + noise * spec.sigma
    } else {
        pre.test_labels.clone()
    };

    let mut out = Vec::new();
    for &n in &spec.n_grid {
        let labeller = &pool_labellers[n];
        for (ti, &t) in spec.t_grid.iter().enumerate() {
            let y = labeller.rows(0, t) + pool_noise.rows(0, t);
            for (li, &ell) in spec.ells.iter().enumerate() {
                let coef = pre.downstream[ti][li].solve(&y);
                let pred = pre.test_pool.columns(0, t) * coef;
                let test_error = (pred - &test_targets).norm_squared() / test_targets.len() as f64;
                out.push(KrrRecord {
                    kernel: spec.kernel.name().to_string(),
                    n,
                    t,
                    t0,
                    ell,
                    lambda: (t as f64).powf(-ell),
                    replicate: rep,
                    test_error,
                    seed: spec.seed,
                });
            }
        }
    }
    out
}
