//! Kernel ridge regression and the MNIST relabelling experiment.
//!
//! Inputs are matrices with one point per row. A fitted model holds dual
//! coefficients `c = (G + lambda T I)^-1 y` with `G` the training Gram matrix,
//! and predicts `f(x) = sum_i c_i K(x_i, x)`.

mod collapse;
mod mnist;

pub use collapse::{run_krr_collapse, summarize_krr, KrrCollapseSpec, KrrCurvePoint, KrrRecord};
pub use mnist::{load_mnist_dir, load_mnist_idx, Dataset, Split};

use std::path::PathBuf;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated IDX file, expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: u64, found: u64 },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("feature dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("kernel system is numerically singular")]
    Singular,
    #[error("label {0} is outside 0..=9")]
    LabelOutOfRange(u8),
    #[error("insufficient data: need {needed} {what}, have {available}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Kernel functions. The bandwidth `gamma` multiplies the squared distance
/// (RBF) or the inner product (polynomial).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    /// `exp(-bandwidth |a - b|^2)`
    Rbf { bandwidth: f64 },
    /// `(1 + bandwidth <a, b>)^degree`
    Polynomial { degree: u32, bandwidth: f64 },
    /// `<a, b>`
    Linear,
}

impl Kernel {
    pub fn validate(&self) -> Result<(), KernelError> {
        match *self {
            Kernel::Rbf { bandwidth } | Kernel::Polynomial { bandwidth, .. } if !(bandwidth > 0.0) => Err(
                KernelError::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")),
            ),
            Kernel::Polynomial { degree: 0, .. } => {
                Err(KernelError::InvalidParameter("polynomial degree must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Rbf { .. } => "rbf",
            Kernel::Polynomial { .. } => "polynomial",
            Kernel::Linear => "linear",
        }
    }

    fn apply(&self, inner: f64, sq_a: f64, sq_b: f64) -> f64 {
        match *self {
            Kernel::Rbf { bandwidth } => (-bandwidth * (sq_a + sq_b - 2.0 * inner).max(0.0)).exp(),
            Kernel::Polynomial { degree, bandwidth } => (1.0 + bandwidth * inner).powi(degree as i32),
            Kernel::Linear => inner,
        }
    }
}

const GRAM_BLOCK: usize = 256;

/// `|A| x |B|` matrix of `K(a_i, b_j)`.
pub fn gram(k: &Kernel, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
    k.validate()?;
    if a.ncols() != b.ncols() {
        return Err(KernelError::DimensionMismatch {
            left: a.ncols(),
            right: b.ncols(),
        });
    }
    let sq_b: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
    let bt = b.transpose();
    let starts: Vec<usize> = (0..a.nrows()).step_by(GRAM_BLOCK).collect();
    let blocks: Vec<DMatrix<f64>> = starts
        .par_iter()
        .map(|&start| {
            let rows = GRAM_BLOCK.min(a.nrows() - start);
            let block = a.rows(start, rows);
            let mut inner = block * &bt;
            for i in 0..rows {
                let sq_a = block.row(i).norm_squared();
                for j in 0..b.nrows() {
                    inner[(i, j)] = k.apply(inner[(i, j)], sq_a, sq_b[j]);
                }
            }
            inner
        })
        .collect();
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    for (&start, block) in starts.iter().zip(blocks) {
        out.rows_mut(start, block.nrows()).copy_from(&block);
    }
    Ok(out)
}

/// Cholesky factor of `G + lambda T I`. For `lambda > 0` a failed
/// factorization is retried with diagonal jitter `1e-10 tr(G)/T`, growing
/// tenfold, at most three times. For `lambda = 0` a (near-)zero pivot is an
/// error.
pub fn factor_kernel_system(g: &DMatrix<f64>, lambda: f64) -> Result<Cholesky<f64, Dyn>, KernelError> {
    let t = g.nrows();
    if g.ncols() != t {
        return Err(KernelError::DimensionMismatch {
            left: t,
            right: g.ncols(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(KernelError::InvalidParameter(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let shifted = |extra: f64| {
        let mut a = g.clone();
        for i in 0..t {
            a[(i, i)] += lambda * t as f64 + extra;
        }
        a
    };
    if lambda == 0.0 {
        let chol = Cholesky::new(shifted(0.0)).ok_or(KernelError::Singular)?;
        let max_diag = g.diagonal().max();
        let floor = t as f64 * f64::EPSILON * max_diag;
        let l = chol.l_dirty();
        if (0..t).any(|i| l[(i, i)] * l[(i, i)] <= floor) {
            return Err(KernelError::Singular);
        }
        return Ok(chol);
    }
    if let Some(chol) = Cholesky::new(shifted(0.0)) {
        return Ok(chol);
    }
    let base = 1e-10 * g.trace() / t as f64;
    for k in 0..3 {
        if let Some(chol) = Cholesky::new(shifted(base * 10f64.powi(k))) {
            return Ok(chol);
        }
    }
    Err(KernelError::Singular)
}

#[derive(Debug, Clone)]
pub struct KrrModel {
    pub support: DMatrix<f64>,
    pub coefficients: DVector<f64>,
    pub kernel: Kernel,
    pub lambda: f64,
}

impl KrrModel {
    pub fn t(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, KernelError> {
        Ok(gram(&self.kernel, x, &self.support)? * &self.coefficients)
    }
}

/// Solves `(G + lambda T I) c = y`.
pub fn fit_krr(k: &Kernel, x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<KrrModel, KernelError> {
    if y.len() != x.nrows() {
        return Err(KernelError::DimensionMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    let g = gram(k, x, x)?;
    let coefficients = factor_kernel_system(&g, lambda)?.solve(y);
    Ok(KrrModel {
        support: x.clone(),
        coefficients,
        kernel: *k,
        lambda,
    })
}

/// `y = (label mod 2) + sigma * N(0, 1)`
pub fn binarize_labels<R: Rng + ?Sized>(labels: &[u8], sigma: f64, rng: &mut R) -> Result<DVector<f64>, KernelError> {
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(KernelError::LabelOutOfRange(bad));
    }
    if !(sigma >= 0.0) {
        return Err(KernelError::InvalidParameter(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    Ok(DVector::from_iterator(
        labels.len(),
        labels.iter().map(|&l| {
            let noise = if sigma > 0.0 {
                sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            (l % 2) as f64 + noise
        }),
    ))
}
