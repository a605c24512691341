//! A numerical laboratory for model collapse in high-dimensional ridge regression.
//!
//! A chain of least-squares "fake data" generators is trained recursively, each
//! generation labelling fresh Gaussian inputs with the previous model plus
//! noise. A downstream ridge model is then fitted on the last generation and
//! evaluated against the true labelling function. The crate provides
//!
//! * [`spectra`]: covariance spectra and ground-truth vectors (isotropic and
//!   power-law capacity/source conditions),
//! * [`theory`]: deterministic equivalents for the test error, the effective
//!   regularization `kappa`, the per-generation penalty `rho`, bias increases
//!   from over-parametrized generators and power-law scaling exponents,
//! * [`simulate`]: the Monte Carlo engine (Gaussian designs, the generator
//!   chain, ridge fits, exact test errors),
//! * [`kernels`]: kernel ridge regression and the MNIST relabelling experiment,
//! * [`harness`]: sweeps, CSV persistence, slope fits and theory comparison.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod simulate;
pub mod spectra;
pub mod theory;

pub use harness::{
    compare, fit_loglog_slope, run_sweep, CompareReport, ExperimentRecord, HarnessError, RegGrid, SlopeFit, SweepSpec,
    TheoryStatus,
};
pub use kernels::{
    binarize_labels, fit_krr, gram, load_mnist_dir, load_mnist_idx, run_krr_collapse, Dataset, Kernel, KernelError,
    KrrCollapseSpec, KrrModel, KrrRecord, Split,
};
pub use simulate::{
    closed_form_labeller, exact_test_error, fit_ridge, run_chain, run_replicates, sample_design, ChainConfig,
    ChainResult, DesignMode, DownstreamSampler, FitConfig, ReplicateSummary, SimError,
};
pub use spectra::{
    make_isotropic, make_power_law, sigma_norm_sq, GroundTruth, IsotropicDirection, NoiseLevels, Spectrum,
    SpectrumError, SpectrumKind, SpectrumSpec,
};
pub use theory::{ScalingExponents, T0Schedule, TheoryError, TheoryPrediction};
