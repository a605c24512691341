use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::rng::ReplicateStreams;
use crate::simulate::{
    exact_test_error, run_chain_with, ChainConfig, DesignMode, DownstreamProblem, DownstreamSampler,
};
use crate::spectra::{GroundTruth, NoiseLevels, Spectrum, SpectrumSpec};
use crate::theory::{predict_test_error_with, PredictOptions, T0Schedule, TheoryError};

pub const SCHEMA_VERSION: u32 = 1;

/// Ridge strengths of a sweep: fixed values, or exponents `ell` with
/// `lambda = T^-ell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum RegGrid {
    Lambda(Vec<f64>),
    Ell(Vec<f64>),
}

impl RegGrid {
    pub fn len(&self) -> usize {
        match self {
            RegGrid::Lambda(v) | RegGrid::Ell(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(lambda, ell)` of entry `i` at sample size `t`.
    pub fn at(&self, i: usize, t: usize) -> (f64, Option<f64>) {
        match self {
            RegGrid::Lambda(v) => (v[i], None),
            RegGrid::Ell(v) => ((t as f64).powf(-v[i]), Some(v[i])),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub spectrum: SpectrumSpec,
    pub t_grid: Vec<usize>,
    pub reg: RegGrid,
    pub n_grid: Vec<usize>,
    pub t0: T0Schedule,
    pub sigma: f64,
    pub sigma0: f64,
    #[serde(default)]
    pub design_mode: DesignMode,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampler: DownstreamSampler,
    /// Use exact finite-size divisors (`T - d - 1`) in the theory columns where
    /// they are available.
    #[serde(default = "default_true")]
    pub finite_size_theory: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.t_grid.is_empty() || self.n_grid.is_empty() || self.reg.is_empty() {
            return bad("T, n and regularization grids must be non-empty".into());
        }
        if self.t_grid.contains(&0) {
            return bad("T grid entries must be positive".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        if !(self.sigma >= 0.0 && self.sigma0 >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if let RegGrid::Lambda(v) = &self.reg {
            if v.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
                return bad("lambda values must be finite and >= 0".into());
            }
        }
        if let RegGrid::Ell(v) = &self.reg {
            if v.iter().any(|e| !e.is_finite()) {
                return bad("ell values must be finite".into());
            }
        }
        if let T0Schedule::Fixed { t0: 0 } = self.t0 {
            return bad("T0 must be positive".into());
        }
        if self.sampler == DownstreamSampler::Wishart {
            let d = self.spectrum.d();
            if let Some(&t) = self.t_grid.iter().find(|&&t| t < d) {
                return bad(format!("the Wishart sampler needs T >= d, got T={t} with d={d}"));
            }
        }
        Ok(())
    }

    /// Number of records the sweep produces.
    pub fn record_count(&self) -> usize {
        self.t_grid.len() * self.n_grid.len() * self.reg.len() * self.replicates
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryStatus {
    Ok,
    NotApplicable,
    Divergent,
}

/// One measurement: a `(n, T, lambda)` cell and replicate, with the matched
/// theory. Theory columns are empty unless `theory_status` is `ok`;
/// `theory_rho_term` holds `rho`, so that
/// `theory_total = theory_bias + theory_delta_bias + theory_var + n sigma0^2 theory_rho_term`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "T0")]
    pub t0: usize,
    pub lambda: f64,
    pub ell: Option<f64>,
    pub sigma: f64,
    pub sigma0: f64,
    pub design_mode: DesignMode,
    pub replicate: usize,
    pub measured_error: f64,
    pub theory_total: Option<f64>,
    pub theory_bias: Option<f64>,
    pub theory_var: Option<f64>,
    pub theory_rho_term: Option<f64>,
    pub theory_delta_bias: Option<f64>,
    pub seed: u64,
    pub theory_status: TheoryStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CellTheory {
    status: TheoryStatus,
    total: Option<f64>,
    bias: Option<f64>,
    var: Option<f64>,
    rho: Option<f64>,
    delta_bias: Option<f64>,
}

impl CellTheory {
    fn missing(status: TheoryStatus) -> Self {
        Self {
            status,
            total: None,
            bias: None,
            var: None,
            rho: None,
            delta_bias: None,
        }
    }
}

/// Theory columns of a cell, as stored in the records:
/// `(status, total, bias, var, rho, delta_bias)`.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub fn theory_for_cell(
    s: &Spectrum,
    g: &GroundTruth,
    n: usize,
    t0: usize,
    t: usize,
    lambda: f64,
    noise: NoiseLevels,
    mode: DesignMode,
    finite_size: bool,
) -> (TheoryStatus, Option<[f64; 5]>) {
    let c = cell_theory(s, g, n, t0, t, lambda, noise, mode, finite_size);
    match c.status {
        TheoryStatus::Ok => (
            c.status,
            Some([
                c.total.unwrap(),
                c.bias.unwrap(),
                c.var.unwrap(),
                c.rho.unwrap(),
                c.delta_bias.unwrap(),
            ]),
        ),
        status => (status, None),
    }
}

#[allow(clippy::too_many_arguments)]
fn cell_theory(
    s: &Spectrum,
    g: &GroundTruth,
    n: usize,
    t0: usize,
    t: usize,
    lambda: f64,
    noise: NoiseLevels,
    mode: DesignMode,
    finite_size: bool,
) -> CellTheory {
    let d = s.d();
    // Exact ridgeless finite-size form: valid for any covariance and both
    // design modes once every design has at least d + 2 rows.
    if finite_size && lambda == 0.0 && t >= d + 2 && (n == 0 || t0 >= d + 2) {
        let var = noise.sigma * noise.sigma * d as f64 / (t - d - 1) as f64;
        let rho = if t0 >= d + 2 {
            d as f64 / (t0 - d - 1) as f64
        } else {
            0.0
        };
        let total = var + n as f64 * noise.sigma0 * noise.sigma0 * rho;
        return CellTheory {
            status: TheoryStatus::Ok,
            total: Some(total),
            bias: Some(0.0),
            var: Some(var),
            rho: Some(rho),
            delta_bias: Some(0.0),
        };
    }
    let options = PredictOptions {
        finite_size_rho: finite_size,
    };
    match predict_test_error_with(s, g, n, t0, t, lambda, noise, mode, options) {
        Ok(p) => CellTheory {
            status: TheoryStatus::Ok,
            total: Some(p.total),
            bias: Some(p.bias),
            var: Some(p.variance),
            rho: Some(p.rho),
            delta_bias: Some(p.delta_bias),
        },
        Err(TheoryError::Divergent { .. }) => CellTheory::missing(TheoryStatus::Divergent),
        Err(_) => CellTheory::missing(TheoryStatus::NotApplicable),
    }
}

/// Runs every `(n, T, reg)` cell for every replicate, sorted by cell then
/// replicate, and writes the CSV when `spec.output` is set.
///
/// Within a replicate the generator chain is run once per distinct `T0` up to
/// the largest `n`, and one downstream sample per `T` is shared by all `n` and
/// ridge strengths.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ExperimentRecord>, HarnessError> {
    spec.validate()?;
    let (s, g) = spec.spectrum.build()?;
    let noise = NoiseLevels::new(spec.sigma0, spec.sigma)?;
    let n_max = *spec.n_grid.iter().max().expect("validated");

    let mut theory = HashMap::new();
    for (ni, &n) in spec.n_grid.iter().enumerate() {
        for (ti, &t) in spec.t_grid.iter().enumerate() {
            let t0 = spec.t0.t0_at(t);
            for ri in 0..spec.reg.len() {
                let (lambda, _) = spec.reg.at(ri, t);
                let c = cell_theory(
                    &s,
                    &g,
                    n,
                    t0,
                    t,
                    lambda,
                    noise,
                    spec.design_mode,
                    spec.finite_size_theory,
                );
                theory.insert((ni, ti, ri), c);
            }
        }
    }

    let per_replicate: Vec<Vec<Keyed>> = (0..spec.replicates)
        .into_par_iter()
        .map(|k| replicate(spec, &s, &g, n_max, k, &theory))
        .collect::<Result<_, _>>()?;
    let mut keyed: Vec<_> = per_replicate.into_iter().flatten().collect();
    keyed.sort_by_key(|(key, _)| *key);
    let records: Vec<ExperimentRecord> = keyed.into_iter().map(|(_, r)| r).collect();

    if let Some(path) = &spec.output {
        write_records_csv(path, &records)?;
    }
    Ok(records)
}

type Keyed = ((usize, usize, usize, usize), ExperimentRecord);

fn replicate(
    spec: &SweepSpec,
    s: &Spectrum,
    g: &GroundTruth,
    n_max: usize,
    k: usize,
    theory: &HashMap<(usize, usize, usize), CellTheory>,
) -> Result<Vec<Keyed>, HarnessError> {
    let streams = ReplicateStreams::new(spec.seed, k as u64);
    let mut chains: HashMap<usize, Vec<DVector<f64>>> = HashMap::new();
    let mut out = Vec::with_capacity(spec.n_grid.len() * spec.t_grid.len() * spec.reg.len());
    for (ti, &t) in spec.t_grid.iter().enumerate() {
        let t0 = spec.t0.t0_at(t);
        if let Entry::Vacant(slot) = chains.entry(t0) {
            let cfg = ChainConfig::uniform(n_max, t0, spec.sigma0, spec.design_mode, spec.seed);
            slot.insert(run_chain_with(&cfg, s, g, &streams)?.per_generation);
        }
        let generations = &chains[&t0];
        let problem = DownstreamProblem::sample(s, t, spec.sigma, spec.sampler, &streams)?;
        for ri in 0..spec.reg.len() {
            let (lambda, ell) = spec.reg.at(ri, t);
            let solver = problem.solver(lambda)?;
            for (ni, &n) in spec.n_grid.iter().enumerate() {
                let w = solver.fit(&generations[n]);
                let c = theory[&(ni, ti, ri)];
                out.push((
                    (ni, ti, ri, k),
                    ExperimentRecord {
                        schema_version: SCHEMA_VERSION,
                        n,
                        t,
                        t0,
                        lambda,
                        ell,
                        sigma: spec.sigma,
                        sigma0: spec.sigma0,
                        design_mode: spec.design_mode,
                        replicate: k,
                        measured_error: exact_test_error(&w, g, s)?,
                        theory_total: c.total,
                        theory_bias: c.bias,
                        theory_var: c.var,
                        theory_rho_term: c.rho,
                        theory_delta_bias: c.delta_bias,
                        seed: spec.seed,
                        theory_status: c.status,
                    },
                ));
            }
        }
    }
    Ok(out)
}

/// Writes the records with a header row, through a temporary file renamed
/// into place.
pub fn write_records_csv(path: &Path, records: &[ExperimentRecord]) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut w = csv::WriterBuilder::new().has_headers(true).from_path(&tmp)?;
        if records.is_empty() {
            w.write_record(HEADER)?;
        }
        for r in records {
            w.serialize(r)?;
        }
        w.flush().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

const HEADER: [&str; 18] = [
    "schema_version",
    "n",
    "T",
    "T0",
    "lambda",
    "ell",
    "sigma",
    "sigma0",
    "design_mode",
    "replicate",
    "measured_error",
    "theory_total",
    "theory_bias",
    "theory_var",
    "theory_rho_term",
    "theory_delta_bias",
    "seed",
    "theory_status",
];

pub fn read_records_csv(path: &Path) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let records = r.deserialize().collect::<Result<Vec<ExperimentRecord>, _>>()?;
    if let Some(bad) = records.iter().find(|r| r.schema_version != SCHEMA_VERSION) {
        return Err(HarnessError::InvalidSpec(format!(
            "{}: schema version {} is not {SCHEMA_VERSION}",
            path.display(),
            bad.schema_version
        )));
    }
    Ok(records)
}
