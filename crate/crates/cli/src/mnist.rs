//! `mnist`: kernel ridge collapse curves on MNIST.

use std::fs;
use std::path::{Path, PathBuf};

use collapse_core::kernels::summarize_krr;
use collapse_core::theory::exponents;
use collapse_core::{load_mnist_dir, run_krr_collapse, Dataset, KrrCollapseSpec, KrrRecord, Split};

use crate::config::{EllChoice, MnistRun, NamedEll, RunConfig};
use crate::error::CliError;
use crate::sweep::ensure_parent;

pub const DATA_ENV: &str = "COLLAPSE_LAB_DATA";

/// Resolves named exponents. `star` uses `b = ln T0 / ln T_max`, so that
/// `T0 = T_max^b` at the largest sample size of the curve.
pub fn resolve(run: &MnistRun, seed: Option<u64>) -> Result<KrrCollapseSpec, CliError> {
    let t_max = run.t_grid.iter().copied().max().unwrap_or(0);
    let mut ells = Vec::with_capacity(run.ells.len());
    for choice in &run.ells {
        ells.push(match *choice {
            EllChoice::Value(v) => v,
            EllChoice::Named(name) => {
                let cap = run
                    .capacity
                    .ok_or_else(|| CliError::Config("named ells need a `capacity` with beta and r".into()))?;
                if t_max < 2 || run.t0 == 0 {
                    return Err(CliError::Config(
                        "named ells need T0 >= 1 and a T grid reaching 2".into(),
                    ));
                }
                let b = (run.t0 as f64).ln() / (t_max as f64).ln();
                let ex = exponents(cap.beta, cap.r, 0.0, b)?;
                match name {
                    NamedEll::Crit => ex.ell_crit,
                    NamedEll::Star => ex.ell_star,
                }
            }
        });
    }
    let spec = KrrCollapseSpec {
        kernel: run.kernel,
        t0: run.t0,
        n_grid: run.n_grid.clone(),
        t_grid: run.t_grid.clone(),
        ells,
        generator_ell: run.generator_ell,
        sigma0: run.sigma0,
        sigma: run.sigma,
        replicates: run.replicates,
        test_size: run.test_size,
        test_label_noise: run.test_label_noise,
        seed: seed.unwrap_or(run.seed),
    };
    spec.validate()?;
    Ok(spec)
}

pub fn data_dir(configured: Option<&Path>) -> PathBuf {
    configured
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ENV).map(|p| PathBuf::from(p).join("mnist")))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn load(dir: &Path) -> Result<(Dataset, Dataset), CliError> {
    let load = |split| {
        load_mnist_dir(dir, split).map_err(|e| {
            CliError::Data(format!(
                "{e}\n\nThe MNIST IDX files were not found or could not be read in {}.\n\
                 Place train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte and\n\
                 t10k-labels-idx1-ubyte there (gzip-compressed .gz copies also work), e.g. from the\n\
                 `mnist-data` npm package (`npm pack mnist-data`, then unpack the tarball), or set\n\
                 {DATA_ENV} to a directory containing mnist/ with those files.",
                dir.display()
            ))
        })
    };
    Ok((load(Split::Train)?, load(Split::Test)?))
}

fn write_csv(path: &Path, records: &[KrrRecord]) -> Result<(), CliError> {
    let internal = |e: &dyn std::fmt::Display| CliError::Internal(format!("{}: {e}", path.display()));
    let tmp = path.with_extension("csv.tmp");
    let mut w = csv::Writer::from_path(&tmp).map_err(|e| internal(&e))?;
    for r in records {
        w.serialize(r).map_err(|e| internal(&e))?;
    }
    w.flush().map_err(|e| internal(&e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| internal(&e))
}

pub fn mnist(
    cfg: &RunConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
    default_out: PathBuf,
) -> Result<PathBuf, CliError> {
    let section = cfg
        .mnist
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no `mnist` section".into()))?;
    if section.runs.is_empty() {
        return Err(CliError::Config("`mnist.runs` is empty".into()));
    }
    let specs = section
        .runs
        .iter()
        .enumerate()
        .map(|(i, run)| resolve(run, seed.map(|s| s.wrapping_add(i as u64))))
        .collect::<Result<Vec<_>, _>>()?;
    let path = out.or_else(|| section.output.clone()).unwrap_or(default_out);
    let (train, test) = load(&data_dir(section.data_dir.as_deref()))?;

    let mut records = Vec::new();
    for spec in &specs {
        let ells: Vec<String> = spec.ells.iter().map(|e| format!("{e:.4}")).collect();
        println!(
            "{} kernel, T0={}, ell in [{}]",
            spec.kernel.name(),
            spec.t0,
            ells.join(", ")
        );
        let run = run_krr_collapse(spec, &train, &test)?;
        println!("{:>4} {:>8} {:>6} {:>10} {:>10}", "n", "ell", "T", "mean", "stderr");
        for p in summarize_krr(&run) {
            println!(
                "{:>4} {:>8.4} {:>6} {:>10.5} {:>10.5}",
                p.n, p.ell, p.t, p.mean, p.stderr
            );
        }
        records.extend(run);
    }
    ensure_parent(&path)?;
    write_csv(&path, &records)?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(ells: &str) -> MnistRun {
        serde_json::from_str(&format!(
            r#"{{"kernel": {{"kind": "rbf", "bandwidth": 1e-4}}, "capacity": {{"beta": 1.65, "r": 0.097}},
                "t0": 500, "n_grid": [0, 2], "t_grid": [100, 1000], "ells": {ells}, "seed": 1}}"#
        ))
        .unwrap()
    }

    #[test]
    fn named_ells_follow_the_capacity() {
        let spec = resolve(&run(r#"["crit", "star", 0.3]"#), None).unwrap();
        let crit = 1.65 / (1.0 + 2.0 * 1.65 * 0.097);
        let b = 500f64.ln() / 1000f64.ln();
        assert!((spec.ells[0] - crit).abs() < 1e-12);
        assert!((spec.ells[1] - b * crit).abs() < 1e-12);
        assert_eq!(spec.ells[2], 0.3);
        assert_eq!((spec.replicates, spec.generator_ell), (10, None));
    }

    #[test]
    fn named_ells_need_capacity() {
        let mut r = run(r#"["crit"]"#);
        r.capacity = None;
        assert!(matches!(resolve(&r, None), Err(CliError::Config(_))));
    }

    #[test]
    fn seed_override_applies() {
        assert_eq!(resolve(&run("[1.0]"), Some(99)).unwrap().seed, 99);
    }
}
