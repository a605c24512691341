//! `sweep`, `compare` and `slope`: Monte Carlo sweeps and their analysis.

use std::fs;
use std::path::{Path, PathBuf};

use collapse_core::harness::{read_records_csv, write_records_csv};
use collapse_core::{compare, fit_loglog_slope, run_sweep, CompareReport, ExperimentRecord, SlopeFit};

use crate::config::{RunConfig, SlopeConfig};
use crate::error::CliError;

pub fn sweep(
    cfg: &RunConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
    default_out: PathBuf,
) -> Result<PathBuf, CliError> {
    let section = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no `sweep` section".into()))?;
    if section.runs.is_empty() {
        return Err(CliError::Config("`sweep.runs` is empty".into()));
    }
    let mut specs = section.runs.clone();
    for (i, spec) in specs.iter_mut().enumerate() {
        if spec.output.is_some() {
            return Err(CliError::Config(
                "set `output` on the sweep section, not on individual runs".into(),
            ));
        }
        if let Some(s) = seed {
            spec.seed = s.wrapping_add(i as u64);
        }
        spec.validate()?;
    }
    let path = out.or_else(|| section.output.clone()).unwrap_or(default_out);

    let mut records = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        eprintln!("run {}/{}: {} records", i + 1, specs.len(), spec.record_count());
        records.extend(run_sweep(spec)?);
    }
    ensure_parent(&path)?;
    write_records_csv(&path, &records).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("wrote {} records to {}", records.len(), path.display());
    print!("{}", render_summary(&compare(&records)));
    Ok(path)
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))
        }
        _ => Ok(()),
    }
}

fn read_input(path: &Path) -> Result<Vec<ExperimentRecord>, CliError> {
    let records = read_records_csv(path)?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    Ok(records)
}

pub fn render_summary(report: &CompareReport) -> String {
    let mut out = format!("cells: {}, with theory: {}", report.cells.len(), report.compared);
    if let (Some(frac), Some(z)) = (report.fraction_within_3, report.max_abs_z) {
        out.push_str(&format!(", |z| < 3: {:.1}%, max |z|: {z:.2}", 100.0 * frac));
    }
    out.push('\n');
    for t in &report.n_trends {
        out.push_str(&format!(
            "n-trend T={} T0={} lambda={:.3e}: slope {:.4e}",
            t.t, t.t0, t.lambda, t.slope
        ));
        if let (Some(p), Some(rel)) = (t.predicted, t.relative_error) {
            out.push_str(&format!(" (theory {p:.4e}, {:.1}% off)", 100.0 * rel));
        }
        out.push('\n');
    }
    out
}

pub fn compare_file(input: &Path) -> Result<CompareReport, CliError> {
    let report = compare(&read_input(input)?);
    println!(
        "{:>4} {:>8} {:>8} {:>11} {:>8} {:>12} {:>12} {:>7}",
        "n", "T", "T0", "lambda", "mode", "mean", "theory", "z"
    );
    for c in &report.cells {
        let theory = c.theory.map_or("-".to_string(), |v| format!("{v:.5e}"));
        let z = c.z.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!(
            "{:>4} {:>8} {:>8} {:>11.3e} {:>8} {:>12.5e} {:>12} {:>7}",
            c.n,
            c.t,
            c.t0,
            c.lambda,
            c.design_mode.as_str(),
            c.mean,
            theory,
            z
        );
    }
    print!("{}", render_summary(&report));
    Ok(report)
}

fn matches(value: f64, want: Option<f64>) -> bool {
    want.is_none_or(|w| (value - w).abs() <= 1e-9 * w.abs().max(1e-300))
}

/// Fits the log-log slope of one curve selected from a sweep CSV.
pub fn slope(sel: &SlopeConfig) -> Result<SlopeFit, CliError> {
    let input = sel
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("slope needs an input CSV".into()))?;
    let records: Vec<ExperimentRecord> = read_input(input)?
        .into_iter()
        .filter(|r| sel.n.is_none_or(|n| r.n == n))
        .filter(|r| matches(r.lambda, sel.lambda))
        .filter(|r| sel.ell.is_none() || r.ell.is_some_and(|e| matches(e, sel.ell)))
        .collect();
    if records.is_empty() {
        return Err(CliError::Config("no records match the selection".into()));
    }
    let mut curves: Vec<(usize, u64, &str, u64, u64)> = records
        .iter()
        .map(|r| {
            let reg = r.ell.map_or(r.lambda.to_bits(), f64::to_bits);
            (r.n, reg, r.design_mode.as_str(), r.sigma.to_bits(), r.sigma0.to_bits())
        })
        .collect();
    curves.sort_unstable();
    curves.dedup();
    if curves.len() > 1 {
        return Err(CliError::Config(format!(
            "selection spans {} curves; narrow it with --n, --lambda or --ell",
            curves.len()
        )));
    }
    let range = match (sel.t_min, sel.t_max) {
        (None, None) => None,
        (lo, hi) => Some((lo.unwrap_or(0.0), hi.unwrap_or(f64::INFINITY))),
    };
    Ok(fit_loglog_slope(&records, range)?)
}
