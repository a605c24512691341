use serde::{Deserialize, Serialize};

use super::{ExperimentRecord, HarnessError, TheoryStatus};
use crate::simulate::{mean_stderr, DesignMode};

/// Ordinary least squares of `log y` on `log T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the residuals (zero for an exact fit
    /// up to rounding).
    pub stderr: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

const MIN_POINTS: usize = 4;

/// Fits `log y = intercept + slope log x`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<SlopeFit, HarnessError> {
    if xs.len() != ys.len() || xs.len() < MIN_POINTS {
        return Err(HarnessError::InsufficientPoints {
            needed: MIN_POINTS,
            found: xs.len().min(ys.len()),
        });
    }
    if let Some(&bad) = xs.iter().chain(ys).find(|&&v| !(v > 0.0)) {
        return Err(HarnessError::NonPositive(bad));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::InsufficientPoints {
            needed: MIN_POINTS,
            found: 1,
        });
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = (rss / (k - 2.0) / sxx).sqrt();
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        t_min: xs.iter().cloned().fold(f64::INFINITY, f64::min),
        t_max: xs.iter().cloned().fold(0.0, f64::max),
        points: xs.len(),
    })
}

/// Slope of the replicate-mean `measured_error` against `T` on log-log axes,
/// restricted to `T` in `range` (inclusive). The records should form a single
/// curve (one `n` and one ridge setting).
pub fn fit_loglog_slope(records: &[ExperimentRecord], range: Option<(f64, f64)>) -> Result<SlopeFit, HarnessError> {
    let mut ts: Vec<usize> = records
        .iter()
        .map(|r| r.t)
        .filter(|&t| range.is_none_or(|(lo, hi)| (t as f64) >= lo && (t as f64) <= hi))
        .collect();
    ts.sort_unstable();
    ts.dedup();
    if ts.len() < MIN_POINTS {
        return Err(HarnessError::InsufficientPoints {
            needed: MIN_POINTS,
            found: ts.len(),
        });
    }
    let means: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let errs: Vec<f64> = records.iter().filter(|r| r.t == t).map(|r| r.measured_error).collect();
            mean_stderr(&errs).0
        })
        .collect();
    let xs: Vec<f64> = ts.iter().map(|&t| t as f64).collect();
    fit_loglog(&xs, &means)
}

/// Replicate summary of one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
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
    pub replicates: usize,
    pub mean: f64,
    pub stderr: f64,
    pub theory_status: TheoryStatus,
    pub theory: Option<f64>,
    pub theory_rho: Option<f64>,
    /// `(mean - theory) / stderr`
    pub z: Option<f64>,
}

/// Least-squares slope of the cell means against `n`, for cells that share
/// everything else, next to the predicted slope `sigma0^2 rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NTrend {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "T0")]
    pub t0: usize,
    pub lambda: f64,
    pub ns: Vec<usize>,
    pub slope: f64,
    pub predicted: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub cells: Vec<CellSummary>,
    /// Cells with a theory value.
    pub compared: usize,
    pub max_abs_z: Option<f64>,
    /// Fraction of compared cells with `|z| < 3`.
    pub fraction_within_3: Option<f64>,
    pub n_trends: Vec<NTrend>,
}

type CellKey = (usize, usize, usize, u64, u64, u64, DesignMode);

fn cell_key(r: &ExperimentRecord) -> CellKey {
    (
        r.n,
        r.t,
        r.t0,
        r.lambda.to_bits(),
        r.sigma.to_bits(),
        r.sigma0.to_bits(),
        r.design_mode,
    )
}

/// Groups records into cells and scores each replicate mean against the theory
/// column.
pub fn compare(records: &[ExperimentRecord]) -> CompareReport {
    let mut groups: Vec<(CellKey, Vec<&ExperimentRecord>)> = Vec::new();
    for r in records {
        let key = cell_key(r);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }

    let cells: Vec<CellSummary> = groups
        .iter()
        .map(|(_, rs)| {
            let first = rs[0];
            let errs: Vec<f64> = rs.iter().map(|r| r.measured_error).collect();
            let (mean, stderr) = mean_stderr(&errs);
            let theory = first.theory_total.filter(|_| first.theory_status == TheoryStatus::Ok);
            let z = theory.map(|th| {
                if stderr > 0.0 {
                    (mean - th) / stderr
                } else if mean == th {
                    0.0
                } else {
                    (mean - th).signum() * f64::INFINITY
                }
            });
            CellSummary {
                n: first.n,
                t: first.t,
                t0: first.t0,
                lambda: first.lambda,
                ell: first.ell,
                sigma: first.sigma,
                sigma0: first.sigma0,
                design_mode: first.design_mode,
                replicates: rs.len(),
                mean,
                stderr,
                theory_status: first.theory_status,
                theory,
                theory_rho: first
                    .theory_rho_term
                    .filter(|_| first.theory_status == TheoryStatus::Ok),
                z,
            }
        })
        .collect();

    let zs: Vec<f64> = cells.iter().filter_map(|c| c.z).collect();
    let compared = zs.len();
    let max_abs_z = zs.iter().map(|z| z.abs()).reduce(f64::max);
    let fraction_within_3 =
        (compared > 0).then(|| zs.iter().filter(|z| z.abs() < 3.0).count() as f64 / compared as f64);
    let n_trends = n_trends(&cells);
    CompareReport {
        cells,
        compared,
        max_abs_z,
        fraction_within_3,
        n_trends,
    }
}

fn n_trends(cells: &[CellSummary]) -> Vec<NTrend> {
    let mut keys: Vec<(usize, usize, u64, u64, u64, DesignMode)> = Vec::new();
    for c in cells {
        let key = (
            c.t,
            c.t0,
            c.lambda.to_bits(),
            c.sigma.to_bits(),
            c.sigma0.to_bits(),
            c.design_mode,
        );
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .filter_map(|key| {
            let mut members: Vec<&CellSummary> = cells
                .iter()
                .filter(|c| {
                    (
                        c.t,
                        c.t0,
                        c.lambda.to_bits(),
                        c.sigma.to_bits(),
                        c.sigma0.to_bits(),
                        c.design_mode,
                    ) == key
                })
                .collect();
            members.sort_by_key(|c| c.n);
            if members.len() < 2 {
                return None;
            }
            let ns: Vec<f64> = members.iter().map(|c| c.n as f64).collect();
            let k = ns.len() as f64;
            let mn = ns.iter().sum::<f64>() / k;
            let my = members.iter().map(|c| c.mean).sum::<f64>() / k;
            let sxx: f64 = ns.iter().map(|n| (n - mn) * (n - mn)).sum();
            let sxy: f64 = ns.iter().zip(&members).map(|(n, c)| (n - mn) * (c.mean - my)).sum();
            let slope = sxy / sxx;
            let predicted = members
                .iter()
                .find(|c| c.n > 0)
                .and_then(|c| c.theory_rho.map(|rho| c.sigma0 * c.sigma0 * rho));
            let relative_error = predicted.filter(|&p| p != 0.0).map(|p| (slope - p).abs() / p.abs());
            Some(NTrend {
                t: key.0,
                t0: key.1,
                lambda: f64::from_bits(key.2),
                ns: members.iter().map(|c| c.n).collect(),
                slope,
                predicted,
                relative_error,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SCHEMA_VERSION;

    fn record(n: usize, t: usize, err: f64, theory: Option<f64>) -> ExperimentRecord {
        ExperimentRecord {
            schema_version: SCHEMA_VERSION,
            n,
            t,
            t0: 100,
            lambda: 0.0,
            ell: None,
            sigma: 0.1,
            sigma0: 0.2,
            design_mode: DesignMode::Independent,
            replicate: 0,
            measured_error: err,
            theory_total: theory,
            theory_bias: theory.map(|_| 0.0),
            theory_var: theory,
            theory_rho_term: theory.map(|_| 1.0),
            theory_delta_bias: theory.map(|_| 0.0),
            seed: 0,
            theory_status: if theory.is_some() {
                TheoryStatus::Ok
            } else {
                TheoryStatus::NotApplicable
            },
        }
    }

    #[test]
    fn exact_power_law_slope() {
        let xs: Vec<f64> = (0..6).map(|i| 10f64.powf(2.0 + 0.5 * i as f64)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-0.6)).collect();
        let fit = fit_loglog(&xs, &ys).unwrap();
        assert!((fit.slope + 0.6).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
        assert!(fit.stderr < 1e-10);
    }

    #[test]
    fn slope_from_records_and_range() {
        let recs: Vec<ExperimentRecord> = [10usize, 20, 40, 80, 160, 320]
            .iter()
            .flat_map(|&t| [record(0, t, 2.0 / t as f64, None), record(0, t, 2.0 / t as f64, None)])
            .collect();
        let fit = fit_loglog_slope(&recs, None).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert_eq!(fit.points, 6);
        let fit = fit_loglog_slope(&recs, Some((20.0, 160.0))).unwrap();
        assert_eq!((fit.t_min, fit.t_max), (20.0, 160.0));
        assert!(matches!(
            fit_loglog_slope(&recs, Some((100.0, 400.0))),
            Err(HarnessError::InsufficientPoints { found: 2, .. })
        ));
        let zero = vec![
            record(0, 1, 0.0, None),
            record(0, 2, 1.0, None),
            record(0, 3, 1.0, None),
            record(0, 4, 1.0, None),
        ];
        assert!(matches!(
            fit_loglog_slope(&zero, None),
            Err(HarnessError::NonPositive(_))
        ));
    }

    #[test]
    fn exact_theory_gives_zero_z() {
        let recs = vec![record(0, 200, 0.5, Some(0.5)), record(0, 200, 0.5, Some(0.5))];
        let rep = compare(&recs);
        assert_eq!(rep.cells[0].z, Some(0.0));
        assert_eq!(rep.fraction_within_3, Some(1.0));
    }

    #[test]
    fn z_scores_and_coverage() {
        let mut recs = vec![];
        for (i, &e) in [1.0, 1.2, 0.8, 1.0].iter().enumerate() {
            let mut r = record(1, 200, e, Some(1.0));
            r.replicate = i;
            recs.push(r);
            let mut r = record(2, 200, e + 1.0, Some(1.0));
            r.replicate = i;
            recs.push(r);
        }
        recs.push(record(3, 200, 7.0, None));
        let rep = compare(&recs);
        assert_eq!(rep.cells.len(), 3);
        assert_eq!(rep.compared, 2);
        assert_eq!(rep.fraction_within_3, Some(0.5));
        assert!(rep.max_abs_z.unwrap() > 3.0);
        let trend = &rep.n_trends[0];
        assert_eq!(trend.ns, vec![1, 2, 3]);
        assert!((trend.predicted.unwrap() - 0.04).abs() < 1e-15);
    }
}
