use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::csv_error;
use crate::error::{Error, Result};

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub seed: u64,
    pub iteration: usize,
    pub labeled_count: usize,
    pub test_acc: f64,
    pub mean_class_acc: f64,
    pub rare_class_acc: Option<f64>,
    pub al_forward: u64,
    pub al_backward: u64,
    pub wall_ms: Option<f64>,
}

impl ReportRow {
    pub const HEADER: [&'static str; 10] = [
        "method",
        "seed",
        "iteration",
        "labeled_count",
        "test_acc",
        "mean_class_acc",
        "rare_class_acc",
        "al_forward",
        "al_backward",
        "wall_ms",
    ];
}

/// Mean and sample standard deviation over seeds for one (method, iteration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub iteration: usize,
    pub seeds: usize,
    pub labeled_count: f64,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
    pub mean_class_acc_mean: f64,
    pub mean_class_acc_std: f64,
    pub rare_class_acc_mean: Option<f64>,
    pub rare_class_acc_std: Option<f64>,
    pub al_forward_mean: f64,
    pub al_backward_mean: f64,
}

/// `(mean, sample std)`; the std of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups rows by (method, iteration), in order of first appearance of each
/// method and ascending iteration. Every seed of a method must cover the
/// same iterations, and no (method, seed, iteration) may repeat.
pub fn aggregate(rows: &[ReportRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::Empty("report rows"));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut grid: BTreeMap<&str, BTreeMap<usize, BTreeMap<u64, &ReportRow>>> = BTreeMap::new();
    for r in rows {
        if !grid.contains_key(r.method.as_str()) {
            order.push(&r.method);
        }
        let by_seed = grid.entry(&r.method).or_default().entry(r.iteration).or_default();
        if by_seed.insert(r.seed, r).is_some() {
            return Err(Error::Config(format!(
                "duplicate row for method {} seed {} iteration {}",
                r.method, r.seed, r.iteration
            )));
        }
    }

    let mut out = Vec::new();
    for method in order {
        let iters = &grid[method];
        let seeds: BTreeSet<u64> = iters.values().flat_map(|m| m.keys().copied()).collect();
        for (&iteration, by_seed) in iters {
            if by_seed.len() != seeds.len() {
                let missing: Vec<u64> = seeds.iter().filter(|s| !by_seed.contains_key(s)).copied().collect();
                return Err(Error::Config(format!(
                    "grid mismatch: method {method} iteration {iteration} lacks seeds {missing:?}"
                )));
            }
            let col = |f: &dyn Fn(&ReportRow) -> f64| -> Vec<f64> { by_seed.values().map(|r| f(r)).collect() };
            let (test_acc_mean, test_acc_std) = mean_std(&col(&|r| r.test_acc));
            let (mean_class_acc_mean, mean_class_acc_std) = mean_std(&col(&|r| r.mean_class_acc));
            let rare: Option<Vec<f64>> = by_seed.values().map(|r| r.rare_class_acc).collect();
            let rare = rare.map(|v| mean_std(&v));
            out.push(SummaryRow {
                method: method.to_string(),
                iteration,
                seeds: by_seed.len(),
                labeled_count: mean_std(&col(&|r| r.labeled_count as f64)).0,
                test_acc_mean,
                test_acc_std,
                mean_class_acc_mean,
                mean_class_acc_std,
                rare_class_acc_mean: rare.map(|r| r.0),
                rare_class_acc_std: rare.map(|r| r.1),
                al_forward_mean: mean_std(&col(&|r| r.al_forward as f64)).0,
                al_backward_mean: mean_std(&col(&|r| r.al_backward as f64)).0,
            });
        }
    }
    Ok(out)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().ne(ReportRow::HEADER.iter().copied()) {
        return Err(Error::Config(format!("{}: not a run report header", path.display())));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub fn write_summary(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aggregates every report matching a glob pattern into one summary file.
pub fn aggregate_files(pattern: &str, out: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    let paths = glob::glob(pattern).map_err(|e| Error::Config(format!("bad glob {pattern}: {e}")))?;
    let mut rows = Vec::new();
    let mut any = false;
    for p in paths {
        let p = p.map_err(|e| Error::io(e.path().to_path_buf(), e.into()))?;
        rows.extend(read_report(&p)?);
        any = true;
    }
    if !any {
        return Err(Error::Config(format!("no report matches {pattern}")));
    }
    let summary = aggregate(&rows)?;
    write_summary(&summary, out)?;
    Ok(summary)
}
