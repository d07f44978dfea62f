//! Multi-seed execution, sweeps and CSV output.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use fedpoison::engine::{summarize, SummaryPoint};
use fedpoison::{RoundRecord, Simulation};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};

pub const RAW_HEADER: &str = "sweep_value,seed,round,test_acc,update_norm,fake_selected";
pub const SUMMARY_HEADER: &str = "sweep_value,round,mean_acc,std_acc";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("could not build thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
    #[error("summary for sweep value {sweep}: {message}")]
    Summary { sweep: String, message: String },
}

/// One `(sweep value, seed)` run.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub sweep_value: Option<f64>,
    pub seed: u64,
    /// Records of the rounds that completed (all of them unless aborted).
    pub records: Vec<RoundRecord>,
    /// Why the run stopped early, if it did.
    pub abort: Option<String>,
}

impl CellResult {
    /// Accuracy at the last evaluation; for an aborted run, the last one
    /// before the abort.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.test_accuracy)
    }
}

/// One line of the raw CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub round: usize,
    pub test_acc: f64,
    pub update_norm: f64,
    pub fake_selected: usize,
    pub warnings: Vec<String>,
}

/// Summary statistics for one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub sweep_value: Option<f64>,
    pub points: Vec<SummaryPoint>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub cells: Vec<CellResult>,
    pub rows: Vec<MetricsRow>,
    pub summaries: Vec<SweepSummary>,
}

impl ExperimentReport {
    pub fn aborted(&self) -> usize {
        self.cells.iter().filter(|c| c.abort.is_some()).count()
    }
}

pub fn format_sweep_value(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => "none".to_string(),
    }
}

/// Runs every cell, in parallel, returning them ordered by sweep value
/// (config order) and then seed.
pub fn run_cells(config: &ExperimentConfig) -> Result<Vec<CellResult>, ExperimentError> {
    config.validate()?;
    let cells: Vec<(Option<f64>, usize)> =
        config.sweep_points().into_iter().flat_map(|p| (0..config.repeats).map(move |i| (p, i))).collect();
    Ok(cells
        .into_par_iter()
        .map(|(point, repeat)| {
            let sim = config.cell_config(point, repeat);
            let seed = sim.master_seed;
            let (records, abort) = match Simulation::new(sim).map(|s| s.run()) {
                Ok(Ok(records)) => (records, None),
                Ok(Err(abort)) => {
                    let message = abort.to_string();
                    (abort.records, Some(message))
                }
                Err(e) => (Vec::new(), Some(e.to_string())),
            };
            CellResult { sweep_value: point, seed, records, abort }
        })
        .collect())
}

/// One row per evaluated round. A row carries the warnings of every round
/// since the previous evaluated one.
pub fn metrics_rows(cells: &[CellResult]) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for c in cells {
        let mut pending = Vec::new();
        for r in &c.records {
            pending.extend(r.warnings.iter().map(|w| format!("round {}: {w}", r.round)));
            if let Some(acc) = r.test_accuracy {
                rows.push(MetricsRow {
                    sweep_value: c.sweep_value,
                    seed: c.seed,
                    round: r.round,
                    test_acc: acc,
                    update_norm: r.update_norm,
                    fake_selected: r.fake_selected,
                    warnings: std::mem::take(&mut pending),
                });
            }
        }
    }
    rows
}

/// Per-sweep-value statistics over the runs that finished.
pub fn summaries(config: &ExperimentConfig, cells: &[CellResult]) -> Result<Vec<SweepSummary>, ExperimentError> {
    config
        .sweep_points()
        .into_iter()
        .map(|point| {
            let runs: Vec<Vec<RoundRecord>> = cells
                .iter()
                .filter(|c| c.sweep_value == point && c.abort.is_none())
                .map(|c| c.records.clone())
                .collect();
            let points = summarize(&runs).map_err(|e| ExperimentError::Summary {
                sweep: format_sweep_value(point),
                message: e.to_string(),
            })?;
            Ok(SweepSummary { sweep_value: point, points })
        })
        .collect()
}

pub fn raw_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(RAW_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.12},{:.12e},{}",
            format_sweep_value(r.sweep_value),
            r.seed,
            r.round,
            r.test_acc,
            r.update_norm,
            r.fake_selected
        );
    }
    out
}

pub fn summary_csv(summaries: &[SweepSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        for p in &s.points {
            let _ = writeln!(out, "{},{},{:.12},{:.12}", format_sweep_value(s.sweep_value), p.round, p.mean, p.std);
        }
    }
    out
}

fn write_file(path: PathBuf, contents: &str) -> Result<(), ExperimentError> {
    fs::write(&path, contents).map_err(|source| ExperimentError::Io { path, source })
}

/// Writes `raw.csv`, `summary.csv`, `manifest.toml` and, when any round
/// produced one, `warnings.txt` into `dir`.
pub fn write_outputs(
    config: &ExperimentConfig,
    rows: &[MetricsRow],
    summaries: &[SweepSummary],
    dir: &Path,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io { path: dir.to_path_buf(), source })?;
    write_file(dir.join("raw.csv"), &raw_csv(rows))?;
    write_file(dir.join("summary.csv"), &summary_csv(summaries))?;
    write_file(dir.join("manifest.toml"), &config.to_toml()?)?;
    let mut warnings = String::new();
    for r in rows {
        for w in &r.warnings {
            let _ = writeln!(warnings, "sweep {} seed {} {w}", format_sweep_value(r.sweep_value), r.seed);
        }
    }
    if !warnings.is_empty() {
        write_file(dir.join("warnings.txt"), &warnings)?;
    }
    Ok(())
}

/// Final accuracy per sweep value: mean and population std over seeds.
pub fn final_table(config: &ExperimentConfig, cells: &[CellResult]) -> String {
    let mut out = format!("{:>14}  {:>10}  {:>10}  {:>5}  {:>7}\n", config_axis_name(config), "mean_acc", "std_acc", "runs", "aborted");
    for point in config.sweep_points() {
        let group: Vec<&CellResult> = cells.iter().filter(|c| c.sweep_value == point).collect();
        let accs: Vec<f64> = group.iter().filter_map(|c| c.final_accuracy()).collect();
        let aborted = group.iter().filter(|c| c.abort.is_some()).count();
        let (mean, std) = if accs.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let k = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / k;
            (mean, (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k).sqrt())
        };
        let _ = writeln!(
            out,
            "{:>14}  {mean:>10.4}  {std:>10.4}  {:>5}  {aborted:>7}",
            format_sweep_value(point),
            group.len()
        );
    }
    out
}

fn config_axis_name(config: &ExperimentConfig) -> &'static str {
    use crate::config::SweepAxis::*;
    match config.sweep.axis {
        None => "sweep",
        FakeFraction => "fake_fraction",
        Lambda => "lambda",
        Beta => "beta",
        Clip => "clip",
    }
}

/// Runs the experiment and writes its outputs to `config.out_dir`. With
/// `threads`, cells run on a dedicated pool of that size.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport, ExperimentError> {
    let cells = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(|| run_cells(config))?,
        None => run_cells(config)?,
    };
    let rows = metrics_rows(&cells);
    let summaries = summaries(config, &cells)?;
    write_outputs(config, &rows, &summaries, &config.out_dir)?;
    Ok(ExperimentReport { cells, rows, summaries })
}

/// Prints aborts to stderr and the final-accuracy table to `out`.
pub fn report(config: &ExperimentConfig, report: &ExperimentReport, out: &mut impl Write) -> io::Result<()> {
    for c in report.cells.iter().filter(|c| c.abort.is_some()) {
        eprintln!(
            "run aborted (sweep {}, seed {}): {}",
            format_sweep_value(c.sweep_value),
            c.seed,
            c.abort.as_deref().unwrap_or_default()
        );
    }
    out.write_all(final_table(config, &report.cells).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedpoison::engine::RoundRecord;

    fn rec(round: usize, acc: Option<f64>) -> RoundRecord {
        RoundRecord {
            round,
            selected: vec![],
            fake_selected: 1,
            trim: 0,
            update_norm: 1234.5,
            test_accuracy: acc,
            warnings: vec![],
        }
    }

    #[test]
    fn header_only_without_evaluations() {
        assert_eq!(raw_csv(&[]), format!("{RAW_HEADER}\n"));
        assert_eq!(summary_csv(&[]), format!("{SUMMARY_HEADER}\n"));
    }

    #[test]
    fn raw_rows_use_wide_formats() {
        let cell = CellResult { sweep_value: Some(0.1), seed: 3, records: vec![rec(1, None), rec(2, Some(1.0 / 3.0))], abort: None };
        let rows = metrics_rows(&[cell]);
        assert_eq!(rows.len(), 1);
        let csv = raw_csv(&rows);
        assert_eq!(csv.lines().nth(1).unwrap(), "0.1,3,2,0.333333333333,1.234500000000e3,1");
    }

    #[test]
    fn final_accuracy_of_aborted_run() {
        let cell = CellResult {
            sweep_value: None,
            seed: 1,
            records: vec![rec(1, Some(0.5)), rec(2, None)],
            abort: Some("diverged".into()),
        };
        assert_eq!(cell.final_accuracy(), Some(0.5));
    }
}
