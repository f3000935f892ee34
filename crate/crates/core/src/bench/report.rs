//! Aggregation and file output of benchmark runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchConfig, Method};
use crate::optim::Termination;
use crate::{Error, Result};

/// One `(method, start)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: Method,
    pub start: usize,
    pub x0: Vec<f64>,
    /// Final parameters; `None` when the run failed.
    pub x: Option<Vec<f64>>,
    pub f: Option<f64>,
    pub iterations: usize,
    pub n_obj_calls: usize,
    pub n_grad_calls: usize,
    /// Thread CPU time spent inside objective requests.
    pub obj_time_s: f64,
    /// Thread CPU time spent inside gradient requests.
    pub grad_time_s: f64,
    pub cpu_time_s: f64,
    pub wall_time_s: f64,
    pub termination: Option<Termination>,
    pub feller_satisfied: bool,
    pub error: Option<String>,
}

/// Per-method aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_runs: usize,
    pub n_failed: usize,
    /// `(min, Q1, median, Q3, max)` of the final objective over successful runs.
    pub f_quantiles: Option<[f64; 5]>,
    pub mean_cpu_time_s: f64,
    pub mean_wall_time_s: f64,
    pub total_obj_calls: usize,
    pub total_grad_calls: usize,
    pub mean_obj_calls: f64,
    pub mean_grad_calls: f64,
    /// Mean CPU time per objective request; `None` without requests.
    pub mean_obj_call_time_s: Option<f64>,
    pub mean_grad_call_time_s: Option<f64>,
    /// Share of runs, in percent, whose result violates `2κθ ≥ ε²`.
    pub feller_violation_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub n_starts: usize,
    pub methods: Vec<Method>,
    pub summaries: Vec<MethodSummary>,
    pub runs: Vec<RunRow>,
}

/// Sample quantiles with linear interpolation between order statistics.
/// Returns `(min, Q1, median, Q3, max)`; `None` for an empty sample.
pub fn quantiles(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (v.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Some([v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]])
}

impl MethodSummary {
    fn from_rows(method: Method, rows: &[&RunRow]) -> Self {
        let n = rows.len();
        let nf = n.max(1) as f64;
        let fs: Vec<f64> = rows.iter().filter_map(|r| r.f).collect();
        let total_obj: usize = rows.iter().map(|r| r.n_obj_calls).sum();
        let total_grad: usize = rows.iter().map(|r| r.n_grad_calls).sum();
        let obj_time: f64 = rows.iter().map(|r| r.obj_time_s).sum();
        let grad_time: f64 = rows.iter().map(|r| r.grad_time_s).sum();
        let violations = rows.iter().filter(|r| !r.feller_satisfied).count();
        Self {
            method,
            n_runs: n,
            n_failed: rows.iter().filter(|r| r.error.is_some()).count(),
            f_quantiles: quantiles(&fs),
            mean_cpu_time_s: rows.iter().map(|r| r.cpu_time_s).sum::<f64>() / nf,
            mean_wall_time_s: rows.iter().map(|r| r.wall_time_s).sum::<f64>() / nf,
            total_obj_calls: total_obj,
            total_grad_calls: total_grad,
            mean_obj_calls: total_obj as f64 / nf,
            mean_grad_calls: total_grad as f64 / nf,
            mean_obj_call_time_s: (total_obj > 0).then(|| obj_time / total_obj as f64),
            mean_grad_call_time_s: (total_grad > 0).then(|| grad_time / total_grad as f64),
            feller_violation_pct: 100.0 * violations as f64 / nf,
        }
    }
}

impl BenchReport {
    pub(crate) fn assemble(config: &BenchConfig, runs: Vec<RunRow>) -> Self {
        let summaries = config
            .methods
            .iter()
            .map(|&m| {
                let rows: Vec<&RunRow> = runs.iter().filter(|r| r.method == m).collect();
                MethodSummary::from_rows(m, &rows)
            })
            .collect();
        Self {
            seed: config.seed,
            n_starts: config.n_starts,
            methods: config.methods.clone(),
            summaries,
            runs,
        }
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn rows(&self, method: Method) -> impl Iterator<Item = &RunRow> {
        self.runs.iter().filter(move |r| r.method == method)
    }
}

/// Output file locations.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub summary: PathBuf,
    pub runs: PathBuf,
    pub boxplot: PathBuf,
}

impl ReportPaths {
    /// `report.json`, `summary.csv`, `runs.csv` and `boxplot.csv` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            json: dir.join("report.json"),
            summary: dir.join("summary.csv"),
            runs: dir.join("runs.csv"),
            boxplot: dir.join("boxplot.csv"),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the full JSON report and the three CSV views.
pub fn write_report(report: &BenchReport, paths: &ReportPaths) -> Result<()> {
    for p in [&paths.json, &paths.summary, &paths.runs, &paths.boxplot] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let json = serde_json::to_string_pretty(report)?;
    fs::write(&paths.json, json).map_err(|e| Error::io(&paths.json, e))?;

    let summary_rows = report
        .summaries
        .iter()
        .map(|s| {
            let q = s.f_quantiles;
            vec![
                s.method.to_string(),
                s.n_runs.to_string(),
                s.n_failed.to_string(),
                opt(q.map(|q| q[0])),
                opt(q.map(|q| q[2])),
                opt(q.map(|q| q[4])),
                s.mean_cpu_time_s.to_string(),
                s.mean_wall_time_s.to_string(),
                s.mean_obj_calls.to_string(),
                s.mean_grad_calls.to_string(),
                opt(s.mean_obj_call_time_s),
                opt(s.mean_grad_call_time_s),
                s.feller_violation_pct.to_string(),
            ]
        })
        .collect();
    write_csv(
        &paths.summary,
        &[
            "method",
            "n_runs",
            "n_failed",
            "f_min",
            "f_median",
            "f_max",
            "mean_cpu_time_s",
            "mean_wall_time_s",
            "mean_obj_calls",
            "mean_grad_calls",
            "mean_obj_call_time_s",
            "mean_grad_call_time_s",
            "feller_violation_pct",
        ],
        summary_rows,
    )?;

    let run_rows = report
        .runs
        .iter()
        .map(|r| {
            let mut row = vec![
                r.method.to_string(),
                r.start.to_string(),
                opt(r.f),
                r.iterations.to_string(),
                r.n_obj_calls.to_string(),
                r.n_grad_calls.to_string(),
                r.cpu_time_s.to_string(),
                r.wall_time_s.to_string(),
                r.termination.map(|t| t.as_str().to_string()).unwrap_or_default(),
                r.feller_satisfied.to_string(),
                r.error.clone().unwrap_or_default(),
            ];
            for i in 0..crate::model::N_PARAMS {
                row.push(opt(r.x.as_ref().map(|x| x[i])));
            }
            row
        })
        .collect();
    let mut header = vec![
        "method",
        "start",
        "f",
        "iterations",
        "n_obj_calls",
        "n_grad_calls",
        "cpu_time_s",
        "wall_time_s",
        "termination",
        "feller_satisfied",
        "error",
    ];
    header.extend(crate::model::PARAM_NAMES);
    write_csv(&paths.runs, &header, run_rows)?;

    let box_rows = report
        .summaries
        .iter()
        .filter_map(|s| {
            s.f_quantiles.map(|q| {
                let mut row = vec![s.method.to_string()];
                row.extend(q.iter().map(|v| v.to_string()));
                row
            })
        })
        .collect();
    write_csv(
        &paths.boxplot,
        &["method", "min", "q1", "median", "q3", "max"],
        box_rows,
    )
}
