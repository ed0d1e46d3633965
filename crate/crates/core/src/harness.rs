//! Trace metrics, method/γ sweeps and report files.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::Method;
use crate::error::{Error, Result};
use crate::forecast::{MeanStd, NetParams};
use crate::sim::{run_scenario, ScenarioConfig, TraceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// `h` above this counts as a violation (m).
    pub threshold: f64,
    /// Count violating steps instead of contiguous events.
    pub per_step_violations: bool,
    /// Measure magnitude as peak `h − threshold` instead of peak `h`.
    pub magnitude_over_threshold: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { threshold: 0.010, per_step_violations: false, magnitude_over_threshold: false }
    }
}

/// Metrics of one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub hand_tcp_distance: f64,
    pub path_length: f64,
    pub avg_tcp_velocity: f64,
    pub completion_time: f64,
    pub violation_count: usize,
    pub violation_magnitude: f64,
    /// Peak `h` of each event.
    pub event_peaks: Vec<f64>,
}

fn norm3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Record spacing, taken from the first two records.
fn trace_dt(records: &[TraceRecord]) -> f64 {
    match records {
        [a, b, ..] => b.t - a.t,
        _ => 0.0,
    }
}

/// Contiguous runs of `h > threshold`, as peak values.
pub fn violation_events(records: &[TraceRecord], threshold: f64) -> Vec<f64> {
    let mut peaks = Vec::new();
    let mut current: Option<f64> = None;
    for r in records {
        if r.h > threshold {
            current = Some(current.map_or(r.h, |p| p.max(r.h)));
        } else if let Some(p) = current.take() {
            peaks.push(p);
        }
    }
    peaks.extend(current);
    peaks
}

pub fn trace_metrics(records: &[TraceRecord], cfg: &MetricsConfig) -> TraceMetrics {
    let n = records.len();
    let dt = trace_dt(records);
    let hand_tcp_distance =
        if n == 0 { 0.0 } else { records.iter().map(|r| norm3(&r.hand, &r.tcp)).sum::<f64>() / n as f64 };
    let path_length: f64 = records.windows(2).map(|w| norm3(&w[1].tcp, &w[0].tcp)).sum();
    let avg_tcp_velocity = if n < 2 || dt <= 0.0 { 0.0 } else { path_length / ((n - 1) as f64 * dt) };
    let event_peaks = violation_events(records, cfg.threshold);
    let violation_count = if cfg.per_step_violations {
        records.iter().filter(|r| r.h > cfg.threshold).count()
    } else {
        event_peaks.len()
    };
    let offset = if cfg.magnitude_over_threshold { cfg.threshold } else { 0.0 };
    let violation_magnitude = if event_peaks.is_empty() {
        0.0
    } else {
        event_peaks.iter().map(|p| p - offset).sum::<f64>() / event_peaks.len() as f64
    };
    TraceMetrics {
        hand_tcp_distance,
        path_length,
        avg_tcp_velocity,
        completion_time: n as f64 * dt,
        violation_count,
        violation_magnitude,
        event_peaks,
    }
}

/// Metrics aggregated over runs as mean ± population std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub method: Method,
    pub gamma: f64,
    pub lambda_p_equals_lambda_r: bool,
    pub runs: usize,
    pub hand_tcp_distance: MeanStd,
    pub path_length: MeanStd,
    pub avg_tcp_velocity: MeanStd,
    pub completion_time: MeanStd,
    pub violation_count: MeanStd,
    pub violation_magnitude: MeanStd,
    /// Set when the cell failed; the metrics are then zero.
    pub error: Option<String>,
}

impl MetricsReport {
    fn failed(cell: &SweepCell, msg: String) -> Self {
        let z = MeanStd { mean: 0.0, std: 0.0 };
        Self {
            label: cell.label.clone(),
            method: cell.method,
            gamma: cell.gamma,
            lambda_p_equals_lambda_r: cell.lambda_p_equals_lambda_r,
            runs: 0,
            hand_tcp_distance: z,
            path_length: z,
            avg_tcp_velocity: z,
            completion_time: z,
            violation_count: z,
            violation_magnitude: z,
            error: Some(msg),
        }
    }
}

/// Aggregate over traces. Method and `γ` are read from the first record.
pub fn compute_metrics(traces: &[Vec<TraceRecord>], cfg: &MetricsConfig) -> Result<MetricsReport> {
    let first = traces
        .first()
        .and_then(|t| t.first())
        .ok_or_else(|| Error::InvalidInput("metrics need at least one nonempty trace".into()))?;
    let per: Vec<TraceMetrics> = traces.iter().map(|t| trace_metrics(t, cfg)).collect();
    let col = |f: fn(&TraceMetrics) -> f64| MeanStd::of(&per.iter().map(f).collect::<Vec<_>>());
    Ok(MetricsReport {
        label: first.method.to_string(),
        method: first.method,
        gamma: first.gamma,
        lambda_p_equals_lambda_r: false,
        runs: traces.len(),
        hand_tcp_distance: col(|m| m.hand_tcp_distance),
        path_length: col(|m| m.path_length),
        avg_tcp_velocity: col(|m| m.avg_tcp_velocity),
        completion_time: col(|m| m.completion_time),
        violation_count: col(|m| m.violation_count as f64),
        violation_magnitude: col(|m| m.violation_magnitude),
        error: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub label: String,
    pub method: Method,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub lambda_p_equals_lambda_r: bool,
}

impl SweepCell {
    pub fn new(method: Method, gamma: f64) -> Self {
        let label = match method {
            Method::UaPcbf => format!("{method}(gamma={gamma})"),
            _ => method.to_string(),
        };
        Self { label, method, gamma, lambda_p_equals_lambda_r: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub scenario: ScenarioConfig,
    pub cells: Vec<SweepCell>,
    pub metrics: MetricsConfig,
}

impl Default for SweepGrid {
    /// Baselines, the `γ` ladder and the `λ_p = λ_r` ablation.
    fn default() -> Self {
        let mut cells = vec![SweepCell::new(Method::Cbf, 0.0), SweepCell::new(Method::Pcbf, 0.0)];
        cells.extend([0.0, 0.5, 1.0, 2.5, 5.0].map(|g| SweepCell::new(Method::UaPcbf, g)));
        cells.push(SweepCell {
            label: "UA_PCBF(lambda_p=lambda_r)".into(),
            lambda_p_equals_lambda_r: true,
            ..SweepCell::new(Method::UaPcbf, 5.0)
        });
        Self { scenario: ScenarioConfig::default(), cells, metrics: MetricsConfig::default() }
    }
}

impl SweepGrid {
    pub fn cell_scenario(&self, cell: &SweepCell) -> ScenarioConfig {
        let mut s = self.scenario.clone();
        s.safety.method = cell.method;
        s.safety.gamma = cell.gamma;
        s.safety.lambda_p_equals_lambda_r = cell.lambda_p_equals_lambda_r;
        s
    }
}

/// Run every cell over the scenario's seeds. Runs execute in parallel; a
/// failing cell yields a report carrying its error.
pub fn sweep(grid: &SweepGrid, model: Option<&NetParams>) -> Result<Vec<MetricsReport>> {
    if grid.cells.is_empty() || grid.scenario.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one cell and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> =
        (0..grid.cells.len()).flat_map(|c| grid.scenario.seeds.iter().map(move |&s| (c, s))).collect();
    let results: Vec<Result<Vec<TraceRecord>>> = jobs
        .par_iter()
        .map(|&(c, seed)| run_scenario(&grid.cell_scenario(&grid.cells[c]), model, seed).map(|r| r.records))
        .collect();
    let per_cell = grid.scenario.seeds.len();
    let mut results = results.into_iter();
    let mut reports = Vec::with_capacity(grid.cells.len());
    for cell in &grid.cells {
        let traces: Result<Vec<_>> = results.by_ref().take(per_cell).collect();
        let report = traces.and_then(|t| compute_metrics(&t, &grid.metrics)).map(|r| MetricsReport {
            label: cell.label.clone(),
            lambda_p_equals_lambda_r: cell.lambda_p_equals_lambda_r,
            ..r
        });
        reports.push(report.unwrap_or_else(|e| {
            log::error!("sweep cell {} failed: {e}", cell.label);
            MetricsReport::failed(cell, e.to_string())
        }));
    }
    Ok(reports)
}

/// Columns of the CSV report, in order.
pub const CSV_COLUMNS: [&str; 18] = [
    "label",
    "method",
    "gamma",
    "lambda_p_equals_lambda_r",
    "runs",
    "hand_tcp_distance_mean",
    "hand_tcp_distance_std",
    "path_length_mean",
    "path_length_std",
    "avg_tcp_velocity_mean",
    "avg_tcp_velocity_std",
    "completion_time_mean",
    "completion_time_std",
    "violation_count_mean",
    "violation_count_std",
    "violation_magnitude_mean",
    "violation_magnitude_std",
    "error",
];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    label: String,
    method: Method,
    gamma: f64,
    lambda_p_equals_lambda_r: bool,
    runs: usize,
    hand_tcp_distance_mean: f64,
    hand_tcp_distance_std: f64,
    path_length_mean: f64,
    path_length_std: f64,
    avg_tcp_velocity_mean: f64,
    avg_tcp_velocity_std: f64,
    completion_time_mean: f64,
    completion_time_std: f64,
    violation_count_mean: f64,
    violation_count_std: f64,
    violation_magnitude_mean: f64,
    violation_magnitude_std: f64,
    error: Option<String>,
}

impl From<&MetricsReport> for CsvRow {
    fn from(r: &MetricsReport) -> Self {
        Self {
            label: r.label.clone(),
            method: r.method,
            gamma: r.gamma,
            lambda_p_equals_lambda_r: r.lambda_p_equals_lambda_r,
            runs: r.runs,
            hand_tcp_distance_mean: r.hand_tcp_distance.mean,
            hand_tcp_distance_std: r.hand_tcp_distance.std,
            path_length_mean: r.path_length.mean,
            path_length_std: r.path_length.std,
            avg_tcp_velocity_mean: r.avg_tcp_velocity.mean,
            avg_tcp_velocity_std: r.avg_tcp_velocity.std,
            completion_time_mean: r.completion_time.mean,
            completion_time_std: r.completion_time.std,
            violation_count_mean: r.violation_count.mean,
            violation_count_std: r.violation_count.std,
            violation_magnitude_mean: r.violation_magnitude.mean,
            violation_magnitude_std: r.violation_magnitude.std,
            error: r.error.clone(),
        }
    }
}

impl From<CsvRow> for MetricsReport {
    fn from(r: CsvRow) -> Self {
        let ms = |mean, std| MeanStd { mean, std };
        Self {
            label: r.label,
            method: r.method,
            gamma: r.gamma,
            lambda_p_equals_lambda_r: r.lambda_p_equals_lambda_r,
            runs: r.runs,
            hand_tcp_distance: ms(r.hand_tcp_distance_mean, r.hand_tcp_distance_std),
            path_length: ms(r.path_length_mean, r.path_length_std),
            avg_tcp_velocity: ms(r.avg_tcp_velocity_mean, r.avg_tcp_velocity_std),
            completion_time: ms(r.completion_time_mean, r.completion_time_std),
            violation_count: ms(r.violation_count_mean, r.violation_count_std),
            violation_magnitude: ms(r.violation_magnitude_mean, r.violation_magnitude_std),
            error: r.error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// From a file extension; anything but `.json` is CSV.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

pub fn emit_report(reports: &[MetricsReport], format: ReportFormat, path: &Path) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(reports)?;
            std::fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        ReportFormat::Csv => {
            let mut w =
                csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| Error::csv(path, e))?;
            w.write_record(CSV_COLUMNS).map_err(|e| Error::csv(path, e))?;
            for r in reports {
                w.serialize(CsvRow::from(r)).map_err(|e| Error::csv(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

pub fn read_report(format: ReportFormat, path: &Path) -> Result<Vec<MetricsReport>> {
    match format {
        ReportFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(serde_json::from_str(&text)?)
        }
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
            let header = r.headers().map_err(|e| Error::csv(path, e))?;
            if header.iter().ne(CSV_COLUMNS) {
                return Err(Error::InvalidInput(format!("{} does not have the report columns", path.display())));
            }
            r.deserialize::<CsvRow>().map(|row| row.map(MetricsReport::from).map_err(|e| Error::csv(path, e))).collect()
        }
    }
}
