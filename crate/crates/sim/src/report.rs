//! Result emission: one CSV row per trial and scheme plus a JSON summary.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ConfigFile, ExperimentConfig, Scheme, SweepVariable};
use crate::runner::TrialResult;
use crate::{Error, Result};

/// Version string embedded in every summary.
pub const VERSION: &str = env!("IRSBF_VERSION");

/// CSV file name inside the output directory.
pub const CSV_NAME: &str = "results.csv";
/// JSON summary file name inside the output directory.
pub const SUMMARY_NAME: &str = "summary.json";

/// Flat CSV form of a [`TrialResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    scheme: Scheme,
    sweep_value: f64,
    trial: usize,
    wsr: f64,
    protocol_wsr: f64,
    frame_feasible: bool,
    iterations: Option<usize>,
    /// Per-user SINRs joined with `;`.
    sinr: String,
}

impl From<&TrialResult> for CsvRow {
    fn from(r: &TrialResult) -> Self {
        Self {
            scheme: r.scheme,
            sweep_value: r.sweep_value,
            trial: r.trial,
            wsr: r.wsr,
            protocol_wsr: r.protocol_wsr,
            frame_feasible: r.frame_feasible,
            iterations: r.iterations,
            sinr: r.sinr.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
        }
    }
}

impl TryFrom<CsvRow> for TrialResult {
    type Error = Error;

    fn try_from(r: CsvRow) -> Result<Self> {
        let sinr = if r.sinr.is_empty() {
            Vec::new()
        } else {
            r.sinr
                .split(';')
                .map(|v| v.parse::<f64>().map_err(|e| Error::Config(format!("bad SINR `{v}` in CSV: {e}"))))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            scheme: r.scheme,
            sweep_value: r.sweep_value,
            trial: r.trial,
            wsr: r.wsr,
            protocol_wsr: r.protocol_wsr,
            frame_feasible: r.frame_feasible,
            sinr,
            iterations: r.iterations,
            wall_time: Default::default(),
        })
    }
}

pub fn write_csv<W: Write>(results: &[TrialResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in results {
        w.serialize(CsvRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<TrialResult>> {
    csv::Reader::from_reader(reader).deserialize::<CsvRow>().map(|row| row?.try_into()).collect()
}

/// Mean and standard error of one scheme at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub trials: usize,
    pub mean_wsr: f64,
    pub stderr_wsr: f64,
    pub mean_protocol_wsr: f64,
    pub stderr_protocol_wsr: f64,
    pub mean_iterations: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub seed: u64,
    pub sweep_variable: SweepVariable,
    pub unit: String,
    /// The configuration as written, re-parsable with [`ExperimentConfig::parse`].
    pub config: ConfigFile,
    pub cells: Vec<CellSummary>,
}

impl Summary {
    pub fn cell(&self, scheme: Scheme, sweep_value: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.scheme == scheme && c.sweep_value == sweep_value)
    }
}

/// Sample mean and standard error of the mean (`s / √n`, with the unbiased
/// sample deviation; 0 for a single sample).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates results per (sweep value, scheme), in order of first appearance.
pub fn summarize(cfg: &ExperimentConfig, results: &[TrialResult]) -> Result<Summary> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let mut keys: Vec<(f64, Scheme)> = Vec::new();
    for r in results {
        if !keys.contains(&(r.sweep_value, r.scheme)) {
            keys.push((r.sweep_value, r.scheme));
        }
    }
    let cells = keys
        .into_iter()
        .map(|(value, scheme)| {
            let rows: Vec<&TrialResult> = results.iter().filter(|r| r.sweep_value == value && r.scheme == scheme).collect();
            let (mean_wsr, stderr_wsr) = mean_stderr(&rows.iter().map(|r| r.wsr).collect::<Vec<_>>());
            let (mean_protocol_wsr, stderr_protocol_wsr) =
                mean_stderr(&rows.iter().map(|r| r.protocol_wsr).collect::<Vec<_>>());
            let iterations: Vec<f64> = rows.iter().filter_map(|r| r.iterations.map(|i| i as f64)).collect();
            CellSummary {
                scheme,
                sweep_value: value,
                trials: rows.len(),
                mean_wsr,
                stderr_wsr,
                mean_protocol_wsr,
                stderr_protocol_wsr,
                mean_iterations: (!iterations.is_empty()).then(|| mean_stderr(&iterations).0),
            }
        })
        .collect();
    Ok(Summary {
        version: VERSION.to_string(),
        seed: cfg.seed,
        sweep_variable: cfg.variable,
        unit: cfg.variable.unit().to_string(),
        config: cfg.source.clone(),
        cells,
    })
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
}

/// Writes `results.csv` and `summary.json` into `dir` (created if needed).
pub fn emit_report(cfg: &ExperimentConfig, results: &[TrialResult], dir: &Path) -> Result<ReportPaths> {
    let summary = summarize(cfg, results)?;
    std::fs::create_dir_all(dir)?;
    let paths = ReportPaths { csv: dir.join(CSV_NAME), summary: dir.join(SUMMARY_NAME) };
    write_csv(results, std::io::BufWriter::new(std::fs::File::create(&paths.csv)?))?;
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    std::fs::write(&paths.summary, json)?;
    Ok(paths)
}
