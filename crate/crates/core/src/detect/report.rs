use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{Pca2, ScoreReport};
use crate::error::{Error, Result};

/// Contents of `metrics.json`.
#[derive(Clone, Debug, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub zero_division: bool,
    pub config: serde_json::Value,
}

impl Metrics {
    pub fn new(report: &ScoreReport, config: serde_json::Value) -> Self {
        Metrics {
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            threshold: report.threshold,
            true_positives: report.true_positives,
            false_positives: report.false_positives,
            false_negatives: report.false_negatives,
            true_negatives: report.true_negatives,
            zero_division: report.zero_division,
            config,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// `scores.csv` with columns `window_id, score, verdict, truth`.
pub fn write_scores_csv(path: &Path, report: &ScoreReport) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "window_id,score,verdict,truth").map_err(io)?;
    for (i, ((s, v), t)) in report
        .scores
        .iter()
        .zip(&report.verdicts)
        .zip(&report.truth)
        .enumerate()
    {
        writeln!(w, "{i},{s},{},{}", *v as u8, *t as u8).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_metrics_json(path: &Path, metrics: &Metrics) -> Result<()> {
    let text = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// `pca.csv` with columns `set, pc1, pc2`.
pub fn write_pca_csv(path: &Path, pca: &Pca2) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "set,pc1,pc2").map_err(io)?;
    for (name, pts) in [("original", &pca.reference), ("generated", &pca.generated)] {
        for p in pts.iter() {
            writeln!(w, "{name},{},{}", p[0], p[1]).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
