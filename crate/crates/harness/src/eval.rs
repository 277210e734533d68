//! Per-sample metrics, aggregates, and result tables.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use hspn_core::geometry::{chamfer, pc_to_pc_error, PointCloud};
use hspn_core::synthdata::{Split, SyntheticSample};
use hspn_core::{Error, Result};

use crate::config::EvalSplit;
use crate::train::{csv_error, Pipeline};

/// Published chamfer distances are reported multiplied by 10.
pub const CD_REPORT_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMetric {
    pub id: String,
    pub cd: f64,
    pub cd_x10: f64,
    /// Distance of every predicted point to the nearest ground-truth point.
    pub pc_to_pc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub samples: Vec<SampleMetric>,
    pub mean_cd: f64,
    pub std_cd: f64,
}

impl MetricReport {
    pub fn mean_cd_x10(&self) -> f64 {
        self.mean_cd * CD_REPORT_FACTOR
    }
}

pub fn select(samples: &[SyntheticSample], split: EvalSplit) -> Vec<SyntheticSample> {
    samples
        .iter()
        .filter(|s| match split {
            EvalSplit::All => true,
            EvalSplit::Train => s.split == Split::Train,
            EvalSplit::Test => s.split == Split::Test,
        })
        .cloned()
        .collect()
}

/// Metrics for predicted clouds against their ground truth.
pub fn score_predictions(ids: &[String], preds: &[PointCloud], gts: &[PointCloud]) -> Result<MetricReport> {
    if ids.len() != preds.len() || preds.len() != gts.len() {
        return Err(Error::invalid("ids, predictions and targets differ in count"));
    }
    if preds.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let samples: Vec<SampleMetric> = ids
        .iter()
        .zip(preds)
        .zip(gts)
        .map(|((id, p), g)| {
            let cd = chamfer(p, g);
            SampleMetric {
                id: id.clone(),
                cd,
                cd_x10: cd * CD_REPORT_FACTOR,
                pc_to_pc: pc_to_pc_error(p, g).errors,
            }
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.cd).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.cd - mean).powi(2)).sum::<f64>() / n;
    Ok(MetricReport {
        samples,
        mean_cd: mean,
        std_cd: var.sqrt(),
    })
}

/// Runs the pipeline on every sample and scores it against the full cloud.
pub fn evaluate(pipeline: &Pipeline, samples: &[SyntheticSample]) -> Result<MetricReport> {
    let preds = samples.iter().map(|s| pipeline.run(s)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let gts: Vec<PointCloud> = samples.iter().map(|s| s.gt.clone()).collect();
    score_predictions(&ids, &preds, &gts)
}

pub fn write_jsonl(path: &Path, report: &MetricReport) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for s in &report.samples {
        let line = serde_json::to_string(s).expect("metric serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// One cell of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub variant: String,
    /// Training epoch of the evaluated snapshot.
    pub epoch: usize,
    pub cd: f64,
    /// Published value for the matching cell, shown for reference only.
    pub paper_cd_x10: Option<f64>,
    /// Where the reference comes from, plus any approximation flag.
    pub note: String,
}

impl TableRow {
    pub fn cd_x10(&self) -> f64 {
        self.cd * CD_REPORT_FACTOR
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub title: String,
    pub rows: Vec<TableRow>,
}

impl Table {
    /// One row per cell: `variant, CD(x10^-1), epoch, ...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["variant", "cd_x10", "epoch", "cd_raw", "paper_cd_x10", "note"])
            .map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.variant.clone(),
                r.cd_x10().to_string(),
                r.epoch.to_string(),
                r.cd.to_string(),
                r.paper_cd_x10.map(|v| format!("[PAPER] {v}")).unwrap_or_default(),
                r.note.clone(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Variants as rows and epochs as columns, like the published tables.
    pub fn render(&self) -> String {
        let mut epochs: Vec<usize> = self.rows.iter().map(|r| r.epoch).collect();
        epochs.sort_unstable();
        epochs.dedup();
        let mut variants: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !variants.contains(&r.variant.as_str()) {
                variants.push(&r.variant);
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = write!(out, "{:<20}", "variant");
        for e in &epochs {
            let _ = write!(out, " {:>22}", format!("CD(x10^-1) @{e}"));
        }
        let _ = writeln!(out, "  reference");
        for v in variants {
            let _ = write!(out, "{v:<20}");
            let mut refs = Vec::new();
            for e in &epochs {
                match self.rows.iter().find(|r| r.variant == v && r.epoch == *e) {
                    Some(r) => {
                        let _ = write!(out, " {:>22.4}", r.cd_x10());
                        if let Some(p) = r.paper_cd_x10 {
                            refs.push(format!("{p} ({})", r.note));
                        } else if !r.note.is_empty() {
                            refs.push(r.note.clone());
                        }
                    }
                    None => {
                        let _ = write!(out, " {:>22}", "-");
                    }
                }
            }
            let _ = writeln!(out, "  {}", refs.join("; "));
        }
        out
    }
}
