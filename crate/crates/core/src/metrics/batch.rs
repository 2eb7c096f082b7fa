//! Batch scoring of SEGVOL volume pairs listed in a manifest CSV.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use super::{evaluate_volume_pair, LabelVolume, MetricRecord};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 7] = [
    "case_id",
    "region",
    "DICE",
    "Hausdorff (95%)",
    "Sensitivity",
    "Specificity",
    "hd95_undefined",
];

#[derive(Clone, Debug, Deserialize)]
pub struct ManifestRow {
    pub pred_path: PathBuf,
    pub ref_path: PathBuf,
    pub case_id: String,
}

#[derive(Debug)]
pub struct ScoreReport {
    pub rows: Vec<(String, MetricRecord)>,
    /// `(case_id, error)` for cases that could not be scored.
    pub failures: Vec<(String, Error)>,
}

/// Reads `pred_path,ref_path,case_id` rows. Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::ManifestError(format!("{}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    reader
        .deserialize::<ManifestRow>()
        .map(|row| {
            let mut row = row.map_err(|e| Error::ManifestError(e.to_string()))?;
            row.pred_path = base.join(&row.pred_path);
            row.ref_path = base.join(&row.ref_path);
            Ok(row)
        })
        .collect()
}

pub fn score_case(row: &ManifestRow) -> Result<Vec<MetricRecord>> {
    let pred = LabelVolume::load(&row.pred_path)?;
    let reference = LabelVolume::load(&row.ref_path)?;
    evaluate_volume_pair(&pred, &reference)
}

/// Scores every case; per-case failures are collected rather than aborting.
pub fn score_manifest(path: &Path) -> Result<ScoreReport> {
    let manifest = read_manifest(path)?;
    let results: Vec<_> = manifest.par_iter().map(|row| (row.case_id.clone(), score_case(row))).collect();
    let mut report = ScoreReport {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for (case, result) in results {
        match result {
            Ok(records) => report.rows.extend(records.into_iter().map(|r| (case.clone(), r))),
            Err(e) => report.failures.push((case, e)),
        }
    }
    Ok(report)
}

pub fn write_csv<W: Write>(rows: &[(String, MetricRecord)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for (case, r) in rows {
        w.write_record([
            case.clone(),
            r.region.name().to_string(),
            r.dice.to_string(),
            r.hd95.to_string(),
            r.sensitivity.to_string(),
            r.specificity.to_string(),
            r.hd95_undefined.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("flushing CSV", e))
}
