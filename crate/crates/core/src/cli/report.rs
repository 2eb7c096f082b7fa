//! `sweep-report`: final-metrics table and long-format convergence data
//! from one or more run directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::RunConfig;
use crate::error::{Error, Result};
use crate::federation::rundir::{read_config, read_round_logs, CONFIG_FILE, ROUNDS_FILE};
use crate::federation::synthetic::TRAIN_MSE;
use crate::federation::Aggregator;

pub const FINAL_METRICS_FILE: &str = "final_metrics.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";

/// Row labels of the final-metrics table, in display order.
pub const TABLE_ROWS: [&str; 12] = [
    "DICE ET",
    "DICE TC",
    "DICE WT",
    "Hausdorff (95%) ET",
    "Hausdorff (95%) TC",
    "Hausdorff (95%) WT",
    "Sensitivity ET",
    "Sensitivity TC",
    "Sensitivity WT",
    "Specificity ET",
    "Specificity TC",
    "Specificity WT",
];

/// Runs sharing a label, averaged across seeds.
#[derive(Debug)]
struct ConfigSeries {
    label: String,
    sort_key: (u8, f64),
    /// round -> metric -> per-seed values
    rounds: BTreeMap<u32, BTreeMap<String, Vec<f64>>>,
    final_values: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub columns: Vec<String>,
    /// `(metric, value per column)`; `None` where a configuration lacks the metric.
    pub table: Vec<(String, Vec<Option<f64>>)>,
    /// `(round, config, metric, value)`.
    pub convergence: Vec<(u32, String, String, f64)>,
}

/// Run directories under each path: the path itself if it holds a
/// `rounds.jsonl`, otherwise every such directory below it.
pub fn discover_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for p in paths {
        if !p.is_dir() {
            return Err(Error::MissingRunData(format!("{} is not a directory", p.display())));
        }
        collect_runs(p, &mut found)?;
    }
    if found.is_empty() {
        return Err(Error::MissingRunData("no run directories found".into()));
    }
    Ok(found)
}

fn collect_runs(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(ROUNDS_FILE).is_file() {
        found.push(dir.to_path_buf());
        return Ok(());
    }
    let mut children: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for child in children {
        collect_runs(&child, found)?;
    }
    Ok(())
}

pub fn build_report(run_dirs: &[PathBuf]) -> Result<SweepReport> {
    let mut series: Vec<ConfigSeries> = Vec::new();
    for dir in discover_runs(run_dirs)? {
        let config = RunConfig::from_toml(&dir.join(CONFIG_FILE), &read_config(&dir)?)?;
        let logs = read_round_logs(&dir)?;
        let last = logs
            .last()
            .ok_or_else(|| Error::MissingRunData(format!("{} has no rounds", dir.display())))?;

        let idx = match series.iter().position(|s| s.label == config.label) {
            Some(i) => i,
            None => {
                series.push(ConfigSeries {
                    label: config.label.clone(),
                    sort_key: sort_key(&config),
                    rounds: BTreeMap::new(),
                    final_values: BTreeMap::new(),
                });
                series.len() - 1
            }
        };
        let s = &mut series[idx];
        for log in &logs {
            let per_round = s.rounds.entry(log.round).or_default();
            for (metric, value) in &log.eval_metrics {
                per_round.entry(metric.clone()).or_default().push(*value);
            }
        }
        for (metric, value) in &last.eval_metrics {
            s.final_values.entry(metric.clone()).or_default().push(*value);
        }
    }
    series.sort_by(|a, b| a.sort_key.partial_cmp(&b.sort_key).expect("finite keys").then(a.label.cmp(&b.label)));

    let mut metrics: Vec<String> = TABLE_ROWS.iter().map(|s| s.to_string()).collect();
    metrics.push(TRAIN_MSE.to_string());
    let extra: std::collections::BTreeSet<&String> = series
        .iter()
        .flat_map(|s| s.final_values.keys())
        .filter(|k| !metrics.contains(k))
        .collect();
    let extra: Vec<String> = extra.into_iter().cloned().collect();
    metrics.extend(extra);

    let table = metrics
        .iter()
        .filter(|m| series.iter().any(|s| s.final_values.contains_key(*m)))
        .map(|m| (m.clone(), series.iter().map(|s| s.final_values.get(m).map(|v| mean(v))).collect()))
        .collect();

    let mut convergence = Vec::new();
    for s in &series {
        for (round, per_metric) in &s.rounds {
            for (metric, values) in per_metric {
                convergence.push((*round, s.label.clone(), metric.clone(), mean(values)));
            }
        }
    }

    Ok(SweepReport {
        columns: series.into_iter().map(|s| s.label).collect(),
        table,
        convergence,
    })
}

/// DP runs by ascending epsilon, then SimAgg, then FedAvg.
fn sort_key(config: &RunConfig) -> (u8, f64) {
    match config.federation.aggregator {
        Aggregator::DpSimagg => (0, config.federation.privacy.epsilon),
        Aggregator::Simagg => (1, 0.0),
        Aggregator::Fedavg => (2, 0.0),
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl SweepReport {
    pub fn final_metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Serialization(e.to_string());
        let mut header = vec!["Metrics".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (metric, values) in &self.table {
            let mut row = vec![metric.clone()];
            row.extend(values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&row).map_err(csv_err)?;
        }
        into_string(w)
    }

    pub fn convergence_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Serialization(e.to_string());
        w.write_record(["round", "config", "metric", "value"]).map_err(csv_err)?;
        for (round, config, metric, value) in &self.convergence {
            w.write_record([round.to_string(), config.clone(), metric.clone(), value.to_string()])
                .map_err(csv_err)?;
        }
        into_string(w)
    }

    /// Fixed-width text rendering with three decimals.
    pub fn render_table(&self) -> String {
        let first = self.table.iter().map(|(m, _)| m.len()).max().unwrap_or(7).max(7);
        let widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count().max(10)).collect();
        let mut out = format!("{:<first$}", "Metrics");
        for (c, w) in self.columns.iter().zip(&widths) {
            out.push_str(&format!("  {c:>w$}"));
        }
        out.push('\n');
        for (metric, values) in &self.table {
            out.push_str(&format!("{metric:<first$}"));
            for (v, w) in values.iter().zip(&widths) {
                let cell = v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
                out.push_str(&format!("  {cell:>w$}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
        let table = out_dir.join(FINAL_METRICS_FILE);
        let curve = out_dir.join(CONVERGENCE_FILE);
        fs::write(&table, self.final_metrics_csv()?).map_err(|e| Error::io(format!("writing {}", table.display()), e))?;
        fs::write(&curve, self.convergence_csv()?).map_err(|e| Error::io(format!("writing {}", curve.display()), e))?;
        Ok((table, curve))
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}
