//! Best-during-training selection and cross-seed aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, MetricRecord, RunMeta};
use crate::envs::{metric_set, EnvName, Metric, Polarity};

/// Best value of every metric present in `records`, respecting polarity.
pub fn best_during_training(records: &[MetricRecord]) -> Result<Vec<(Metric, f64)>, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Empty("no metric records".into()));
    }
    let mut best: Vec<(Metric, f64)> = Vec::new();
    for r in records {
        if !r.value.is_finite() {
            return Err(HarnessError::Schema(format!(
                "non-finite {} at epoch {}",
                r.metric, r.epoch
            )));
        }
        match best.iter_mut().find(|(m, _)| *m == r.metric) {
            Some((m, v)) => {
                let better = match m.polarity() {
                    Polarity::Max => r.value > *v,
                    Polarity::Min => r.value < *v,
                };
                if better {
                    *v = r.value;
                }
            }
            None => best.push((r.metric, r.value)),
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// `1.96 * SEM`; absent with fewer than two seeds.
    pub ci: Option<f64>,
    pub seeds: usize,
}

/// Mean and 95% half-width of per-seed values. The result does not depend
/// on the order of `values`.
pub fn aggregate(values: &[f64]) -> Result<Aggregate, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Empty("no values to aggregate".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let ci = (v.len() >= 2).then(|| {
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        1.96 * var.sqrt() / k.sqrt()
    });
    Ok(Aggregate {
        mean,
        ci,
        seeds: v.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub env: String,
    pub model: String,
    pub augmentation: String,
    pub metric: Metric,
    pub mean: f64,
    pub ci: Option<f64>,
    pub seeds: usize,
    /// Per-seed best values, in seed order.
    pub bests: Vec<(u64, f64)>,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>, HarnessError> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(HarnessError::from))
        .collect()
}

fn collect_runs(
    dir: &Path,
    out: &mut Vec<(RunMeta, Vec<MetricRecord>)>,
) -> Result<(), HarnessError> {
    let meta = dir.join("run.json");
    let metrics = dir.join("metrics.jsonl");
    if meta.is_file() && metrics.is_file() {
        let m: RunMeta = serde_json::from_str(&fs::read_to_string(&meta)?)?;
        out.push((m, read_metrics(&metrics)?));
    }
    let mut subdirs: Vec<_> = fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for d in subdirs {
        collect_runs(&d, out)?;
    }
    Ok(())
}

/// Aggregates every run found below `dir`, grouped by environment, model
/// and augmentation.
pub fn aggregate_dir(dir: &Path) -> Result<Vec<AggregateRow>, HarnessError> {
    let mut runs = Vec::new();
    collect_runs(dir, &mut runs)?;
    if runs.is_empty() {
        return Err(HarnessError::Empty(format!(
            "no runs found under {}",
            dir.display()
        )));
    }
    type Key = (String, String, String, usize);
    let mut groups: BTreeMap<Key, (Metric, Vec<(u64, f64)>)> = BTreeMap::new();
    for (meta, records) in &runs {
        let env: EnvName = meta.env.parse()?;
        let declared = metric_set(env);
        if let Some(r) = records.iter().find(|r| !declared.contains(&r.metric)) {
            return Err(HarnessError::Schema(format!(
                "{} is not a {} metric",
                r.metric, meta.env
            )));
        }
        for (metric, best) in best_during_training(records)? {
            let order = declared
                .iter()
                .position(|&m| m == metric)
                .unwrap_or(usize::MAX);
            let key = (
                meta.env.clone(),
                meta.model.clone(),
                meta.augmentation.clone(),
                order,
            );
            groups
                .entry(key)
                .or_insert_with(|| (metric, Vec::new()))
                .1
                .push((meta.seed, best));
        }
    }
    let mut rows = Vec::new();
    for ((env, model, augmentation, _), (metric, mut bests)) in groups {
        bests.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let values: Vec<f64> = bests.iter().map(|b| b.1).collect();
        let a = aggregate(&values)?;
        rows.push(AggregateRow {
            env,
            model,
            augmentation,
            metric,
            mean: a.mean,
            ci: a.ci,
            seeds: a.seeds,
            bests,
        });
    }
    Ok(rows)
}

/// Comma-separated table with columns
/// `env,model,augmentation,metric,mean,ci,seeds`; `ci` is empty when absent.
pub fn write_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "env",
        "model",
        "augmentation",
        "metric",
        "mean",
        "ci",
        "seeds",
    ])?;
    for r in rows {
        w.write_record([
            r.env.clone(),
            r.model.clone(),
            r.augmentation.clone(),
            r.metric.to_string(),
            r.mean.to_string(),
            r.ci.map(|c| c.to_string()).unwrap_or_default(),
            r.seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
