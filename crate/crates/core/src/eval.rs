//! Regression metrics, evaluation of trained models, OOD sweeps and CSV
//! reports.
//!
//! Report files written by [`emit_report`]:
//!
//! | file | columns |
//! |------|---------|
//! | `metrics.csv` | `model,mae,r2,mse,rmse` (normalized units; `r2` is `undefined` for constant targets) |
//! | `metrics_veh_h.csv` | `model,mae_veh_h,rmse_veh_h` |
//! | `per_edge_mae.csv` | `edge,tail,head,<model>...` |
//! | `ood_<target>.csv` | `level,<model>...` (level in percent, MAE in normalized units) |
//! | `report.json` | everything above plus flags and notes |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureTensors, MinMax};
use crate::error::{Error, Result};
use crate::models::{mean_baseline, Model, ModelKind};
use crate::network::NodeId;
use crate::scenario::OodTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    /// `None` when the targets have zero variance.
    pub r2: Option<f64>,
    pub mse: f64,
    pub rmse: f64,
    pub per_edge_mae: Vec<f64>,
    pub n_samples: usize,
}

fn check_aligned(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Validation("metrics need at least one sample".into()));
    }
    if preds.len() != targets.len() || preds.iter().zip(targets).any(|(p, t)| p.len() != t.len()) {
        return Err(Error::shape("compute_metrics", "predictions and targets are not aligned"));
    }
    Ok(())
}

pub fn mean_absolute_error(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    check_aligned(preds, targets)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, t) in preds.iter().zip(targets) {
        for (a, b) in p.iter().zip(t) {
            sum += (a - b).abs();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// MAE, MSE, RMSE and R² over all (scenario, edge) pairs; per-edge MAE
/// averages over scenarios.
pub fn compute_metrics(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<MetricsReport> {
    check_aligned(preds, targets)?;
    let m = targets[0].len();
    if targets.iter().any(|t| t.len() != m) {
        return Err(Error::shape("compute_metrics", "samples differ in edge count"));
    }
    let count = (targets.len() * m) as f64;
    let mean = targets.iter().flatten().sum::<f64>() / count;
    let (mut abs, mut sq, mut tot) = (0.0, 0.0, 0.0);
    let mut per_edge = vec![0.0; m];
    for (p, t) in preds.iter().zip(targets) {
        for e in 0..m {
            let d = p[e] - t[e];
            abs += d.abs();
            sq += d * d;
            tot += (t[e] - mean) * (t[e] - mean);
            per_edge[e] += d.abs();
        }
    }
    let mse = sq / count;
    let n = targets.len();
    per_edge.iter_mut().for_each(|v| *v /= n as f64);
    Ok(MetricsReport {
        mae: abs / count,
        r2: (tot > 0.0).then(|| 1.0 - sq / tot),
        mse,
        rmse: mse.sqrt(),
        per_edge_mae: per_edge,
        n_samples: n,
    })
}

pub fn targets_of(samples: &[FeatureTensors]) -> Vec<Vec<f64>> {
    samples.iter().map(|s| s.targets.clone()).collect()
}

/// Metrics of each model on `samples`, in the given order. The mean
/// baseline is fitted on `samples` themselves.
pub fn evaluate(models: &[&Model], include_mean: bool, samples: &[FeatureTensors]) -> Result<Vec<(ModelKind, MetricsReport)>> {
    let targets = targets_of(samples);
    let mut out = Vec::new();
    for m in models {
        let preds = m.predict(samples)?;
        out.push((m.kind(), compute_metrics(&preds, &targets)?));
    }
    if include_mean {
        let mean = mean_baseline(&targets)?;
        let preds = vec![mean; targets.len()];
        out.push((ModelKind::Mean, compute_metrics(&preds, &targets)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodCurve {
    pub target: OodTarget,
    /// Percent of perturbed entities; 0 is the in-distribution test set.
    pub levels: Vec<u32>,
    pub models: Vec<ModelKind>,
    /// `reports[level][model]`
    pub reports: Vec<Vec<MetricsReport>>,
}

impl OodCurve {
    pub fn mae(&self, kind: ModelKind) -> Option<Vec<f64>> {
        let k = self.models.iter().position(|&m| m == kind)?;
        Some(self.reports.iter().map(|r| r[k].mae).collect())
    }
}

/// Evaluates every model (plus the mean baseline) on each level. Levels
/// are sorted ascending; empty levels are skipped with a warning.
pub fn ood_sweep(models: &[&Model], target: OodTarget, levels: &[(u32, Vec<FeatureTensors>)]) -> Result<OodCurve> {
    let mut sorted: Vec<&(u32, Vec<FeatureTensors>)> = levels.iter().collect();
    sorted.sort_by_key(|(l, _)| *l);
    let mut curve = OodCurve {
        target,
        levels: Vec::new(),
        models: models.iter().map(|m| m.kind()).chain([ModelKind::Mean]).collect(),
        reports: Vec::new(),
    };
    for (level, samples) in sorted {
        if samples.is_empty() {
            log::warn!("{target} level {level}% has no scenarios; skipped");
            continue;
        }
        let reports = evaluate(models, true, samples)?;
        curve.levels.push(*level);
        curve.reports.push(reports.into_iter().map(|(_, r)| r).collect());
    }
    Ok(curve)
}

/// Everything [`emit_report`] writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub test: Vec<(ModelKind, MetricsReport)>,
    pub curves: Vec<OodCurve>,
    /// Min/max of training flows, for converting MAE back to veh/h.
    pub target_scale: MinMax,
    pub flags: Vec<String>,
    pub notes: Vec<String>,
}

pub const FLAG_DEMAND_ORDERING: &str = "demand_sweep_mlp_not_best_from_20_percent";

/// Flags the demand sweep when the MLP does not match or beat the GatedGCN
/// at every level from 20% up.
pub fn report_flags(curves: &[OodCurve]) -> Vec<String> {
    let mut flags = Vec::new();
    for c in curves.iter().filter(|c| c.target == OodTarget::Demand) {
        if let (Some(mlp), Some(gated)) = (c.mae(ModelKind::Mlp), c.mae(ModelKind::Gatedgcn)) {
            let holds = c
                .levels
                .iter()
                .zip(mlp.iter().zip(&gated))
                .filter(|(l, _)| **l >= 20)
                .all(|(_, (m, g))| m <= g);
            if !holds {
                flags.push(FLAG_DEMAND_ORDERING.to_string());
            }
        }
    }
    flags
}

impl Report {
    pub fn new(test: Vec<(ModelKind, MetricsReport)>, curves: Vec<OodCurve>, target_scale: MinMax) -> Self {
        let flags = report_flags(&curves);
        let mut notes = Vec::new();
        if curves.is_empty() {
            notes.push("no OOD curves; ood_<target>.csv files omitted".to_string());
        }
        Report {
            test,
            curves,
            target_scale,
            flags,
            notes,
        }
    }
}

fn r2_cell(r2: Option<f64>) -> String {
    r2.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

pub fn metrics_csv(test: &[(ModelKind, MetricsReport)]) -> String {
    let mut s = String::from("model,mae,r2,mse,rmse\n");
    for (k, r) in test {
        let _ = writeln!(s, "{k},{},{},{},{}", r.mae, r2_cell(r.r2), r.mse, r.rmse);
    }
    s
}

pub fn metrics_veh_h_csv(test: &[(ModelKind, MetricsReport)], scale: &MinMax) -> String {
    let mut s = String::from("model,mae_veh_h,rmse_veh_h\n");
    for (k, r) in test {
        let _ = writeln!(s, "{k},{},{}", r.mae * scale.span(), r.rmse * scale.span());
    }
    s
}

pub fn per_edge_csv(test: &[(ModelKind, MetricsReport)], edges: &[(NodeId, NodeId)]) -> String {
    let mut s = String::from("edge,tail,head");
    for (k, _) in test {
        let _ = write!(s, ",{k}");
    }
    s.push('\n');
    for (e, (a, b)) in edges.iter().enumerate() {
        let _ = write!(s, "{e},{a},{b}");
        for (_, r) in test {
            let _ = write!(s, ",{}", r.per_edge_mae[e]);
        }
        s.push('\n');
    }
    s
}

pub fn ood_csv(curve: &OodCurve) -> String {
    let mut s = String::from("level");
    for k in &curve.models {
        let _ = write!(s, ",{k}");
    }
    s.push('\n');
    for (level, reports) in curve.levels.iter().zip(&curve.reports) {
        let _ = write!(s, "{level}");
        for r in reports {
            let _ = write!(s, ",{}", r.mae);
        }
        s.push('\n');
    }
    s
}

/// Writes the report files into `out_dir` and returns their paths. Metric
/// tables are skipped when `report.test` is empty and OOD tables when there
/// are no curves.
pub fn emit_report(report: &Report, edges: &[(NodeId, NodeId)], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if let Some((k, _)) = report.test.iter().find(|(_, r)| r.per_edge_mae.len() != edges.len()) {
        return Err(Error::shape("emit_report", format!("{k} per-edge MAE does not match {} edges", edges.len())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut files = Vec::new();
    if !report.test.is_empty() {
        files.push(("metrics.csv".to_string(), metrics_csv(&report.test)));
        files.push(("metrics_veh_h.csv".to_string(), metrics_veh_h_csv(&report.test, &report.target_scale)));
        files.push(("per_edge_mae.csv".to_string(), per_edge_csv(&report.test, edges)));
    }
    for c in &report.curves {
        files.push((format!("ood_{}.csv", c.target), ood_csv(c)));
    }
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json("serializing report", e))?;
    files.push(("report.json".to_string(), json + "\n"));

    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        written.push(path);
    }
    Ok(written)
}

/// Checks RMSE² = MSE and MAE ≤ RMSE on a report.
pub fn report_is_consistent(r: &MetricsReport) -> bool {
    (r.rmse * r.rmse - r.mse).abs() <= 1e-12 * r.mse.max(1.0) && r.mae <= r.rmse + 1e-15 && r.mae >= 0.0
}
