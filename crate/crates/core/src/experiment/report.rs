//! Metrics, summaries, and cost reports written after a run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::{CostSummary, RunManifest};
use crate::cost::Phase;
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 9] = ["epoch", "seed", "train_acc", "test_acc", "loss", "add", "mul", "bmul", "shift"];

/// Mean and sample standard deviation (n − 1); the deviation of a single
/// value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn metrics_csv(manifest: &RunManifest) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("metrics csv: {e}"));
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in &manifest.results {
        for e in &r.epochs {
            w.write_record([
                e.epoch.to_string(),
                r.seed.to_string(),
                format!("{:.6}", e.train_acc),
                format!("{:.6}", e.test_acc),
                e.loss.to_string(),
                e.ops.add.to_string(),
                e.ops.mul.to_string(),
                e.ops.bmul.to_string(),
                e.ops.shift.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Config(format!("metrics csv: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub checkpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recurrent_unchanged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub architecture: String,
    pub shadow_bits: u32,
    pub infer_bits: u32,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
    pub train_acc_mean: f64,
    pub train_acc_std: f64,
    pub float_ops: u64,
    pub exp_ops: u64,
    pub per_seed: Vec<SeedSummary>,
}

pub fn summarize(manifest: &RunManifest) -> Summary {
    let test: Vec<f64> = manifest.results.iter().filter_map(|r| r.final_test_acc).collect();
    let train: Vec<f64> = manifest.results.iter().filter_map(|r| r.final_train_acc).collect();
    let (test_acc_mean, test_acc_std) = mean_std(&test);
    let (train_acc_mean, train_acc_std) = mean_std(&train);
    let cfg = &manifest.config;
    Summary {
        dataset: format!("{:?}", cfg.dataset).to_lowercase(),
        architecture: format!("{:?}", cfg.model.architecture).to_lowercase(),
        shadow_bits: cfg.model.shadow_bits,
        infer_bits: cfg.model.infer_bits,
        epochs: cfg.train.epochs,
        seeds: manifest.seeds.clone(),
        test_acc_mean,
        test_acc_std,
        train_acc_mean,
        train_acc_std,
        float_ops: manifest.results.iter().map(|r| r.ops.float_ops).sum(),
        exp_ops: manifest.results.iter().map(|r| r.ops.exp).sum(),
        per_seed: manifest
            .results
            .iter()
            .map(|r| SeedSummary {
                seed: r.seed,
                train_acc: r.final_train_acc,
                test_acc: r.final_test_acc,
                checkpoint: r.checkpoint.clone(),
                recurrent_unchanged: r.recurrent_unchanged,
            })
            .collect(),
    }
}

/// Key/value text form of the cost summary.
pub fn cost_text(cost: &CostSummary) -> String {
    let mut s = String::new();
    let m = &cost.memory_mixed;
    let f = &cost.memory_fp32;
    let _ = writeln!(s, "memory.mixed.static_bytes: {}", m.static_bytes);
    let _ = writeln!(s, "memory.mixed.dynamic_bytes: {}", m.dynamic_bytes);
    let _ = writeln!(s, "memory.mixed.total_bytes: {}", m.total_bytes);
    let _ = writeln!(s, "memory.fp32.static_bytes: {}", f.static_bytes);
    let _ = writeln!(s, "memory.fp32.dynamic_bytes: {}", f.dynamic_bytes);
    let _ = writeln!(s, "memory.fp32.total_bytes: {}", f.total_bytes);
    let _ = writeln!(
        s,
        "memory.ratio_mixed_over_fp32: {:.4}",
        m.total_bytes as f64 / f.total_bytes.max(1) as f64
    );
    for phase in Phase::ALL {
        let t = cost.batch_ops.phase(phase);
        let p = format!("{phase:?}").to_lowercase();
        for (k, v) in [("add", t.add), ("mul", t.mul), ("bmul", t.bmul), ("shift", t.shift)] {
            let _ = writeln!(s, "batch_ops.{p}.{k}: {v}");
        }
    }
    let t = cost.batch_ops.totals();
    for (k, v) in [
        ("add", t.add),
        ("mul", t.mul),
        ("bmul", t.bmul),
        ("shift", t.shift),
        ("exp", t.exp),
        ("float", t.float_ops),
    ] {
        let _ = writeln!(s, "batch_ops.total.{k}: {v}");
    }
    s.push('\n');
    let _ = write!(s, "{m}\n{f}");
    s
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v).map_err(|e| Error::Config(format!("json: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

/// Write metrics.csv, summary.json, manifest.json, cost_report.{txt,json}
/// and config.toml into `manifest.out_dir`.
pub fn emit_report(manifest: &RunManifest) -> Result<()> {
    let dir = &manifest.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("metrics.csv"), &metrics_csv(manifest)?)?;
    write(&dir.join("summary.json"), &json(&summarize(manifest))?)?;
    write(&dir.join("manifest.json"), &json(manifest)?)?;
    write(&dir.join("cost_report.txt"), cost_text(&manifest.cost).as_bytes())?;
    write(&dir.join("cost_report.json"), &json(&manifest.cost)?)?;
    write(&dir.join("config.toml"), manifest.config.to_toml()?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-12);
        assert!((s - 1.290_994_448_735_805_6).abs() < 1e-12);
    }
}
