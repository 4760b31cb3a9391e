//! Multi-seed experiment execution.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DatasetKind, ExperimentConfig};
use crate::checkpoint;
use crate::cost::{batch_op_estimate, memory_report, MemoryReport, OpCounter, OpTally, StorageLayout};
use crate::data::mnist::{load_mnist_dir, MnistSet};
use crate::data::shd::{split_path, ShdSet};
use crate::data::synthetic::SyntheticSet;
use crate::data::SpikeDataset;
use crate::error::{Error, Result};
use crate::learner::{run_training, EpochRecord};
use crate::network::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub final_train_acc: Option<f64>,
    pub final_test_acc: Option<f64>,
    pub ops: OpTally,
    pub saturations: u64,
    /// File name inside `<out>/checkpoints/`.
    pub checkpoint: String,
    /// Recurrent nets only: the fixed matrix still matches its init fingerprint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recurrent_unchanged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub memory_mixed: MemoryReport,
    pub memory_fp32: MemoryReport,
    /// Closed-form counts of one full-size training batch.
    pub batch_ops: OpCounter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub results: Vec<SeedResult>,
    pub cost: CostSummary,
}

pub fn cost_summary(cfg: &ExperimentConfig) -> CostSummary {
    let net = cfg.net_config();
    let train = cfg.train_config(0);
    CostSummary {
        memory_mixed: memory_report(&net, &train, StorageLayout::Mixed),
        memory_fp32: memory_report(&net, &train, StorageLayout::Fp32),
        batch_ops: batch_op_estimate(&net, &train),
    }
}

pub type DatasetPair = (Box<dyn SpikeDataset>, Box<dyn SpikeDataset>);

struct Owned<T: SpikeDataset> {
    inner: T,
    limit: usize,
}

impl<T: SpikeDataset> SpikeDataset for Owned<T> {
    fn len(&self) -> usize {
        if self.limit == 0 {
            self.inner.len()
        } else {
            self.limit.min(self.inner.len())
        }
    }
    fn inputs(&self) -> usize {
        self.inner.inputs()
    }
    fn classes(&self) -> usize {
        self.inner.classes()
    }
    fn input_max(&self) -> u32 {
        self.inner.input_max()
    }
    fn label(&self, idx: usize) -> usize {
        self.inner.label(idx)
    }
    fn encode_sample(&self, idx: usize, timesteps: usize, seed: u64) -> Result<Vec<i32>> {
        self.inner.encode_sample(idx, timesteps, seed)
    }
}

fn boxed<T: SpikeDataset + 'static>(inner: T, limit: usize) -> Box<dyn SpikeDataset> {
    Box::new(Owned { inner, limit })
}

/// Load the train/test pair named by the config, truncated to the
/// configured limits.
pub fn load_datasets(cfg: &ExperimentConfig, dataset_dir: Option<&Path>) -> Result<DatasetPair> {
    let (tl, vl) = (cfg.train.train_limit, cfg.train.test_limit);
    let need_dir = || {
        dataset_dir.ok_or_else(|| Error::Dataset(format!("{:?} needs --dataset-dir", cfg.dataset)))
    };
    let pair: DatasetPair = match cfg.dataset {
        DatasetKind::Mnist => {
            let dir = need_dir()?;
            let train: MnistSet = load_mnist_dir(dir, true)?;
            let test: MnistSet = load_mnist_dir(dir, false)?;
            (boxed(train, tl), boxed(test, vl))
        }
        DatasetKind::Shd => {
            let dir = need_dir()?;
            (
                boxed(ShdSet::load(&split_path(dir, true))?, tl),
                boxed(ShdSet::load(&split_path(dir, false))?, vl),
            )
        }
        DatasetKind::Synthetic => {
            let s = cfg.synthetic.clone().unwrap_or_default();
            let inputs = cfg.net_config().input_elements();
            let classes = cfg.model.classes;
            (
                boxed(SyntheticSet::new(s.train, inputs, classes, s.seed), tl),
                boxed(SyntheticSet::new(s.test, inputs, classes, s.seed ^ 0xA5A5), vl),
            )
        }
    };
    check_compatible(cfg, pair.0.as_ref())?;
    check_compatible(cfg, pair.1.as_ref())?;
    Ok(pair)
}

fn check_compatible(cfg: &ExperimentConfig, d: &dyn SpikeDataset) -> Result<()> {
    let net = cfg.net_config();
    if d.inputs() != net.input_elements() {
        return Err(Error::Config(format!(
            "dataset has {} inputs, model expects {}",
            d.inputs(),
            net.input_elements()
        )));
    }
    if d.classes() != net.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model has {}",
            d.classes(),
            net.classes
        )));
    }
    if d.input_max() > net.input_max {
        return Err(Error::Config(format!(
            "dataset values reach {}, model input_max is {}",
            d.input_max(),
            net.input_max
        )));
    }
    Ok(())
}

/// Train one seed and write its checkpoint.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    train: &dyn SpikeDataset,
    test: &dyn SpikeDataset,
    checkpoint_dir: &Path,
    mut on_epoch: impl FnMut(u64, &EpochRecord),
) -> Result<SeedResult> {
    let net_cfg = cfg.net_config();
    let train_cfg = cfg.train_config(seed);
    let mut net = Network::new(&net_cfg, &train_cfg)?;
    let mut counter = OpCounter::new();
    let epochs = run_training(&mut net, train, test, &train_cfg, &mut counter, |r| on_epoch(seed, r))?;
    let name = format!("seed-{seed}.isnw");
    checkpoint::save(&net, &checkpoint_dir.join(&name))?;
    Ok(SeedResult {
        seed,
        final_train_acc: epochs.last().map(|r| r.train_acc),
        final_test_acc: epochs.last().map(|r| r.test_acc),
        epochs,
        ops: counter.totals(),
        saturations: counter.saturations(),
        checkpoint: name,
        recurrent_unchanged: net.recurrent().map(|r| r.is_unchanged()),
    })
}

/// Run every seed sequentially on an already loaded dataset pair.
pub fn run_with_data(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    data: &DatasetPair,
    out_dir: &Path,
    mut on_epoch: impl FnMut(u64, &EpochRecord),
) -> Result<RunManifest> {
    cfg.validate()?;
    let ckpt = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    let mut results = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        results.push(run_seed(cfg, seed, data.0.as_ref(), data.1.as_ref(), &ckpt, &mut on_epoch)?);
    }
    Ok(RunManifest {
        config: cfg.clone(),
        seeds: seeds.to_vec(),
        out_dir: out_dir.to_path_buf(),
        results,
        cost: cost_summary(cfg),
    })
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    dataset_dir: Option<&Path>,
    out_dir: &Path,
    on_epoch: impl FnMut(u64, &EpochRecord),
) -> Result<RunManifest> {
    cfg.validate()?;
    let data = load_datasets(cfg, dataset_dir)?;
    run_with_data(cfg, &cfg.seeds, &data, out_dir, on_epoch)
}
