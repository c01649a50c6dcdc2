use std::path::{Path, PathBuf};

use mcnet::backbones::{BackboneSpec, Model};
use mcnet::data::{
    load_cifar, load_idx, make_synthetic, ChannelStats, CifarVariant, Dataset, SyntheticKind,
};
use mcnet::train::{Checkpoint, EpochMetrics, Trainer};
use mcnet::SeededRng;

use crate::config::{DatasetKind, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::metrics::{format_mean_range, mean_half_range, rows, write_csv};

/// Stream key for model initialization, split off the run seed.
const INIT_STREAM: u64 = 0x494e_4954;

pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

fn dataset_err(e: mcnet::Error) -> CliError {
    CliError::Dataset(e.to_string())
}

fn subset(ds: Dataset, n: usize) -> Result<Dataset> {
    if n == 0 || n >= ds.len() {
        Ok(ds)
    } else {
        ds.take(n).map_err(dataset_err)
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Splits> {
    let d = &cfg.data;
    let (train, test) = match d.dataset {
        DatasetKind::Cifar10 | DatasetKind::Cifar100 => {
            let variant = if d.dataset == DatasetKind::Cifar10 {
                CifarVariant::Cifar10
            } else {
                CifarVariant::Cifar100
            };
            if !d.path.is_dir() {
                return Err(CliError::Dataset(format!(
                    "{} is not a directory",
                    d.path.display()
                )));
            }
            load_cifar(&d.path, variant).map_err(dataset_err)?
        }
        DatasetKind::Synthetic => {
            let kind = SyntheticKind::parse(&d.synthetic_kind).map_err(dataset_err)?;
            let train = make_synthetic(kind, d.synthetic_train, d.n_classes, d.image_size, d.seed)
                .map_err(dataset_err)?;
            let test = make_synthetic(
                kind,
                d.synthetic_test,
                d.n_classes,
                d.image_size,
                d.seed.wrapping_add(1),
            )
            .map_err(dataset_err)?;
            (train, test)
        }
        DatasetKind::Idx => (
            load_idx(&d.idx_train_images, &d.idx_train_labels, d.n_classes).map_err(dataset_err)?,
            load_idx(&d.idx_test_images, &d.idx_test_labels, d.n_classes).map_err(dataset_err)?,
        ),
    };
    let train = subset(train, d.train_subset)?;
    let test = subset(test, d.test_subset)?;
    if train.is_empty() {
        return Err(CliError::Dataset("training split is empty".into()));
    }
    if test.is_empty() {
        return Err(CliError::Dataset("test split is empty".into()));
    }
    Ok(Splits { train, test })
}

pub fn build_trainer(cfg: &ExperimentConfig, data: &Splits, seed: u64) -> Result<Trainer<f32>> {
    let spec = BackboneSpec::preset(&cfg.model.preset)?;
    let mut rng = SeededRng::new(seed).split(INIT_STREAM);
    let model = Model::build(&spec, cfg.classifier_mode(), data.train.n_classes, &mut rng)?;
    let stats = ChannelStats::from_dataset(&data.train)?;
    let policy = cfg.augment_policy(stats);
    Ok(Trainer::new(model, cfg.train_config(seed), Some(policy))?)
}

pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.run.output_dir.join(format!("seed{seed}"))
}

/// Trains until `cfg.train.epochs` completed epochs. `on_epoch` sees
/// every new row.
pub fn train_to_end(
    trainer: &mut Trainer<f32>,
    cfg: &ExperimentConfig,
    data: &Splits,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<()> {
    while trainer.epoch < cfg.train.epochs {
        let m = trainer.run_epoch(&data.train, Some(&data.test))?;
        on_epoch(&m);
    }
    Ok(())
}

/// Writes `metrics.csv` (and `final.ckpt` if enabled) into `dir`.
pub fn write_run(dir: &Path, trainer: &mut Trainer<f32>, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    write_csv(&dir.join("metrics.csv"), &rows(&trainer.history))?;
    if cfg.run.checkpoint {
        let path = dir.join("final.ckpt");
        Checkpoint::capture(trainer, &cfg.to_toml())
            .save(&path)
            .map_err(|e| match e {
                mcnet::Error::Io(source) => CliError::Io { path, source },
                other => other.into(),
            })?;
    }
    Ok(())
}

pub struct RunResult {
    pub seed: u64,
    pub history: Vec<EpochMetrics>,
}

impl RunResult {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.history.last().and_then(|m| m.test_accuracy)
    }

    pub fn best_test_accuracy(&self) -> Option<f64> {
        self.history
            .iter()
            .filter_map(|m| m.test_accuracy)
            .fold(None, |a, v| Some(a.map_or(v, |a: f64| a.max(v))))
    }

    pub fn test_accuracy_at(&self, epoch: usize) -> Option<f64> {
        self.history
            .iter()
            .find(|m| m.epoch == epoch)
            .and_then(|m| m.test_accuracy)
    }
}

/// Mean ± half-range lines across seeds, plus the best single run.
pub fn summary(cfg: &ExperimentConfig, runs: &[RunResult]) -> String {
    let mut out = String::from("# mcnet-summary v1\n");
    out += &format!(
        "model {} mode {:?} normalizer {:?}\n",
        cfg.model.preset, cfg.model.mode, cfg.model.normalizer
    )
    .to_lowercase();
    out += &format!(
        "seeds {}\n",
        runs.iter().map(|r| r.seed.to_string()).collect::<Vec<_>>().join(",")
    );
    let line = |name: &str, vals: Vec<f64>| -> String {
        match mean_half_range(&vals) {
            Some((m, h)) => format!("{name} {}\n", format_mean_range(m, h)),
            None => String::new(),
        }
    };
    out += &line(
        "final_test_accuracy",
        runs.iter().filter_map(RunResult::final_test_accuracy).collect(),
    );
    out += &line(
        "best_epoch_test_accuracy",
        runs.iter().filter_map(RunResult::best_test_accuracy).collect(),
    );
    out += &line(
        "final_train_accuracy",
        runs.iter()
            .filter_map(|r| r.history.last().map(|m| m.train_accuracy))
            .collect(),
    );
    if let Some((seed, best)) = runs
        .iter()
        .filter_map(|r| r.best_test_accuracy().map(|a| (r.seed, a)))
        .fold(None, |acc: Option<(u64, f64)>, (s, a)| match acc {
            Some((_, b)) if b >= a => acc,
            _ => Some((s, a)),
        })
    {
        out += &format!("best_run_test_accuracy {best:.4} seed {seed}\n");
    }
    out
}
