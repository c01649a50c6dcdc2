//! Experiment configuration: a TOML file with `[model]`, `[data]`,
//! `[augment]`, `[train]` and `[run]` sections. Every field is optional and
//! falls back to the default documented on it; unknown keys are rejected.

use std::path::{Path, PathBuf};

use mcnet::backbones::{BackboneSpec, ClassifierMode};
use mcnet::data::{AugmentPolicy, ChannelStats, EraseSpec, SyntheticKind};
use mcnet::scorenorm::NormalizerKind;
use mcnet::train::{AdamConfig, PlateauConfig, ThresholdMode, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Original,
    Multi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalizer {
    Softmax,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cifar10,
    Cifar100,
    Synthetic,
    Idx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Threshold {
    Abs,
    Rel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Backbone preset: vgg16, resnet18, mini_vgg, mini_resnet, mini_cnn.
    pub preset: String,
    /// `original` (one classifier) or `multi` (one head per set).
    pub mode: Mode,
    /// Head normalizer in multi mode: `l2` or `softmax`.
    pub normalizer: Normalizer,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "mini_resnet".into(),
            mode: Mode::Multi,
            normalizer: Normalizer::L2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// cifar10, cifar100, synthetic or idx.
    pub dataset: DatasetKind,
    /// Directory holding the CIFAR binary files.
    pub path: PathBuf,
    /// Keep only the first N training images; 0 keeps all.
    pub train_subset: usize,
    /// Keep only the first N test images; 0 keeps all.
    pub test_subset: usize,
    /// two_gaussians or striped_patterns.
    pub synthetic_kind: String,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub image_size: usize,
    /// Category count for synthetic and idx data.
    pub n_classes: usize,
    /// Seed of the synthetic generator, independent of the run seed.
    pub seed: u64,
    pub idx_train_images: PathBuf,
    pub idx_train_labels: PathBuf,
    pub idx_test_images: PathBuf,
    pub idx_test_labels: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            path: PathBuf::from("data"),
            train_subset: 0,
            test_subset: 0,
            synthetic_kind: "striped_patterns".into(),
            synthetic_train: 5000,
            synthetic_test: 1000,
            image_size: 8,
            n_classes: 10,
            seed: 0,
            idx_train_images: PathBuf::new(),
            idx_train_labels: PathBuf::new(),
            idx_test_images: PathBuf::new(),
            idx_test_labels: PathBuf::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// Master switch; when off, images only get normalized.
    pub enabled: bool,
    pub crop_pad: usize,
    pub flip_prob: f64,
    /// Normalize with per-channel statistics of the training split.
    pub normalize: bool,
    /// Random erasing probability; 0 disables erasing.
    pub erase_prob: f64,
    pub erase_area_min: f64,
    pub erase_area_max: f64,
    pub erase_aspect_min: f64,
    pub erase_aspect_max: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let e = EraseSpec::default();
        Self {
            enabled: true,
            crop_pad: 4,
            flip_prob: 0.5,
            normalize: true,
            erase_prob: e.prob,
            erase_area_min: e.area.0,
            erase_area_max: e.area.1,
            erase_aspect_min: e.aspect.0,
            erase_aspect_max: e.aspect.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_threshold: f64,
    /// `abs` or `rel`.
    pub plateau_threshold_mode: Threshold,
    pub min_lr: f64,
    /// Write wall-clock seconds into the metrics; off keeps CSVs
    /// byte-identical across runs.
    pub record_time: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let (t, a, p) = (
            TrainConfig::default(),
            AdamConfig::default(),
            PlateauConfig::default(),
        );
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            adam_eps: a.eps,
            plateau_factor: p.factor,
            plateau_patience: p.patience,
            plateau_threshold: p.threshold,
            plateau_threshold_mode: Threshold::Abs,
            min_lr: p.min_lr,
            record_time: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Explicit seeds; when empty, seeds `0..repeat` are used.
    pub seeds: Vec<u64>,
    pub repeat: usize,
    pub output_dir: PathBuf,
    /// Save a checkpoint after every run.
    pub checkpoint: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: Vec::new(),
            repeat: 1,
            output_dir: PathBuf::from("runs"),
            checkpoint: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub data: DataSection,
    pub augment: AugmentSection,
    pub train: TrainSection,
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, applies `key=value` overrides and validates. Errors in
    /// the file itself and in the overrides are reported separately.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let config_err = |message: String| CliError::Config {
            path: path.to_path_buf(),
            message: message.trim_end().to_string(),
        };
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut value: Value = toml::from_str(&text).map_err(|e| config_err(e.to_string()))?;
        Self::from_value(value.clone()).map_err(config_err)?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        Self::from_value(value).map_err(|message| CliError::Override {
            key: overrides.join(" "),
            message: message.trim_end().to_string(),
        })
    }

    fn from_value(value: Value) -> std::result::Result<Self, String> {
        let cfg: Self = value.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.run.seeds.is_empty() {
            (0..self.run.repeat as u64).collect()
        } else {
            self.run.seeds.clone()
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        BackboneSpec::preset(&self.model.preset).map_err(|e| e.to_string())?;
        SyntheticKind::parse(&self.data.synthetic_kind).map_err(|e| e.to_string())?;
        if self.data.n_classes < 2 {
            return Err(format!("data.n_classes = {} must be >= 2", self.data.n_classes));
        }
        if self.data.image_size == 0 {
            return Err("data.image_size must be positive".into());
        }
        if !self.run.seeds.is_empty() && self.run.repeat != self.run.seeds.len() && self.run.repeat != 1 {
            return Err(format!(
                "run.repeat = {} disagrees with {} listed seeds",
                self.run.repeat,
                self.run.seeds.len()
            ));
        }
        if self.seeds().is_empty() {
            return Err("run.repeat must be >= 1".into());
        }
        if self.train.epochs == 0 {
            return Err("train.epochs must be >= 1".into());
        }
        self.train_config(0).validate().map_err(|e| e.to_string())?;
        self.augment_policy(ChannelStats::identity(3))
            .validate()
            .map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn classifier_mode(&self) -> ClassifierMode {
        match (self.model.mode, self.model.normalizer) {
            (Mode::Original, _) => ClassifierMode::Original,
            (Mode::Multi, Normalizer::L2) => ClassifierMode::MultiHeads(NormalizerKind::L2SqrtExp),
            (Mode::Multi, Normalizer::Softmax) => ClassifierMode::MultiHeads(NormalizerKind::Softmax),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            adam: AdamConfig {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.adam_eps,
            },
            plateau: PlateauConfig {
                factor: t.plateau_factor,
                patience: t.plateau_patience,
                threshold: t.plateau_threshold,
                threshold_mode: match t.plateau_threshold_mode {
                    Threshold::Abs => ThresholdMode::Absolute,
                    Threshold::Rel => ThresholdMode::Relative,
                },
                min_lr: t.min_lr,
            },
            seed,
            record_time: t.record_time,
        }
    }

    /// The training-time policy; `stats` come from the training split.
    pub fn augment_policy(&self, stats: ChannelStats) -> AugmentPolicy {
        let a = &self.augment;
        let normalize = a.normalize.then_some(stats);
        if !a.enabled {
            return AugmentPolicy {
                normalize,
                ..AugmentPolicy::disabled()
            };
        }
        AugmentPolicy {
            crop_pad: a.crop_pad,
            flip_prob: a.flip_prob,
            normalize,
            erase: (a.erase_prob > 0.0).then_some(EraseSpec {
                prob: a.erase_prob,
                area: (a.erase_area_min, a.erase_area_max),
                aspect: (a.erase_aspect_min, a.erase_aspect_max),
                ..EraseSpec::default()
            }),
        }
    }
}

/// Resolves `key` to a `section.field` path. A bare field name is accepted
/// when exactly one section has it.
fn resolve_key(key: &str) -> std::result::Result<(String, String), String> {
    let defaults = Value::try_from(ExperimentConfig::default()).expect("defaults serialize");
    let table = defaults.as_table().expect("config is a table");
    if let Some((section, field)) = key.split_once('.') {
        let known = table
            .get(section)
            .and_then(Value::as_table)
            .is_some_and(|t| t.contains_key(field) || field_is_optional(section, field));
        return if known {
            Ok((section.to_string(), field.to_string()))
        } else {
            Err("no such config key".into())
        };
    }
    let hits: Vec<&String> = table
        .iter()
        .filter(|(s, v)| {
            v.as_table().is_some_and(|t| t.contains_key(key)) || field_is_optional(s, key)
        })
        .map(|(s, _)| s)
        .collect();
    match hits.as_slice() {
        [one] => Ok(((*one).clone(), key.to_string())),
        [] => Err("no such config key".into()),
        many => Err(format!(
            "ambiguous, qualify it with one of: {}",
            many.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )),
    }
}

/// Fields whose default serializes to nothing.
fn field_is_optional(section: &str, field: &str) -> bool {
    matches!((section, field), ("run", "seeds"))
}

/// Parses the right-hand side as a TOML value, falling back to a bare
/// string so `preset=mini_cnn` works without quotes.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_override(root: &mut Value, ov: &str) -> Result<()> {
    let (key, raw) = ov.split_once('=').ok_or_else(|| CliError::Override {
        key: ov.to_string(),
        message: "expected key=value".into(),
    })?;
    let key = key.trim();
    let (section, field) = resolve_key(key).map_err(|message| CliError::Override {
        key: key.to_string(),
        message,
    })?;
    let table = root.as_table_mut().expect("config is a table");
    let sec = table
        .entry(section)
        .or_insert_with(|| Value::Table(Default::default()));
    let sec = sec.as_table_mut().ok_or_else(|| CliError::Override {
        key: key.to_string(),
        message: "section is not a table".into(),
    })?;
    sec.insert(field, parse_value(raw.trim()));
    Ok(())
}
