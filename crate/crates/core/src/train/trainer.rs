use std::time::Instant;

use super::optim::{Adam, AdamConfig, PlateauConfig, PlateauScheduler};
use crate::backbones::Model;
use crate::data::{augment, normalize, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::heads::predict;
use crate::layers::Mode;
use crate::rng::SeededRng;
use crate::scorenorm::cross_entropy_with_grad;
use crate::tensor::{Scalar, Tensor};

/// Stream keys for the derived per-epoch and per-sample generators.
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const AUGMENT_STREAM: u64 = 0x4155_474d;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    pub seed: u64,
    /// Measure wall-clock seconds per epoch; when off the column is 0 so
    /// metrics depend only on seed, config and data.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 100,
            epochs: 300,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            seed: 0,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size {} must be >= 2 for batchnorm",
                self.batch_size
            )));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(Error::Config("adam betas must be in [0, 1) and eps > 0".into()));
        }
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) || p.threshold < 0.0 || p.min_lr < 0.0 {
            return Err(Error::Config(
                "plateau factor must be in (0, 1), threshold and min_lr >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Metrics for one completed epoch (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    pub scheduler: PlateauScheduler,
    pub config: TrainConfig,
    pub augment: Option<AugmentPolicy>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig, augment: Option<AugmentPolicy>) -> Result<Self> {
        config.validate()?;
        if let Some(p) = &augment {
            p.validate()?;
        }
        Ok(Self {
            model,
            adam: Adam::new(config.adam),
            scheduler: PlateauScheduler::new(config.lr, config.plateau),
            config,
            augment,
            epoch: 0,
            history: Vec::new(),
        })
    }

    fn batch_input(&self, ds: &Dataset, idx: &[usize], train: bool) -> Result<(Tensor<T>, Vec<usize>)> {
        let mut data = Vec::with_capacity(idx.len() * ds.image_len());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let mut img = ds.get(i);
            match (&self.augment, train) {
                (Some(policy), true) => {
                    let mut rng = SeededRng::new(self.config.seed).derive(&[
                        AUGMENT_STREAM,
                        self.epoch as u64,
                        i as u64,
                    ]);
                    img = augment(&img, policy, &mut rng);
                }
                (Some(policy), false) => {
                    if let Some(stats) = &policy.normalize {
                        img = normalize(&img, stats);
                    }
                }
                (None, _) => {}
            }
            data.extend(img.pixels.data().iter().map(|&v| T::lit(f64::from(v))));
            labels.push(img.label);
        }
        let [c, h, w] = ds.image_shape();
        Ok((Tensor::from_vec(&[idx.len(), c, h, w], data)?, labels))
    }

    /// Mean cross-entropy of `softmax(scores)` per row and its gradient
    /// with respect to `scores`, scaled for the batch mean.
    fn loss_and_grad(scores: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
        let n = scores.dim(1);
        let b = T::lit(labels.len() as f64);
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(scores.len());
        for (row, &label) in scores.data().chunks_exact(n).zip(labels) {
            let (loss, g) = cross_entropy_with_grad(row, label)?;
            total += loss.to_f64().unwrap_or(f64::NAN);
            grad.extend(g.into_iter().map(|v| v / b));
        }
        Ok((total / labels.len() as f64, Tensor::from_vec(scores.shape(), grad)?))
    }

    /// One pass over `train` in a seeded shuffled order. A trailing batch
    /// of a single sample is skipped. Returns mean batch loss and accuracy
    /// on the samples seen.
    pub fn train_epoch(&mut self, train: &Dataset) -> Result<(f64, f64)> {
        if train.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        SeededRng::new(self.config.seed)
            .derive(&[SHUFFLE_STREAM, self.epoch as u64])
            .shuffle(&mut order);
        let lr = self.scheduler.lr;
        let (mut loss_sum, mut batches, mut correct, mut seen) = (0.0, 0usize, 0usize, 0usize);
        for idx in order.chunks(self.config.batch_size) {
            if idx.len() < 2 && train.len() > 1 {
                continue;
            }
            let (x, labels) = self.batch_input(train, idx, true)?;
            let out = self.model.forward(&x, Mode::Train)?;
            let (loss, grad) = Self::loss_and_grad(&out.output, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    layer: "loss".into(),
                });
            }
            self.model.zero_grad();
            self.model.backward(&grad)?;
            self.adam.step(self.model.named_params(), lr)?;
            loss_sum += loss;
            batches += 1;
            seen += labels.len();
            correct += predict(&out.output)?
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
        }
        Ok((loss_sum / batches as f64, correct as f64 / seen as f64))
    }

    /// Eval-mode loss (mean per sample), accuracy and per-sample predictions.
    pub fn evaluate(&mut self, ds: &Dataset) -> Result<Evaluation> {
        if ds.is_empty() {
            return Err(Error::Contract("evaluation set is empty".into()));
        }
        let all: Vec<usize> = (0..ds.len()).collect();
        let mut loss_sum = 0.0;
        let mut predictions = Vec::with_capacity(ds.len());
        for idx in all.chunks(self.config.batch_size) {
            let (x, labels) = self.batch_input(ds, idx, false)?;
            let out = self.model.forward(&x, Mode::Eval)?;
            let (loss, _) = Self::loss_and_grad(&out.output, &labels)?;
            loss_sum += loss * labels.len() as f64;
            predictions.extend(predict(&out.output)?);
        }
        let correct = predictions
            .iter()
            .zip(ds.labels())
            .filter(|(p, l)| p == l)
            .count();
        Ok(Evaluation {
            loss: loss_sum / ds.len() as f64,
            accuracy: correct as f64 / ds.len() as f64,
            predictions,
        })
    }

    /// Trains one epoch, evaluates on `test` if given, steps the scheduler
    /// on the training loss and records the metrics.
    pub fn run_epoch(&mut self, train: &Dataset, test: Option<&Dataset>) -> Result<EpochMetrics> {
        let start = Instant::now();
        let lr = self.scheduler.lr;
        let (train_loss, train_accuracy) = self.train_epoch(train)?;
        let eval = test.map(|t| self.evaluate(t)).transpose()?;
        self.scheduler.step(train_loss);
        self.epoch += 1;
        let m = EpochMetrics {
            epoch: self.epoch,
            train_loss,
            train_accuracy,
            test_loss: eval.as_ref().map(|e| e.loss),
            test_accuracy: eval.as_ref().map(|e| e.accuracy),
            lr,
            seconds: if self.config.record_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        self.history.push(m.clone());
        Ok(m)
    }
}
