//! Labeled image datasets, loaders, augmentation and synthetic data.

mod augment;
mod cifar;
mod idx;
mod synthetic;

pub use augment::{augment, normalize, sample_erase_region, AugmentPolicy, EraseRegion, EraseSpec};
pub use cifar::{encode_cifar, load_cifar, parse_cifar, CifarVariant, CIFAR_BATCH_RECORDS};
pub use idx::{load_idx, parse_idx};
pub use synthetic::{make_synthetic, SyntheticKind};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One decoded image `[C, H, W]` and its category.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor<f32>,
    pub label: usize,
}

/// Images stored contiguously as `[n, C, H, W]` with one label each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pixels: Vec<f32>,
    labels: Vec<usize>,
    /// Secondary label byte kept only so records re-encode unchanged.
    coarse: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(
        shape: [usize; 3],
        n_classes: usize,
        pixels: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let [channels, height, width] = shape;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!("image extents must be positive, got {shape:?}")));
        }
        if n_classes < 2 {
            return Err(Error::Data(format!("need at least 2 classes, got {n_classes}")));
        }
        if pixels.len() != labels.len() * channels * height * width {
            return Err(Error::Shape(format!(
                "{} pixel values for {} images of {shape:?}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::Data(format!(
                "label {l} of sample {i} is out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            n_classes,
            pixels,
            labels,
            coarse: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[i * n..][..n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> LabeledImage {
        LabeledImage {
            pixels: Tensor::from_vec(&self.image_shape(), self.image(i).to_vec())
                .expect("dataset shape is valid"),
            label: self.labels[i],
        }
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let n = self.image_len();
        let mut pixels = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(format!(
                    "sample {i} out of range for {} samples",
                    self.len()
                )));
            }
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let mut out = Self::new(self.image_shape(), self.n_classes, pixels, labels)?;
        out.coarse = self
            .coarse
            .as_ref()
            .map(|c| indices.iter().map(|&i| c[i]).collect());
        Ok(out)
    }

    /// The first `n` samples (or all of them when fewer exist).
    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub(crate) fn with_coarse(mut self, coarse: Vec<u8>) -> Self {
        self.coarse = Some(coarse);
        self
    }

    pub(crate) fn coarse(&self) -> Option<&[u8]> {
        self.coarse.as_deref()
    }
}

/// Per-channel mean and standard deviation of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Population statistics over every pixel of every image. A channel
    /// with zero spread gets std 1 so normalization stays finite.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Contract("channel statistics of an empty dataset".into()));
        }
        let plane = ds.height * ds.width;
        let count = (ds.len() * plane) as f64;
        let mut mean = vec![0.0; ds.channels];
        let mut sq = vec![0.0; ds.channels];
        for i in 0..ds.len() {
            for (c, px) in ds.image(i).chunks_exact(plane).enumerate() {
                mean[c] += px.iter().map(|&v| f64::from(v)).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for i in 0..ds.len() {
            for (c, px) in ds.image(i).chunks_exact(plane).enumerate() {
                sq[c] += px
                    .iter()
                    .map(|&v| (f64::from(v) - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }
}
