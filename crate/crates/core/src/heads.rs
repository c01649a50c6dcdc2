//! Per-set classifier heads and score summation.
//!
//! A head maps a feature map `[B, C, H, W]` to a score vector `[B, N]`:
//! 3x3 conv to the target width, global max pool, batchnorm on the pooled
//! `(1, 1)` maps, one linear layer, softplus, then the score normalizer.

use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::layers::{
    AdaptiveMaxPool2d, BatchNorm2d, Conv2d, Layer, LayerCost, LayerKind, Linear, Mode,
    NamedBuffers, NamedParams, Sequential, Softplus,
};
use crate::rng::SeededRng;
use crate::scorenorm::{NormalizerKind, ScoreNorm};
use crate::tensor::{argmax, Scalar, Tensor};

pub struct ClassifierHead<T: Scalar> {
    /// 1-based index of the set this head reads from.
    pub set_index: usize,
    pub in_channels: usize,
    pub target_channels: usize,
    pub n_classes: usize,
    pub normalizer: NormalizerKind,
    body: Sequential<T>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn new(
        set_index: usize,
        in_channels: usize,
        target_channels: usize,
        n_classes: usize,
        normalizer: NormalizerKind,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Build(format!(
                "classifier head needs at least 2 classes, got {n_classes}"
            )));
        }
        let body = Sequential::new()
            .with(
                "conv",
                Conv2d::new(in_channels, target_channels, 3, 1, 1, false, rng)?,
            )
            .with("pool", AdaptiveMaxPool2d::global())
            .with("bn", BatchNorm2d::new(target_channels)?)
            .with("fc", Linear::new(target_channels, n_classes, rng)?)
            .with("softplus", Softplus::new())
            .with("norm", ScoreNorm::new(normalizer));
        Ok(Self {
            set_index,
            in_channels,
            target_channels,
            n_classes,
            normalizer,
            body,
        })
    }

    pub fn body(&self) -> &Sequential<T> {
        &self.body
    }

    pub fn body_mut(&mut self) -> &mut Sequential<T> {
        &mut self.body
    }
}

impl<T: Scalar> Layer<T> for ClassifierHead<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Composite
    }

    fn forward(&mut self, h: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if h.rank() != 4 || h.dim(1) != self.in_channels {
            return Err(Error::Shape(format!(
                "head {} expects [B,{},H,W], got {:?}",
                self.set_index,
                self.in_channels,
                h.shape()
            )));
        }
        self.body.forward(h, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.body.backward(grad_out)
    }

    fn named_params(&mut self) -> NamedParams<'_, T> {
        self.body.named_params()
    }

    fn named_buffers(&mut self) -> NamedBuffers<'_, T> {
        self.body.named_buffers()
    }

    fn param_count(&self) -> usize {
        self.body.param_count()
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        self.body.cost(input)
    }

    fn fingerprint(&self, h: &mut dyn Hasher) {
        self.body.fingerprint(h)
    }

    fn sublayers(&self) -> Vec<(String, &dyn Layer<T>)> {
        self.body.sublayers()
    }
}

/// Elementwise sum of the per-head score tensors.
pub fn aggregate_scores<T: Scalar>(cs: &[Tensor<T>]) -> Result<Tensor<T>> {
    let (first, rest) = cs
        .split_first()
        .ok_or_else(|| Error::Contract("aggregate_scores needs at least one head".into()))?;
    let mut total = first.clone();
    for c in rest {
        total.add_assign(c)?;
    }
    Ok(total)
}

/// Row-wise argmax of `[B, N]` scores; ties go to the lowest index.
pub fn predict<T: Scalar>(scores: &Tensor<T>) -> Result<Vec<usize>> {
    if scores.rank() != 2 {
        return Err(Error::Shape(format!(
            "predict expects [B, N], got {:?}",
            scores.shape()
        )));
    }
    Ok(scores
        .data()
        .chunks_exact(scores.dim(1))
        .map(argmax)
        .collect())
}
