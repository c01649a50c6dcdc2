//! Differentiable layers.
//!
//! Each layer owns its parameters and caches whatever its backward pass
//! needs during `forward`. `backward` consumes that cache, accumulates
//! parameter gradients into [`Param::grad`] and returns the gradient with
//! respect to the layer input. Calling `backward` without a preceding
//! `forward` is a contract error.

use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{RandomDist, Scalar, Tensor};

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod pool;
mod skip;

pub use activation::{relu, softplus, softplus_scalar, Relu, Softplus};
pub use batchnorm::{BatchNorm2d, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_extent, Conv2d};
pub use linear::{linear_forward, Linear};
pub use pool::{AdaptiveMaxPool2d, MaxPool2d};
pub use skip::{add_skip, concat_channels, split_channels};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
    MaxPool2x2,
    AdaptiveMaxPool,
    BatchNorm2d,
    Linear,
    Relu,
    Softplus,
    AddSkip,
    ScoreNorm,
    /// Containers and multi-layer blocks.
    Composite,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv3x3 => "conv3x3",
            LayerKind::Conv1x1 => "conv1x1",
            LayerKind::MaxPool2x2 => "maxpool2x2",
            LayerKind::AdaptiveMaxPool => "adaptive_maxpool",
            LayerKind::BatchNorm2d => "batchnorm2d",
            LayerKind::Linear => "linear",
            LayerKind::Relu => "relu",
            LayerKind::Softplus => "softplus",
            LayerKind::AddSkip => "add_skip",
            LayerKind::ScoreNorm => "scorenorm",
            LayerKind::Composite => "composite",
        }
    }
}

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = value.zeros_like();
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Static cost of a layer for a given input shape.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerCost {
    pub out_shape: Vec<usize>,
    pub params: usize,
    /// Multiply-accumulates (conv, linear).
    pub macs: u64,
    /// Elementwise operations: one per output element of pools,
    /// activations, normalizers and skip additions.
    pub ops: u64,
}

impl LayerCost {
    pub fn absorb(&mut self, other: LayerCost) {
        self.params += other.params;
        self.macs += other.macs;
        self.ops += other.ops;
        self.out_shape = other.out_shape;
    }
}

pub type NamedParams<'a, T> = Vec<(String, &'a mut Param<T>)>;
pub type NamedBuffers<'a, T> = Vec<(String, &'a mut Tensor<T>)>;

pub trait Layer<T: Scalar>: Send {
    fn kind(&self) -> LayerKind;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    /// Trainable parameters with names local to this layer.
    fn named_params(&mut self) -> NamedParams<'_, T> {
        Vec::new()
    }

    /// Non-trainable state (batchnorm running statistics).
    fn named_buffers(&mut self) -> NamedBuffers<'_, T> {
        Vec::new()
    }

    fn param_count(&self) -> usize;

    /// Output shape, parameter count and arithmetic cost for `input`.
    fn cost(&self, input: &[usize]) -> Result<LayerCost>;

    /// Feeds the discrete decisions of the last forward pass (ReLU masks,
    /// max-pool winners) into `h`. Two forwards with different fingerprints
    /// straddle a kink.
    fn fingerprint(&self, _h: &mut dyn Hasher) {}

    /// Direct children of a composite layer, with their local names.
    fn sublayers(&self) -> Vec<(String, &dyn Layer<T>)> {
        Vec::new()
    }
}

/// Every leaf layer below `layer` as `(dotted path, kind)`, in build order.
pub fn leaf_kinds<T: Scalar>(layer: &dyn Layer<T>, prefix: &str) -> Vec<(String, LayerKind)> {
    let children = layer.sublayers();
    if children.is_empty() {
        return vec![(prefix.to_string(), layer.kind())];
    }
    children
        .into_iter()
        .flat_map(|(name, child)| {
            let path = if prefix.is_empty() {
                name
            } else {
                format!("{prefix}.{name}")
            };
            leaf_kinds(child, &path)
        })
        .collect()
}

pub(crate) fn missing_cache(kind: LayerKind) -> Error {
    Error::Contract(format!("{} backward called before forward", kind.name()))
}

/// Fan-in scaled uniform init, bound `sqrt(6 / fan_in)`.
pub(crate) fn he_uniform<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut SeededRng,
) -> Result<Tensor<T>> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::random(
        shape,
        RandomDist::Uniform {
            low: -bound,
            high: bound,
        },
        rng,
    )
}

/// Ordered container that records the layers executed during `forward` on a
/// tape and replays it in reverse during `backward`.
pub struct Sequential<T: Scalar> {
    layers: Vec<(String, Box<dyn Layer<T>>)>,
    tape: Vec<usize>,
}

impl<T: Scalar> Default for Sequential<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self {
            layers: Vec::new(),
            tape: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer<T> + 'static) {
        self.layers.push((name.into(), Box::new(layer)));
    }

    pub fn push_boxed(&mut self, name: impl Into<String>, layer: Box<dyn Layer<T>>) {
        self.layers.push((name.into(), layer));
    }

    pub fn with(mut self, name: impl Into<String>, layer: impl Layer<T> + 'static) -> Self {
        self.push(name, layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|(n, _)| n.as_str())
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &dyn Layer<T>)> {
        self.layers.iter().map(|(n, l)| (n.as_str(), l.as_ref()))
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Box<dyn Layer<T>>> {
        self.layers
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, l)| l)
    }

    /// Indices of the layers run by the last forward, in execution order.
    pub fn tape(&self) -> &[usize] {
        &self.tape
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Composite
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.tape.clear();
        let mut cur: Option<Tensor<T>> = None;
        for (i, (name, layer)) in self.layers.iter_mut().enumerate() {
            let input = cur.as_ref().unwrap_or(x);
            let out = layer.forward(input, mode).map_err(|e| e.within(name))?;
            if !out.all_finite() {
                return Err(Error::NonFinite {
                    layer: name.clone(),
                });
            }
            self.tape.push(i);
            cur = Some(out);
        }
        Ok(cur.unwrap_or_else(|| x.clone()))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if self.tape.len() != self.layers.len() {
            return Err(Error::Contract(
                "sequential backward called before a complete forward".into(),
            ));
        }
        let mut grad = grad_out.clone();
        while let Some(i) = self.tape.pop() {
            let (name, layer) = &mut self.layers[i];
            grad = layer.backward(&grad).map_err(|e| e.within(name))?;
        }
        Ok(grad)
    }

    fn named_params(&mut self) -> NamedParams<'_, T> {
        let mut out = Vec::new();
        for (name, layer) in self.layers.iter_mut() {
            for (n, p) in layer.named_params() {
                out.push((format!("{name}.{n}"), p));
            }
        }
        out
    }

    fn named_buffers(&mut self) -> NamedBuffers<'_, T> {
        let mut out = Vec::new();
        for (name, layer) in self.layers.iter_mut() {
            for (n, b) in layer.named_buffers() {
                out.push((format!("{name}.{n}"), b));
            }
        }
        out
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(|(_, l)| l.param_count()).sum()
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        let mut total = LayerCost {
            out_shape: input.to_vec(),
            ..Default::default()
        };
        for (name, layer) in &self.layers {
            let c = layer.cost(&total.out_shape).map_err(|e| e.within(name))?;
            total.absorb(c);
        }
        Ok(total)
    }

    fn fingerprint(&self, h: &mut dyn Hasher) {
        for (_, layer) in &self.layers {
            layer.fingerprint(h);
        }
    }

    fn sublayers(&self) -> Vec<(String, &dyn Layer<T>)> {
        self.layers
            .iter()
            .map(|(n, l)| (n.clone(), l.as_ref()))
            .collect()
    }
}
