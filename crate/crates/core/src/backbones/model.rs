use std::hash::Hasher;

use super::blocks::{DenseLayer, ResidualBlock};
use super::stats::propagate_shapes;
use super::{BackboneSpec, BlockKind, Reduction, SetSpec};
use crate::error::{Error, Result};
use crate::heads::{aggregate_scores, ClassifierHead};
use crate::layers::{
    AdaptiveMaxPool2d, BatchNorm2d, Conv2d, Layer, Linear, MaxPool2d, Mode, NamedBuffers,
    NamedParams, Relu, Sequential,
};
use crate::rng::SeededRng;
use crate::scorenorm::NormalizerKind;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassifierMode {
    /// One classifier on the last feature map, producing logits.
    Original,
    /// One head per set; the output is the sum of the head scores.
    MultiHeads(NormalizerKind),
}

pub struct ForwardOutput<T> {
    /// Summed head scores (multi-head) or logits (original), `[B, N]`.
    pub output: Tensor<T>,
    /// Per-head scores, multi-head mode only.
    pub per_head: Option<Vec<Tensor<T>>>,
}

pub struct Model<T: Scalar> {
    spec: BackboneSpec,
    mode: ClassifierMode,
    n_classes: usize,
    sets: Vec<Sequential<T>>,
    heads: Vec<ClassifierHead<T>>,
    classifier: Option<Sequential<T>>,
}

struct SetBuilder<'a, T: Scalar> {
    seq: Sequential<T>,
    channels: usize,
    stride: usize,
    batchnorm: bool,
    unit: usize,
    rng: &'a mut SeededRng,
}

impl<T: Scalar> SetBuilder<'_, T> {
    fn conv(&mut self, seq: &mut Sequential<T>, tag: &str, k: usize, cin: usize, cout: usize) -> Result<()> {
        let stride = std::mem::replace(&mut self.stride, 1);
        seq.push(
            format!("conv{tag}"),
            Conv2d::new(cin, cout, k, stride, k / 2, !self.batchnorm, self.rng)?,
        );
        if self.batchnorm {
            seq.push(format!("bn{tag}"), BatchNorm2d::new(cout)?);
        }
        Ok(())
    }

    fn next_unit(&mut self, prefix: &str) -> String {
        self.unit += 1;
        format!("{prefix}{}", self.unit)
    }

    fn plain(&mut self, plan: &[(usize, usize)]) -> Result<()> {
        for &(k, out) in plan {
            let mut unit = Sequential::new();
            self.conv(&mut unit, "", k, self.channels, out)?;
            unit.push("relu", Relu::new());
            let name = self.next_unit("conv");
            self.seq.push(name, unit);
            self.channels = out;
        }
        Ok(())
    }

    fn residual(&mut self, plan: &[(usize, usize)]) -> Result<()> {
        let (mid, out) = (plan[0].1, plan[1].1);
        let cin = self.channels;
        let stride = self.stride;
        let mut main = Sequential::new();
        self.conv(&mut main, "1", 3, cin, mid)?;
        main.push("relu1", Relu::new());
        self.conv(&mut main, "2", 3, mid, out)?;
        let projection = if stride != 1 || cin != out {
            let mut p = Sequential::new();
            self.stride = stride;
            self.conv(&mut p, "", 1, cin, out)?;
            Some(p)
        } else {
            None
        };
        let name = self.next_unit("res");
        self.seq.push(name, ResidualBlock::new(main, projection));
        self.channels = out;
        Ok(())
    }

    fn transition(&mut self, out: usize) -> Result<()> {
        let mut unit = Sequential::new();
        if self.batchnorm {
            unit.push("bn", BatchNorm2d::new(self.channels)?);
        }
        unit.push("relu", Relu::new());
        unit.push(
            "conv",
            Conv2d::new(self.channels, out, 1, 1, 0, true, self.rng)?,
        );
        unit.push("pool", MaxPool2d::new());
        let name = self.next_unit("transition");
        self.seq.push(name, unit);
        self.channels = out;
        Ok(())
    }

    fn dense(&mut self, plan: &[(usize, usize)]) -> Result<()> {
        let mut inner = Sequential::new();
        let mut c = self.channels;
        for (i, &(k, out)) in plan.iter().enumerate() {
            if self.batchnorm {
                inner.push(format!("bn{}", i + 1), BatchNorm2d::new(c)?);
            }
            inner.push(format!("relu{}", i + 1), Relu::new());
            inner.push(
                format!("conv{}", i + 1),
                Conv2d::new(c, out, k, 1, k / 2, !self.batchnorm, self.rng)?,
            );
            c = out;
        }
        let name = self.next_unit("dense");
        self.seq.push(name, DenseLayer::new(inner));
        self.channels += c;
        Ok(())
    }
}

fn build_set<T: Scalar>(
    set: &SetSpec,
    in_channels: usize,
    batchnorm: bool,
    rng: &mut SeededRng,
) -> Result<Sequential<T>> {
    let mut b = SetBuilder {
        seq: Sequential::new(),
        channels: in_channels,
        stride: if set.reduction == Reduction::StrideFirst {
            2
        } else {
            1
        },
        batchnorm,
        unit: 0,
        rng,
    };
    for block in &set.blocks {
        for _ in 0..block.repeat {
            match block.kind {
                BlockKind::PlainConv => b.plain(&block.channels)?,
                BlockKind::ResidualBasic => b.residual(&block.channels)?,
                BlockKind::DownsampleTransition => b.transition(block.channels[0].1)?,
                BlockKind::DenseConcat => b.dense(&block.channels)?,
            }
        }
    }
    if set.reduction == Reduction::MaxPool {
        b.seq.push("pool", MaxPool2d::new());
    }
    Ok(b.seq)
}

impl<T: Scalar> Model<T> {
    pub fn build(
        spec: &BackboneSpec,
        mode: ClassifierMode,
        n_classes: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        spec.validate()?;
        if n_classes < 2 {
            return Err(Error::Build(format!("need at least 2 classes, got {n_classes}")));
        }
        let channels = spec.set_channels();
        let mut sets = Vec::with_capacity(spec.depth());
        let mut c = spec.in_channels;
        for (set, &out) in spec.sets.iter().zip(&channels) {
            sets.push(build_set(set, c, spec.batchnorm, rng)?);
            c = out;
        }
        let last = *channels.last().expect("validated non-empty");
        let (heads, classifier) = match mode {
            ClassifierMode::MultiHeads(norm) => {
                let heads = channels
                    .iter()
                    .enumerate()
                    .map(|(t, &cin)| ClassifierHead::new(t + 1, cin, last, n_classes, norm, rng))
                    .collect::<Result<Vec<_>>>()?;
                (heads, None)
            }
            ClassifierMode::Original => {
                let mut fc = Sequential::new().with("pool", AdaptiveMaxPool2d::global());
                let mut width = last;
                for (i, &h) in spec.classifier_hidden.iter().enumerate() {
                    fc.push(format!("fc{}", i + 1), Linear::new(width, h, rng)?);
                    fc.push(format!("relu{}", i + 1), Relu::new());
                    width = h;
                }
                fc.push(
                    format!("fc{}", spec.classifier_hidden.len() + 1),
                    Linear::new(width, n_classes, rng)?,
                );
                (Vec::new(), Some(fc))
            }
        };
        Ok(Self {
            spec: spec.clone(),
            mode,
            n_classes,
            sets,
            heads,
            classifier,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn mode(&self) -> ClassifierMode {
        self.mode
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn sets(&self) -> &[Sequential<T>] {
        &self.sets
    }

    pub fn heads(&self) -> &[ClassifierHead<T>] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [ClassifierHead<T>] {
        &mut self.heads
    }

    pub fn classifier(&self) -> Option<&Sequential<T>> {
        self.classifier.as_ref()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<ForwardOutput<T>> {
        propagate_shapes(&self.spec, x.shape())?;
        let mut features = Vec::with_capacity(self.sets.len());
        let mut h = x.clone();
        for (t, set) in self.sets.iter_mut().enumerate() {
            h = set
                .forward(&h, mode)
                .map_err(|e| e.within(&format!("set{}", t + 1)))?;
            features.push(h.clone());
        }
        if let Some(fc) = &mut self.classifier {
            let logits = fc.forward(&h, mode).map_err(|e| e.within("classifier"))?;
            return Ok(ForwardOutput {
                output: logits,
                per_head: None,
            });
        }
        let per_head = self
            .heads
            .iter_mut()
            .zip(&features)
            .map(|(head, h)| {
                let scope = format!("head{}", head.set_index);
                head.forward(h, mode).map_err(|e| e.within(&scope))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardOutput {
            output: aggregate_scores(&per_head)?,
            per_head: Some(per_head),
        })
    }

    /// Backpropagates the gradient of the loss with respect to the model
    /// output and returns the gradient with respect to the input.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut from_heads: Vec<Option<Tensor<T>>> = vec![None; self.sets.len()];
        if let Some(fc) = &mut self.classifier {
            from_heads[self.sets.len() - 1] =
                Some(fc.backward(grad_out).map_err(|e| e.within("classifier"))?);
        } else {
            // the sum passes the same gradient to every head
            for (t, head) in self.heads.iter_mut().enumerate() {
                let scope = format!("head{}", head.set_index);
                from_heads[t] = Some(head.backward(grad_out).map_err(|e| e.within(&scope))?);
            }
        }
        let mut carry: Option<Tensor<T>> = None;
        for t in (0..self.sets.len()).rev() {
            let g = match (from_heads[t].take(), carry.take()) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(&b)?;
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => {
                    return Err(Error::Contract("no gradient reaches the last set".into()))
                }
            };
            carry = Some(
                self.sets[t]
                    .backward(&g)
                    .map_err(|e| e.within(&format!("set{}", t + 1)))?,
            );
        }
        Ok(carry.expect("at least one set"))
    }

    pub fn named_params(&mut self) -> NamedParams<'_, T> {
        let mut out = Vec::new();
        for (t, set) in self.sets.iter_mut().enumerate() {
            for (n, p) in set.named_params() {
                out.push((format!("set{}.{n}", t + 1), p));
            }
        }
        for head in &mut self.heads {
            let prefix = format!("head{}", head.set_index);
            for (n, p) in head.named_params() {
                out.push((format!("{prefix}.{n}"), p));
            }
        }
        if let Some(fc) = &mut self.classifier {
            for (n, p) in fc.named_params() {
                out.push((format!("classifier.{n}"), p));
            }
        }
        out
    }

    pub fn named_buffers(&mut self) -> NamedBuffers<'_, T> {
        let mut out = Vec::new();
        for (t, set) in self.sets.iter_mut().enumerate() {
            for (n, b) in set.named_buffers() {
                out.push((format!("set{}.{n}", t + 1), b));
            }
        }
        for head in &mut self.heads {
            let prefix = format!("head{}", head.set_index);
            for (n, b) in head.named_buffers() {
                out.push((format!("{prefix}.{n}"), b));
            }
        }
        if let Some(fc) = &mut self.classifier {
            for (n, b) in fc.named_buffers() {
                out.push((format!("classifier.{n}"), b));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.sets.iter().map(|s| s.param_count()).sum::<usize>()
            + self.heads.iter().map(|h| h.param_count()).sum::<usize>()
            + self.classifier.as_ref().map_or(0, |c| c.param_count())
    }

    pub fn fingerprint(&self, h: &mut dyn Hasher) {
        for s in &self.sets {
            s.fingerprint(h);
        }
        for head in &self.heads {
            head.fingerprint(h);
        }
        if let Some(c) = &self.classifier {
            c.fingerprint(h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{leaf_kinds, LayerKind};
    use crate::tensor::RandomDist;

    fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = SeededRng::new(seed);
        Tensor::random(shape, RandomDist::Uniform { low: 0.0, high: 1.0 }, &mut rng).unwrap()
    }

    #[test]
    fn multi_head_output_is_sum_of_heads() {
        let mut rng = SeededRng::new(1);
        let spec = BackboneSpec::mini_resnet();
        let mut m = Model::<f64>::build(
            &spec,
            ClassifierMode::MultiHeads(NormalizerKind::L2SqrtExp),
            5,
            &mut rng,
        )
        .unwrap();
        let out = m.forward(&input(&[3, 3, 8, 8], 2), Mode::Train).unwrap();
        let heads = out.per_head.unwrap();
        assert_eq!(heads.len(), 4);
        for i in 0..out.output.len() {
            let manual: f64 = heads.iter().map(|h| h.data()[i]).sum();
            assert!((manual - out.output.data()[i]).abs() < 1e-12);
        }
        let gx = m.backward(&Tensor::full(&[3, 5], 1.0).unwrap()).unwrap();
        assert_eq!(gx.shape(), &[3, 3, 8, 8]);
    }

    #[test]
    fn single_set_model_is_a_plain_cnn() {
        let mut rng = SeededRng::new(1);
        let mut m = Model::<f64>::build(
            &BackboneSpec::mini_cnn(),
            ClassifierMode::MultiHeads(NormalizerKind::L2SqrtExp),
            2,
            &mut rng,
        )
        .unwrap();
        assert_eq!(m.heads().len(), 1);
        let out = m.forward(&input(&[2, 3, 6, 6], 3), Mode::Eval).unwrap();
        assert_eq!(out.output.shape(), &[2, 2]);
    }

    #[test]
    fn vgg16_has_thirteen_convs() {
        let mut rng = SeededRng::new(0);
        let m = Model::<f32>::build(&BackboneSpec::vgg16(), ClassifierMode::Original, 10, &mut rng)
            .unwrap();
        let convs: usize = m
            .sets()
            .iter()
            .map(|s| {
                leaf_kinds(s, "")
                    .iter()
                    .filter(|(_, k)| *k == LayerKind::Conv3x3)
                    .count()
            })
            .sum();
        assert_eq!(convs, 13);
    }

    #[test]
    fn too_small_input_names_the_set() {
        let mut rng = SeededRng::new(0);
        let mut m = Model::<f64>::build(
            &BackboneSpec::mini_vgg(),
            ClassifierMode::Original,
            3,
            &mut rng,
        )
        .unwrap();
        let err = m.forward(&input(&[1, 3, 4, 4], 0), Mode::Eval).err().unwrap();
        assert!(matches!(err, Error::Shape(ref msg) if msg.contains("set3")), "{err}");
    }
}
