//! Central finite-difference checks of analytic backward passes (64-bit).
//!
//! The scalar probed is `sum(w * y)` for a fixed random `w`. Coordinates
//! whose `+eps` or `-eps` forward makes a different discrete decision
//! (relu sign, max-pool winner) than the base forward are skipped.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::backbones::{BackboneSpec, ClassifierMode, Model};
use crate::error::Result;
use crate::heads::ClassifierHead;
use crate::layers::{
    AdaptiveMaxPool2d, BatchNorm2d, Conv2d, Layer, LayerCost, LayerKind, Linear, MaxPool2d,
    Mode, NamedBuffers, NamedParams, Relu, Sequential, Softplus,
};
use crate::backbones::ResidualBlock;
use crate::rng::SeededRng;
use crate::scorenorm::{NormalizerKind, ScalarMap, ScoreNorm};
use crate::tensor::{RandomDist, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator so gradients that are
    /// zero up to rounding do not divide by ~0.
    pub floor: f64,
    /// Coordinates probed per tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords: 40,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Anything with a forward, a backward and named parameters.
pub trait GradTarget {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>>;
    fn backward(&mut self, grad_out: &Tensor<f64>) -> Result<Tensor<f64>>;
    fn params(&mut self) -> NamedParams<'_, f64>;
    fn fingerprint(&self) -> u64;
}

pub struct LayerTarget<'a> {
    pub layer: &'a mut dyn Layer<f64>,
    pub mode: Mode,
}

impl GradTarget for LayerTarget<'_> {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.layer.forward(x, self.mode)
    }

    fn backward(&mut self, grad_out: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.layer.backward(grad_out)
    }

    fn params(&mut self) -> NamedParams<'_, f64> {
        self.layer.named_params()
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.layer.fingerprint(&mut h);
        h.finish()
    }
}

pub struct ModelTarget<'a> {
    pub model: &'a mut Model<f64>,
    pub mode: Mode,
}

impl GradTarget for ModelTarget<'_> {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.model.forward(x, self.mode)?.output)
    }

    fn backward(&mut self, grad_out: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.model.backward(grad_out)
    }

    fn params(&mut self) -> NamedParams<'_, f64> {
        self.model.named_params()
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.model.fingerprint(&mut h);
        h.finish()
    }
}

fn probe(target: &mut dyn GradTarget, x: &Tensor<f64>, w: &Tensor<f64>) -> Result<(f64, u64)> {
    let y = target.forward(x)?;
    let loss = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    Ok((loss, target.fingerprint()))
}

fn coords(len: usize, max: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if len > max {
        rng.shuffle(&mut idx);
        idx.truncate(max);
        idx.sort_unstable();
    }
    idx
}

/// Where a probed coordinate lives.
enum Slot {
    Input,
    Param(usize),
}

/// Compares the analytic gradient of `target` at `x` with central
/// differences for the input and every parameter tensor.
pub fn check_gradients(
    name: &str,
    target: &mut dyn GradTarget,
    x: &Tensor<f64>,
    config: &GradCheckConfig,
) -> Result<GradReport> {
    let mut rng = SeededRng::new(config.seed).split(0x6772_6164);
    let y = target.forward(x)?;
    let base_fp = target.fingerprint();
    let w = Tensor::random(
        y.shape(),
        RandomDist::Uniform {
            low: -1.0,
            high: 1.0,
        },
        &mut rng,
    )?;
    for (_, p) in target.params() {
        p.zero_grad();
    }
    let gx = target.backward(&w)?;
    let analytic: Vec<(String, Vec<f64>)> = std::iter::once(("input".to_string(), gx.into_data()))
        .chain(
            target
                .params()
                .into_iter()
                .map(|(n, p)| (n, p.grad.data().to_vec())),
        )
        .collect();

    let mut x = x.clone();
    let mut tensors = Vec::new();
    for (slot_idx, (tname, grad)) in analytic.iter().enumerate() {
        let slot = if slot_idx == 0 {
            Slot::Input
        } else {
            Slot::Param(slot_idx - 1)
        };
        let mut check = TensorCheck {
            name: tname.clone(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
        };
        for i in coords(grad.len(), config.max_coords, &mut rng) {
            let nudge = |target: &mut dyn GradTarget, x: &mut Tensor<f64>, delta: f64| {
                match slot {
                    Slot::Input => x.data_mut()[i] += delta,
                    Slot::Param(k) => {
                        let mut ps = target.params();
                        ps[k].1.value.data_mut()[i] += delta;
                    }
                }
            };
            let orig = match slot {
                Slot::Input => x.data()[i],
                Slot::Param(k) => target.params()[k].1.value.data()[i],
            };
            nudge(target, &mut x, config.eps);
            let (lp, fp_plus) = probe(target, &x, &w)?;
            nudge(target, &mut x, -2.0 * config.eps);
            let (lm, fp_minus) = probe(target, &x, &w)?;
            // restore the exact original value
            match slot {
                Slot::Input => x.data_mut()[i] = orig,
                Slot::Param(k) => target.params()[k].1.value.data_mut()[i] = orig,
            }
            if fp_plus != base_fp || fp_minus != base_fp {
                check.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * config.eps);
            let a = grad[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.floor);
            check.max_rel_err = check.max_rel_err.max(rel);
            check.checked += 1;
        }
        tensors.push(check);
    }
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GradReport {
        name: name.to_string(),
        passed: max_rel_err < config.tolerance && tensors.iter().any(|t| t.checked > 0),
        tensors,
        max_rel_err,
    })
}

/// Wraps a layer and scales the input gradient its backward returns.
/// Exists to confirm the checker catches a broken backward.
pub struct PerturbedBackward<L> {
    pub inner: L,
    pub scale: f64,
}

impl<L: Layer<f64>> Layer<f64> for PerturbedBackward<L> {
    fn kind(&self) -> LayerKind {
        self.inner.kind()
    }

    fn forward(&mut self, x: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>> {
        self.inner.forward(x, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.inner.backward(grad_out)?.map(|v| v * self.scale))
    }

    fn named_params(&mut self) -> NamedParams<'_, f64> {
        self.inner.named_params()
    }

    fn named_buffers(&mut self) -> NamedBuffers<'_, f64> {
        self.inner.named_buffers()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        self.inner.cost(input)
    }

    fn fingerprint(&self, h: &mut dyn Hasher) {
        self.inner.fingerprint(h)
    }

    fn sublayers(&self) -> Vec<(String, &dyn Layer<f64>)> {
        self.inner.sublayers()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Layers,
    Head,
    ModelMini,
}

impl Scope {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "layers" => Some(Scope::Layers),
            "head" => Some(Scope::Head),
            "model-mini" => Some(Scope::ModelMini),
            _ => None,
        }
    }
}

fn random_input(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor<f64>> {
    Tensor::random(
        shape,
        RandomDist::Uniform {
            low: -1.0,
            high: 1.0,
        },
        rng,
    )
}

/// One named layer and the input shape it is probed with.
pub type LayerCase = (String, Box<dyn Layer<f64>>, Vec<usize>, Mode);

/// Every layer kind the models use, freshly initialized from `seed`.
pub fn layer_cases(seed: u64) -> Result<Vec<LayerCase>> {
    let mut rng = SeededRng::new(seed).split(0x6c61_7965);
    let mut bn = BatchNorm2d::<f64>::new(3)?;
    bn.set_affine(&[1.5, 0.5, -1.0], &[0.1, -0.2, 0.3])?;
    let mut bn_eval = BatchNorm2d::<f64>::new(3)?;
    bn_eval.set_affine(&[1.5, 0.5, -1.0], &[0.1, -0.2, 0.3])?;
    bn_eval.forward(&random_input(&[4, 3, 3, 3], &mut rng)?, Mode::Train)?;

    let residual = {
        let main = Sequential::new()
            .with("conv1", Conv2d::new(2, 3, 3, 2, 1, false, &mut rng)?)
            .with("bn1", BatchNorm2d::new(3)?)
            .with("relu1", Relu::new())
            .with("conv2", Conv2d::new(3, 3, 3, 1, 1, false, &mut rng)?)
            .with("bn2", BatchNorm2d::new(3)?);
        let proj = Sequential::new()
            .with("conv", Conv2d::new(2, 3, 1, 2, 0, false, &mut rng)?)
            .with("bn", BatchNorm2d::new(3)?);
        ResidualBlock::new(main, Some(proj))
    };
    let identity_residual = {
        let main = Sequential::new()
            .with("conv1", Conv2d::new(2, 2, 3, 1, 1, true, &mut rng)?)
            .with("relu1", Relu::new())
            .with("conv2", Conv2d::new(2, 2, 3, 1, 1, true, &mut rng)?);
        ResidualBlock::new(main, None)
    };
    let cases: Vec<LayerCase> = vec![
        (
            "conv3x3".into(),
            Box::new(Conv2d::new(2, 3, 3, 1, 1, true, &mut rng)?),
            vec![2, 2, 5, 5],
            Mode::Train,
        ),
        (
            "conv3x3_stride2".into(),
            Box::new(Conv2d::new(2, 2, 3, 2, 1, false, &mut rng)?),
            vec![2, 2, 5, 5],
            Mode::Train,
        ),
        (
            "conv1x1".into(),
            Box::new(Conv2d::new(3, 2, 1, 1, 0, true, &mut rng)?),
            vec![2, 3, 4, 4],
            Mode::Train,
        ),
        (
            "maxpool2x2".into(),
            Box::new(MaxPool2d::new()),
            vec![2, 2, 4, 5],
            Mode::Train,
        ),
        (
            "adaptive_maxpool".into(),
            Box::new(AdaptiveMaxPool2d::global()),
            vec![2, 3, 4, 4],
            Mode::Train,
        ),
        (
            "adaptive_maxpool_2x2".into(),
            Box::new(AdaptiveMaxPool2d::new(2, 2)),
            vec![2, 2, 5, 5],
            Mode::Train,
        ),
        ("batchnorm2d".into(), Box::new(bn), vec![4, 3, 3, 3], Mode::Train),
        (
            "batchnorm2d_eval".into(),
            Box::new(bn_eval),
            vec![4, 3, 3, 3],
            Mode::Eval,
        ),
        (
            "linear".into(),
            Box::new(Linear::new(6, 4, &mut rng)?),
            vec![3, 6],
            Mode::Train,
        ),
        ("relu".into(), Box::new(Relu::new()), vec![3, 7], Mode::Train),
        (
            "softplus".into(),
            Box::new(Softplus::new()),
            vec![3, 7],
            Mode::Train,
        ),
        (
            "add_skip_identity".into(),
            Box::new(identity_residual),
            vec![2, 2, 4, 4],
            Mode::Train,
        ),
        (
            "add_skip_projection".into(),
            Box::new(residual),
            vec![2, 2, 5, 5],
            Mode::Train,
        ),
        (
            "scorenorm_softmax".into(),
            Box::new(ScoreNorm::new(NormalizerKind::Softmax)),
            vec![3, 5],
            Mode::Train,
        ),
        (
            "scorenorm_l2".into(),
            Box::new(ScoreNorm::new(NormalizerKind::L2SqrtExp)),
            vec![3, 5],
            Mode::Train,
        ),
        (
            "scorenorm_generic_l1".into(),
            Box::new(ScoreNorm::new(NormalizerKind::GenericL1(ScalarMap::EXP))),
            vec![3, 5],
            Mode::Train,
        ),
        (
            "scorenorm_generic_l2".into(),
            Box::new(ScoreNorm::new(NormalizerKind::GenericL2(ScalarMap::SQRT_EXP))),
            vec![3, 5],
            Mode::Train,
        ),
    ];
    Ok(cases)
}

/// Runs every check in `scope` and returns one report per target.
pub fn run_scope(scope: Scope, config: &GradCheckConfig) -> Result<Vec<GradReport>> {
    let mut rng = SeededRng::new(config.seed).split(0x696e_7075);
    let mut reports = Vec::new();
    match scope {
        Scope::Layers => {
            for (name, mut layer, shape, mode) in layer_cases(config.seed)? {
                let x = random_input(&shape, &mut rng)?;
                let mut target = LayerTarget {
                    layer: layer.as_mut(),
                    mode,
                };
                reports.push(check_gradients(&name, &mut target, &x, config)?);
            }
        }
        Scope::Head => {
            for norm in [NormalizerKind::L2SqrtExp, NormalizerKind::Softmax] {
                let mut head = ClassifierHead::<f64>::new(1, 3, 4, 5, norm, &mut rng)?;
                let x = random_input(&[4, 3, 5, 5], &mut rng)?;
                let mut target = LayerTarget {
                    layer: &mut head,
                    mode: Mode::Train,
                };
                let name = format!("head_{}", norm.name());
                reports.push(check_gradients(&name, &mut target, &x, config)?);
            }
        }
        Scope::ModelMini => {
            let mut model = Model::<f64>::build(
                &BackboneSpec::mini_resnet(),
                ClassifierMode::MultiHeads(NormalizerKind::L2SqrtExp),
                4,
                &mut rng,
            )?;
            let x = random_input(&[4, 3, 8, 8], &mut rng)?;
            let mut target = ModelTarget {
                model: &mut model,
                mode: Mode::Train,
            };
            reports.push(check_gradients("mini_resnet_multi_l2", &mut target, &x, config)?);
        }
    }
    Ok(reports)
}
