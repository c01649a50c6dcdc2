use super::{he_uniform, missing_cache, Layer, LayerCost, LayerKind, Mode, NamedParams, Param};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// `y = x W + b` with `W: [F, N]`. Inputs of rank > 2 are flattened to
/// `[B, F]`, so a `[B, C, 1, 1]` pooled map feeds `C` features.
pub fn linear_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (f, n) = (weight.dim(0), weight.dim(1));
    let b = x.dim(0);
    if x.len() != b * f {
        return Err(Error::Shape(format!(
            "linear expects {f} features per row, input is {:?}",
            x.shape()
        )));
    }
    if bias.len() != n {
        return Err(Error::Shape(format!(
            "linear bias has {} entries for {n} outputs",
            bias.len()
        )));
    }
    let mut out = Vec::with_capacity(b * n);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    gemm(
        b,
        f,
        n,
        MatRef::new(x.data(), f, 1),
        MatRef::new(weight.data(), n, 1),
        T::one(),
        &mut out,
        n,
        1,
    );
    Tensor::from_vec(&[b, n], out)
}

pub struct Linear<T: Scalar> {
    pub in_features: usize,
    pub out_features: usize,
    weight: Param<T>,
    bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut SeededRng) -> Result<Self> {
        let weight = he_uniform(&[in_features, out_features], in_features, rng)?;
        Self::from_weights(weight, Tensor::zeros(&[out_features])?)
    }

    pub fn from_weights(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.dim(1)] {
            return Err(Error::Shape(format!(
                "linear weight {:?} / bias {:?} mismatch",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            in_features: weight.dim(0),
            out_features: weight.dim(1),
            weight: Param::new(weight),
            bias: Param::new(bias),
            cache: None,
        })
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Linear
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = linear_forward(x, &self.weight.value, &self.bias.value)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| missing_cache(LayerKind::Linear))?;
        let (f, n, b) = (self.in_features, self.out_features, x.dim(0));
        if grad_out.shape() != [b, n] {
            return Err(Error::Shape(format!(
                "linear grad_out {:?}, expected [{b}, {n}]",
                grad_out.shape()
            )));
        }
        // dW += x^T g
        gemm(
            f,
            b,
            n,
            MatRef::new(x.data(), 1, f),
            MatRef::new(grad_out.data(), n, 1),
            T::one(),
            self.weight.grad.data_mut(),
            n,
            1,
        );
        for row in grad_out.data().chunks_exact(n) {
            for (acc, &g) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *acc += g;
            }
        }
        // dx = g W^T
        let mut gx = x.zeros_like();
        gemm(
            b,
            n,
            f,
            MatRef::new(grad_out.data(), n, 1),
            MatRef::new(self.weight.value.data(), 1, n),
            T::zero(),
            gx.data_mut(),
            f,
            1,
        );
        Ok(gx)
    }

    fn named_params(&mut self) -> NamedParams<'_, T> {
        vec![
            ("weight".to_string(), &mut self.weight),
            ("bias".to_string(), &mut self.bias),
        ]
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        let feats: usize = input[1..].iter().product();
        if input.len() < 2 || feats != self.in_features {
            return Err(Error::Shape(format!(
                "linear expects {} features, input {input:?}",
                self.in_features
            )));
        }
        Ok(LayerCost {
            out_shape: vec![input[0], self.out_features],
            params: self.param_count(),
            macs: (input[0] * self.in_features * self.out_features) as u64,
            ops: 0,
        })
    }
}
