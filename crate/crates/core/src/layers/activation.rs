use std::hash::Hasher;

use super::{missing_cache, Layer, LayerCost, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `ln(1 + e^x)` as `max(x, 0) + ln(1 + e^-|x|)`, which never overflows and
/// stays strictly positive for every finite input.
pub fn softplus_scalar<T: Scalar>(x: T) -> T {
    let pos = if x > T::zero() { x } else { T::zero() };
    pos + (-x.abs()).exp().ln_1p()
}

fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(softplus_scalar)
}

fn elementwise_cost(input: &[usize]) -> LayerCost {
    LayerCost {
        out_shape: input.to_vec(),
        ops: input.iter().product::<usize>() as u64,
        ..Default::default()
    }
}

fn check_grad<T: Scalar>(cached: &Tensor<T>, grad_out: &Tensor<T>, kind: LayerKind) -> Result<()> {
    if cached.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "{} grad_out {:?} vs input {:?}",
            kind.name(),
            grad_out.shape(),
            cached.shape()
        )));
    }
    Ok(())
}

#[derive(Default)]
pub struct Relu<T: Scalar> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Relu
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.cache = Some(x.clone());
        Ok(relu(x))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| missing_cache(LayerKind::Relu))?;
        check_grad(&x, grad_out, LayerKind::Relu)?;
        let data = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect();
        Tensor::from_vec(x.shape(), data)
    }

    fn param_count(&self) -> usize {
        0
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        Ok(elementwise_cost(input))
    }

    fn fingerprint(&self, h: &mut dyn Hasher) {
        if let Some(x) = &self.cache {
            for &v in x.data() {
                h.write_u8(u8::from(v > T::zero()));
            }
        }
    }
}

#[derive(Default)]
pub struct Softplus<T: Scalar> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Softplus<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }
}

impl<T: Scalar> Layer<T> for Softplus<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Softplus
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.cache = Some(x.clone());
        Ok(softplus(x))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| missing_cache(LayerKind::Softplus))?;
        check_grad(&x, grad_out, LayerKind::Softplus)?;
        let data = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| g * logistic(v))
            .collect();
        Tensor::from_vec(x.shape(), data)
    }

    fn param_count(&self) -> usize {
        0
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        Ok(elementwise_cost(input))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::<f64>::from_vec(&[2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn softplus_closed_forms() {
        assert!((softplus_scalar(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus_scalar(100.0f64) - 100.0).abs() < 1e-10);
        assert!(softplus_scalar(-800.0f64) >= 0.0);
        assert!(softplus_scalar(-30.0f64) > 0.0);
        assert!(softplus_scalar(1e6f32).is_finite());
    }

    #[test]
    fn softplus_derivative_matches_differences() {
        let mut rng = SeededRng::new(11);
        let eps = 1e-5;
        for _ in 0..200 {
            let x = rng.uniform_range(-20.0, 20.0);
            let fd = (softplus_scalar(x + eps) - softplus_scalar(x - eps)) / (2.0 * eps);
            assert!((fd - logistic(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn relu_backward_masks() {
        let mut r = Relu::<f64>::new();
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.5, 2.0]).unwrap();
        r.forward(&x, Mode::Train).unwrap();
        let g = r.backward(&Tensor::full(&[3], 3.0).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 3.0, 3.0]);
        assert!(matches!(r.backward(&x), Err(Error::Contract(_))));
    }
}
