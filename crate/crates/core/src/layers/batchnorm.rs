use super::{
    missing_cache, Layer, LayerCost, LayerKind, Mode, NamedBuffers, NamedParams, Param,
};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

struct BnCache<T> {
    mode: Mode,
    /// Normalized input (train mode) or the raw input (eval mode).
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

/// Per-channel batch normalization over `(B, H, W)`.
///
/// Train mode normalizes with biased batch statistics and blends the
/// unbiased batch variance into the running estimate with weight
/// `momentum`. Eval mode uses the running statistics only.
pub struct BatchNorm2d<T: Scalar> {
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    gamma: Param<T>,
    beta: Param<T>,
    running_mean: Tensor<T>,
    running_var: Tensor<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Self::with_options(channels, BN_MOMENTUM, BN_EPS)
    }

    pub fn with_options(channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        Ok(Self {
            channels,
            momentum,
            eps,
            gamma: Param::new(Tensor::full(&[channels], T::one())?),
            beta: Param::new(Tensor::zeros(&[channels])?),
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], T::one())?,
            cache: None,
        })
    }

    pub fn set_affine(&mut self, gamma: &[f64], beta: &[f64]) -> Result<()> {
        if gamma.len() != self.channels || beta.len() != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm affine params need {} entries",
                self.channels
            )));
        }
        self.gamma.value = Tensor::from_f64(&[self.channels], gamma)?;
        self.beta.value = Tensor::from_f64(&[self.channels], beta)?;
        Ok(())
    }

    pub fn running_mean(&self) -> &Tensor<T> {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Tensor<T> {
        &self.running_var
    }

    fn dims(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        if x.rank() != 4 || x.dim(1) != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm expects [B,{},H,W], got {:?}",
                self.channels,
                x.shape()
            )));
        }
        Ok((x.dim(0), x.dim(2) * x.dim(3)))
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm2d
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (b, hw) = self.dims(x)?;
        let c = self.channels;
        let n = b * hw;
        let eps = T::lit(self.eps);
        let xd = x.data();
        let mut y = x.zeros_like();
        let mut xhat = x.zeros_like();
        let mut inv_std = vec![T::zero(); c];

        for ch in 0..c {
            let plane = |bi: usize| &xd[(bi * c + ch) * hw..][..hw];
            let (mean, istd) = match mode {
                Mode::Train => {
                    let mut sum = T::zero();
                    for bi in 0..b {
                        for &v in plane(bi) {
                            sum += v;
                        }
                    }
                    let mean = sum / T::lit(n as f64);
                    let mut sq = T::zero();
                    for bi in 0..b {
                        for &v in plane(bi) {
                            sq += (v - mean) * (v - mean);
                        }
                    }
                    let var = sq / T::lit(n as f64);
                    let unbiased = if n > 1 {
                        sq / T::lit((n - 1) as f64)
                    } else {
                        var
                    };
                    let m = T::lit(self.momentum);
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (T::one() - m) * *rm + m * mean;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (T::one() - m) * *rv + m * unbiased;
                    (mean, T::one() / (var + eps).sqrt())
                }
                Mode::Eval => (
                    self.running_mean.data()[ch],
                    T::one() / (self.running_var.data()[ch] + eps).sqrt(),
                ),
            };
            inv_std[ch] = istd;
            let (g, be) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                for k in 0..hw {
                    let xh = (xd[off + k] - mean) * istd;
                    xhat.data_mut()[off + k] = xh;
                    y.data_mut()[off + k] = g * xh + be;
                }
            }
        }
        self.cache = Some(BnCache {
            mode,
            xhat,
            inv_std,
        });
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| missing_cache(LayerKind::BatchNorm2d))?;
        if grad_out.shape() != cache.xhat.shape() {
            return Err(Error::Shape(format!(
                "batchnorm grad_out {:?} vs input {:?}",
                grad_out.shape(),
                cache.xhat.shape()
            )));
        }
        let (b, hw) = self.dims(grad_out)?;
        let c = self.channels;
        let n = T::lit((b * hw) as f64);
        let gd = grad_out.data();
        let xh = cache.xhat.data();
        let mut gx = grad_out.zeros_like();

        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                for k in 0..hw {
                    sum_g += gd[off + k];
                    sum_gx += gd[off + k] * xh[off + k];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_gx;
            self.beta.grad.data_mut()[ch] += sum_g;
            let gamma = self.gamma.value.data()[ch];
            let istd = cache.inv_std[ch];
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                for k in 0..hw {
                    gx.data_mut()[off + k] = match cache.mode {
                        Mode::Train => {
                            gamma * istd / n * (n * gd[off + k] - sum_g - xh[off + k] * sum_gx)
                        }
                        Mode::Eval => gamma * istd * gd[off + k],
                    };
                }
            }
        }
        Ok(gx)
    }

    fn named_params(&mut self) -> NamedParams<'_, T> {
        vec![
            ("gamma".to_string(), &mut self.gamma),
            ("beta".to_string(), &mut self.beta),
        ]
    }

    fn named_buffers(&mut self) -> NamedBuffers<'_, T> {
        vec![
            ("running_mean".to_string(), &mut self.running_mean),
            ("running_var".to_string(), &mut self.running_var),
        ]
    }

    fn param_count(&self) -> usize {
        2 * self.channels
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        if input.len() != 4 || input[1] != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm expects [B,{},H,W], got {input:?}",
                self.channels
            )));
        }
        Ok(LayerCost {
            out_shape: input.to_vec(),
            params: self.param_count(),
            macs: 0,
            ops: input.iter().product::<usize>() as u64,
        })
    }
}
