use std::hash::Hasher;

use super::{missing_cache, Layer, LayerCost, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

struct PoolCache {
    in_shape: Vec<usize>,
    /// Flat input index of the winner for each output element.
    argmax: Vec<usize>,
}

fn spatial<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "pooling expects [B,C,H,W], got {:?}",
            x.shape()
        )));
    }
    Ok((x.dim(0), x.dim(1), x.dim(2), x.dim(3)))
}

/// Max over a rectangular window; ties resolve to the lowest linear index.
#[allow(clippy::too_many_arguments)]
fn window_max<T: Scalar>(
    plane: &[T],
    w: usize,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
) -> (T, usize) {
    let mut best = plane[y0 * w + x0];
    let mut best_idx = y0 * w + x0;
    for yy in y0..y1 {
        for xx in x0..x1 {
            let v = plane[yy * w + xx];
            if v > best {
                best = v;
                best_idx = yy * w + xx;
            }
        }
    }
    (best, best_idx)
}

fn route_back<T: Scalar>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::Shape(format!(
            "pool grad_out has {} elements, expected {}",
            grad_out.len(),
            cache.argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(&cache.in_shape)?;
    let gd = gx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gd[idx] += g;
    }
    Ok(gx)
}

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
pub struct MaxPool2d {
    cache: Option<PoolCache>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self { cache: None }
    }
}

impl Default for MaxPool2d {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn kind(&self) -> LayerKind {
        LayerKind::MaxPool2x2
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (b, c, h, w) = spatial(x)?;
        if h < 2 || w < 2 {
            return Err(Error::Shape(format!(
                "maxpool2x2 needs spatial extents >= 2, got {h}x{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut argmax = Vec::with_capacity(b * c * ho * wo);
        for plane_idx in 0..b * c {
            let plane = &x.data()[plane_idx * h * w..][..h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let (v, idx) = window_max(plane, w, 2 * i, 2 * i + 2, 2 * j, 2 * j + 2);
                    out.push(v);
                    argmax.push(plane_idx * h * w + idx);
                }
            }
        }
        self.cache = Some(PoolCache {
            in_shape: x.shape().to_vec(),
            argmax,
        });
        Tensor::from_vec(&[b, c, ho, wo], out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| missing_cache(LayerKind::MaxPool2x2))?;
        route_back(&cache, grad_out)
    }

    fn param_count(&self) -> usize {
        0
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        if input.len() != 4 || input[2] < 2 || input[3] < 2 {
            return Err(Error::Shape(format!(
                "maxpool2x2 needs [B,C,H>=2,W>=2], got {input:?}"
            )));
        }
        let out_shape = vec![input[0], input[1], input[2] / 2, input[3] / 2];
        Ok(LayerCost {
            ops: out_shape.iter().product::<usize>() as u64,
            out_shape,
            ..Default::default()
        })
    }

    fn fingerprint(&self, h: &mut dyn Hasher) {
        if let Some(c) = &self.cache {
            for &i in &c.argmax {
                h.write_usize(i);
            }
        }
    }
}

/// Adaptive max pooling to a fixed output grid. Bin `i` along an axis of
/// length `n` covers `[floor(i*n/out), ceil((i+1)*n/out))`. With output
/// `(1, 1)` this is the per-channel global maximum.
pub struct AdaptiveMaxPool2d {
    pub out_h: usize,
    pub out_w: usize,
    cache: Option<PoolCache>,
}

impl AdaptiveMaxPool2d {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        assert!(out_h > 0 && out_w > 0, "adaptive pool output must be positive");
        Self {
            out_h,
            out_w,
            cache: None,
        }
    }

    pub fn global() -> Self {
        Self::new(1, 1)
    }
}

fn bin(i: usize, n: usize, out: usize) -> (usize, usize) {
    (i * n / out, ((i + 1) * n).div_ceil(out))
}

impl<T: Scalar> Layer<T> for AdaptiveMaxPool2d {
    fn kind(&self) -> LayerKind {
        LayerKind::AdaptiveMaxPool
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (b, c, h, w) = spatial(x)?;
        let (oh, ow) = (self.out_h, self.out_w);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane_idx in 0..b * c {
            let plane = &x.data()[plane_idx * h * w..][..h * w];
            for i in 0..oh {
                let (y0, y1) = bin(i, h, oh);
                for j in 0..ow {
                    let (x0, x1) = bin(j, w, ow);
                    let (v, idx) = window_max(plane, w, y0, y1, x0, x1);
                    out.push(v);
                    argmax.push(plane_idx * h * w + idx);
                }
            }
        }
        self.cache = Some(PoolCache {
            in_shape: x.shape().to_vec(),
            argmax,
        });
        Tensor::from_vec(&[b, c, oh, ow], out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| missing_cache(LayerKind::AdaptiveMaxPool))?;
        route_back(&cache, grad_out)
    }

    fn param_count(&self) -> usize {
        0
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        if input.len() != 4 {
            return Err(Error::Shape(format!(
                "adaptive pool needs [B,C,H,W], got {input:?}"
            )));
        }
        let out_shape = vec![input[0], input[1], self.out_h, self.out_w];
        Ok(LayerCost {
            ops: out_shape.iter().product::<usize>() as u64,
            out_shape,
            ..Default::default()
        })
    }

    fn fingerprint(&self, h: &mut dyn Hasher) {
        if let Some(c) = &self.cache {
            for &i in &c.argmax {
                h.write_usize(i);
            }
        }
    }
}
