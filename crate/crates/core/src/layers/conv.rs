//! 2-D convolution via im2col + GEMM.
//!
//! Cross-correlation convention: the kernel is not flipped, so
//! `y[b,o,i,j] = sum_{c,u,v} w[o,c,u,v] * x[b,c,i*s+u-p,j*s+v-p]`
//! with zero padding outside the input.

use super::{he_uniform, missing_cache, Layer, LayerCost, LayerKind, Mode, NamedParams, Param};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Upper bound on im2col buffer elements; larger batches are processed in chunks.
const MAX_COL_ELEMS: usize = 1 << 22;

pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Contract("conv stride must be positive".into()));
    }
    if input + 2 * pad < kernel {
        return Err(Error::Shape(format!(
            "input extent {input} with padding {pad} is smaller than kernel {kernel}"
        )));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        if x.rank() != 4 {
            return Err(Error::Shape(format!(
                "conv input must be [B,C,H,W], got {:?}",
                x.shape()
            )));
        }
        let ws = weight.shape();
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::Shape(format!(
                "conv weight must be [Cout,Cin,k,k], got {ws:?}"
            )));
        }
        let (batch, cin, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if ws[1] != cin {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {cin}",
                ws[1]
            )));
        }
        let k = ws[2];
        let ho = conv_output_extent(h, k, stride, pad)?;
        let wo = conv_output_extent(w, k, stride, pad)?;
        Ok(Self {
            batch,
            cin,
            h,
            w,
            cout: ws[0],
            k,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn kdim(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn chunk(&self) -> usize {
        (MAX_COL_ELEMS / (self.kdim() * self.out_pixels()).max(1)).clamp(1, self.batch)
    }

    /// Fill `col` (`kdim x nb*Ho*Wo`, row-major) for batch items `b0..b0+nb`.
    fn im2col<T: Scalar>(&self, x: &[T], b0: usize, nb: usize, col: &mut [T]) {
        let (k, ho, wo, h, w) = (self.k, self.ho, self.wo, self.h, self.w);
        let ncols = nb * ho * wo;
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst_row = &mut col[row * ncols..(row + 1) * ncols];
                    for bi in 0..nb {
                        let src = &x[((b0 + bi) * self.cin + ci) * h * w..][..h * w];
                        for oy in 0..ho {
                            let dst = &mut dst_row[(bi * ho + oy) * wo..][..wo];
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                dst.iter_mut().for_each(|v| *v = T::zero());
                                continue;
                            }
                            let src_row = &src[iy as usize * w..][..w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                *d = if ix < 0 || ix >= w as isize {
                                    T::zero()
                                } else {
                                    src_row[ix as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `col` back into the input-shaped buffer `gx`.
    fn col2im<T: Scalar>(&self, col: &[T], b0: usize, nb: usize, gx: &mut [T]) {
        let (k, ho, wo, h, w) = (self.k, self.ho, self.wo, self.h, self.w);
        let ncols = nb * ho * wo;
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src_row = &col[row * ncols..(row + 1) * ncols];
                    for bi in 0..nb {
                        let dst = &mut gx[((b0 + bi) * self.cin + ci) * h * w..][..h * w];
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &src_row[(bi * ho + oy) * wo..][..wo];
                            let dst_row = &mut dst[iy as usize * w..][..w];
                            for (ox, &s) in src.iter().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst_row[ix as usize] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward pass. `weight` is `[Cout, Cin, k, k]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x, weight, stride, pad)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(Error::Shape(format!(
                "conv bias has {} entries for {} output channels",
                b.len(),
                g.cout
            )));
        }
    }
    let mut y = Tensor::zeros(&[g.batch, g.cout, g.ho, g.wo])?;
    let (kdim, npix) = (g.kdim(), g.out_pixels());
    let chunk = g.chunk();
    let mut col = vec![T::zero(); kdim * chunk * npix];
    let mut tmp = vec![T::zero(); g.cout * chunk * npix];
    let xd = x.data();
    let yd = y.data_mut();

    let mut b0 = 0;
    while b0 < g.batch {
        let nb = chunk.min(g.batch - b0);
        let ncols = nb * npix;
        g.im2col(xd, b0, nb, &mut col[..kdim * ncols]);
        gemm(
            g.cout,
            kdim,
            ncols,
            MatRef::new(weight.data(), kdim, 1),
            MatRef::new(&col[..kdim * ncols], ncols, 1),
            T::zero(),
            &mut tmp[..g.cout * ncols],
            ncols,
            1,
        );
        for bi in 0..nb {
            for co in 0..g.cout {
                let b = bias.map_or(T::zero(), |b| b.data()[co]);
                let src = &tmp[co * ncols + bi * npix..][..npix];
                let dst = &mut yd[((b0 + bi) * g.cout + co) * npix..][..npix];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + b;
                }
            }
        }
        b0 += nb;
    }
    Ok(y)
}

/// Gradients of a convolution: `(grad_x, grad_weight, grad_bias)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    with_bias: bool,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let g = Geometry::new(x, weight, stride, pad)?;
    if grad_out.shape() != [g.batch, g.cout, g.ho, g.wo] {
        return Err(Error::Shape(format!(
            "conv grad_out {:?} does not match output [{}, {}, {}, {}]",
            grad_out.shape(),
            g.batch,
            g.cout,
            g.ho,
            g.wo
        )));
    }
    let (kdim, npix) = (g.kdim(), g.out_pixels());
    let chunk = g.chunk();
    let mut gx = x.zeros_like();
    let mut gw = weight.zeros_like();
    let mut gb = if with_bias {
        Some(Tensor::zeros(&[g.cout])?)
    } else {
        None
    };
    let mut col = vec![T::zero(); kdim * chunk * npix];
    let mut gmat = vec![T::zero(); g.cout * chunk * npix];
    let god = grad_out.data();

    let mut b0 = 0;
    while b0 < g.batch {
        let nb = chunk.min(g.batch - b0);
        let ncols = nb * npix;
        for bi in 0..nb {
            for co in 0..g.cout {
                let src = &god[((b0 + bi) * g.cout + co) * npix..][..npix];
                gmat[co * ncols + bi * npix..][..npix].copy_from_slice(src);
            }
        }
        if let Some(gb) = gb.as_mut() {
            for (co, acc) in gb.data_mut().iter_mut().enumerate() {
                for &v in &gmat[co * ncols..(co + 1) * ncols] {
                    *acc += v;
                }
            }
        }
        g.im2col(x.data(), b0, nb, &mut col[..kdim * ncols]);
        // grad_w += G * col^T
        gemm(
            g.cout,
            ncols,
            kdim,
            MatRef::new(&gmat[..g.cout * ncols], ncols, 1),
            MatRef::new(&col[..kdim * ncols], 1, ncols),
            T::one(),
            gw.data_mut(),
            kdim,
            1,
        );
        // grad_col = W^T * G
        gemm(
            kdim,
            g.cout,
            ncols,
            MatRef::new(weight.data(), 1, kdim),
            MatRef::new(&gmat[..g.cout * ncols], ncols, 1),
            T::zero(),
            &mut col[..kdim * ncols],
            ncols,
            1,
        );
        g.col2im(&col[..kdim * ncols], b0, nb, gx.data_mut());
        b0 += nb;
    }
    Ok((gx, gw, gb))
}

/// Convolution layer with square `1x1` or `3x3` kernels.
pub struct Conv2d<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    weight: Param<T>,
    bias: Option<Param<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-uniform weights, zero bias when `bias` is set.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if !matches!(kernel, 1 | 3) {
            return Err(Error::Contract(format!("kernel {kernel} not in {{1, 3}}")));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Shape("conv channels must be positive".into()));
        }
        let weight = he_uniform(
            &[out_channels, in_channels, kernel, kernel],
            in_channels * kernel * kernel,
            rng,
        )?;
        let bias = if bias {
            Some(Tensor::zeros(&[out_channels])?)
        } else {
            None
        };
        Self::from_weights(weight, bias, stride, pad)
    }

    pub fn from_weights(
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let ws = weight.shape().to_vec();
        if ws.len() != 4 || ws[2] != ws[3] || !matches!(ws[2], 1 | 3) {
            return Err(Error::Shape(format!(
                "conv weight must be [Cout,Cin,k,k] with k in {{1,3}}, got {ws:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Contract("conv stride must be positive".into()));
        }
        if let Some(b) = &bias {
            if b.shape() != [ws[0]] {
                return Err(Error::Shape(format!(
                    "conv bias shape {:?} for {} channels",
                    b.shape(),
                    ws[0]
                )));
            }
        }
        Ok(Self {
            in_channels: ws[1],
            out_channels: ws[0],
            kernel: ws[2],
            stride,
            pad,
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            cache: None,
        })
    }

    pub fn weight(&self) -> &Param<T> {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Param<T>> {
        self.bias.as_ref()
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn kind(&self) -> LayerKind {
        if self.kernel == 1 {
            LayerKind::Conv1x1
        } else {
            LayerKind::Conv3x3
        }
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = conv2d_forward(
            x,
            &self.weight.value,
            self.bias.as_ref().map(|b| &b.value),
            self.stride,
            self.pad,
        )?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| missing_cache(self.kind()))?;
        let (gx, gw, gb) = conv2d_backward(
            &x,
            &self.weight.value,
            grad_out,
            self.stride,
            self.pad,
            self.bias.is_some(),
        )?;
        self.weight.grad.add_assign(&gw)?;
        if let (Some(b), Some(gb)) = (self.bias.as_mut(), gb) {
            b.grad.add_assign(&gb)?;
        }
        Ok(gx)
    }

    fn named_params(&mut self) -> NamedParams<'_, T> {
        let mut out = vec![("weight".to_string(), &mut self.weight)];
        if let Some(b) = self.bias.as_mut() {
            out.push(("bias".to_string(), b));
        }
        out
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        if input.len() != 4 || input[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects [B,{},H,W], got {input:?}",
                self.in_channels
            )));
        }
        let ho = conv_output_extent(input[2], self.kernel, self.stride, self.pad)?;
        let wo = conv_output_extent(input[3], self.kernel, self.stride, self.pad)?;
        let macs = (input[0] * self.out_channels * ho * wo * self.in_channels * self.kernel * self.kernel)
            as u64;
        Ok(LayerCost {
            out_shape: vec![input[0], self.out_channels, ho, wo],
            params: self.param_count(),
            macs,
            ops: 0,
        })
    }
}
