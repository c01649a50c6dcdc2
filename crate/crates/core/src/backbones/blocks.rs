use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::layers::{
    add_skip, concat_channels, missing_cache, split_channels, Layer, LayerCost, LayerKind, Mode,
    NamedBuffers, NamedParams, Relu, Sequential,
};
use crate::tensor::{Scalar, Tensor};

fn prefixed<'a, I, V>(prefix: &str, items: I) -> impl Iterator<Item = (String, V)> + 'a
where
    I: IntoIterator<Item = (String, V)> + 'a,
{
    let prefix = prefix.to_string();
    items
        .into_iter()
        .map(move |(n, v)| (format!("{prefix}.{n}"), v))
}

/// `relu(main(x) + skip(x))`, where `skip` is the identity or a projection.
pub struct ResidualBlock<T: Scalar> {
    main: Sequential<T>,
    projection: Option<Sequential<T>>,
    out_relu: Relu<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(main: Sequential<T>, projection: Option<Sequential<T>>) -> Self {
        Self {
            main,
            projection,
            out_relu: Relu::new(),
        }
    }
}

impl<T: Scalar> Layer<T> for ResidualBlock<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::AddSkip
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let a = self.main.forward(x, mode).map_err(|e| e.within("main"))?;
        let b = match &mut self.projection {
            Some(p) => p.forward(x, mode).map_err(|e| e.within("proj"))?,
            None => x.clone(),
        };
        let sum = add_skip(&a, &b)?;
        self.out_relu.forward(&sum, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.out_relu.backward(grad_out)?;
        let mut gx = self.main.backward(&g).map_err(|e| e.within("main"))?;
        let gskip = match &mut self.projection {
            Some(p) => p.backward(&g).map_err(|e| e.within("proj"))?,
            None => g,
        };
        gx.add_assign(&gskip)?;
        Ok(gx)
    }

    fn named_params(&mut self) -> NamedParams<'_, T> {
        let mut out: NamedParams<'_, T> = prefixed("main", self.main.named_params()).collect();
        if let Some(p) = &mut self.projection {
            out.extend(prefixed("proj", p.named_params()));
        }
        out
    }

    fn named_buffers(&mut self) -> NamedBuffers<'_, T> {
        let mut out: NamedBuffers<'_, T> = prefixed("main", self.main.named_buffers()).collect();
        if let Some(p) = &mut self.projection {
            out.extend(prefixed("proj", p.named_buffers()));
        }
        out
    }

    fn param_count(&self) -> usize {
        self.main.param_count() + self.projection.as_ref().map_or(0, |p| p.param_count())
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        let mut total = self.main.cost(input).map_err(|e| e.within("main"))?;
        if let Some(p) = &self.projection {
            let pc = p.cost(input).map_err(|e| e.within("proj"))?;
            if pc.out_shape != total.out_shape {
                return Err(Error::Shape(format!(
                    "projection gives {:?}, main path {:?}",
                    pc.out_shape, total.out_shape
                )));
            }
            total.params += pc.params;
            total.macs += pc.macs;
            total.ops += pc.ops;
        } else if total.out_shape != input {
            return Err(Error::Shape(format!(
                "identity skip {input:?} cannot join main path {:?}",
                total.out_shape
            )));
        }
        // skip addition plus the output relu
        total.ops += 2 * total.out_shape.iter().product::<usize>() as u64;
        Ok(total)
    }

    fn fingerprint(&self, h: &mut dyn Hasher) {
        self.main.fingerprint(h);
        if let Some(p) = &self.projection {
            p.fingerprint(h);
        }
        self.out_relu.fingerprint(h);
    }

    fn sublayers(&self) -> Vec<(String, &dyn Layer<T>)> {
        let mut out: Vec<(String, &dyn Layer<T>)> = vec![("main".into(), &self.main)];
        if let Some(p) = &self.projection {
            out.push(("proj".into(), p));
        }
        out.push(("relu".into(), &self.out_relu));
        out
    }
}

/// Dense connectivity: `concat(x, inner(x))` along channels.
pub struct DenseLayer<T: Scalar> {
    inner: Sequential<T>,
    in_channels: Option<usize>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(inner: Sequential<T>) -> Self {
        Self {
            inner,
            in_channels: None,
        }
    }
}

impl<T: Scalar> Layer<T> for DenseLayer<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Composite
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.inner.forward(x, mode)?;
        self.in_channels = Some(x.dim(1));
        concat_channels(x, &y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self
            .in_channels
            .take()
            .ok_or_else(|| missing_cache(LayerKind::Composite))?;
        let (mut gx, gy) = split_channels(grad_out, c)?;
        gx.add_assign(&self.inner.backward(&gy)?)?;
        Ok(gx)
    }

    fn named_params(&mut self) -> NamedParams<'_, T> {
        self.inner.named_params()
    }

    fn named_buffers(&mut self) -> NamedBuffers<'_, T> {
        self.inner.named_buffers()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        let mut c = self.inner.cost(input)?;
        if c.out_shape.len() != 4 || c.out_shape[2..] != input[2..] {
            return Err(Error::Shape(format!(
                "dense layer output {:?} cannot be concatenated to {input:?}",
                c.out_shape
            )));
        }
        c.out_shape[1] += input[1];
        Ok(c)
    }

    fn fingerprint(&self, h: &mut dyn Hasher) {
        self.inner.fingerprint(h)
    }

    fn sublayers(&self) -> Vec<(String, &dyn Layer<T>)> {
        self.inner.sublayers()
    }
}
