//! Score normalization: softmax `S(x)`, the square-root form `L(x) = sqrt(S(x))`,
//! generic L1/L2 normalizers over a positive scalar map, their derivatives,
//! the convergence predicate and cross-entropy.

use std::fmt;

use crate::error::{Error, Result};
use crate::layers::{missing_cache, Layer, LayerCost, LayerKind, Mode};
use crate::tensor::{argmax, Scalar, Tensor};

/// A finite score vector with at least two categories.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    values: Vec<f64>,
}

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Shape(format!(
                "score vector needs at least 2 categories, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("score {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Category count N.
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v + c).collect())
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        let n = self.n();
        if i >= n || j >= n {
            return Err(Error::Contract(format!(
                "index ({i}, {j}) out of range for N={n}"
            )));
        }
        if i == j {
            return Err(Error::Contract(
                "off-diagonal partial requested with i == j; use the full jacobian".into(),
            ));
        }
        Ok(())
    }
}

/// Exponentials shifted by the maximum, and their sum.
fn shifted_exp<T: Scalar>(x: &[T]) -> (Vec<T>, T) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = x.iter().map(|&v| (v - m).exp()).collect();
    let s = e.iter().copied().fold(T::zero(), |a, b| a + b);
    (e, s)
}

pub fn softmax_slice<T: Scalar>(x: &[T]) -> Vec<T> {
    let (e, s) = shifted_exp(x);
    e.into_iter().map(|v| v / s).collect()
}

pub fn l2_score_slice<T: Scalar>(x: &[T]) -> Vec<T> {
    let (e, s) = shifted_exp(x);
    e.into_iter().map(|v| (v / s).sqrt()).collect()
}

pub fn softmax(x: &ScoreVector) -> ScoreVector {
    ScoreVector {
        values: softmax_slice(&x.values),
    }
}

pub fn l2_score(x: &ScoreVector) -> ScoreVector {
    ScoreVector {
        values: l2_score_slice(&x.values),
    }
}

/// Full softmax Jacobian, `dS_i/dx_j = S_i (delta_ij - S_j)`, row-major `[i][j]`.
pub fn jacobian_softmax(x: &ScoreVector) -> Vec<Vec<f64>> {
    let s = softmax_slice(&x.values);
    (0..s.len())
        .map(|i| {
            (0..s.len())
                .map(|j| s[i] * (f64::from(u8::from(i == j)) - s[j]))
                .collect()
        })
        .collect()
}

/// Full Jacobian of `L`, `dL_i/dx_j = L_i (delta_ij - S_j) / 2`.
pub fn jacobian_l2_score(x: &ScoreVector) -> Vec<Vec<f64>> {
    let s = softmax_slice(&x.values);
    let l = l2_score_slice(&x.values);
    (0..s.len())
        .map(|i| {
            (0..s.len())
                .map(|j| 0.5 * l[i] * (f64::from(u8::from(i == j)) - s[j]))
                .collect()
        })
        .collect()
}

/// Off-diagonal softmax partial in its unsimplified product form:
/// `(1/sum e) * (-e_i / sum e) * e_j`, i.e. `-S_i S_j`.
pub fn softmax_partial(x: &ScoreVector, i: usize, j: usize) -> Result<f64> {
    x.check_pair(i, j)?;
    let (e, s) = shifted_exp(&x.values);
    Ok((1.0 / s) * (-e[i] / s) * e[j])
}

/// Off-diagonal partial of `L` in its unsimplified product form:
/// `(1/sqrt(sum e)) * (-sqrt(e_i) sqrt(e_j) / sum e) * sqrt(e_j) / 2`,
/// which reduces to `-L_i S_j / 2`.
pub fn l2score_partial(x: &ScoreVector, i: usize, j: usize) -> Result<f64> {
    x.check_pair(i, j)?;
    let (e, s) = shifted_exp(&x.values);
    Ok((1.0 / s.sqrt()) * (-e[i].sqrt() * e[j].sqrt() / s) * 0.5 * e[j].sqrt())
}

/// `sum_k e^{x_k} <= 4 e^{x_i}`, evaluated as `sum_k e^{x_k - x_i} <= 4`.
pub fn convergence_condition(x: &ScoreVector, i: usize) -> Result<bool> {
    let xi = *x
        .values
        .get(i)
        .ok_or_else(|| Error::Contract(format!("index {i} out of range for N={}", x.n())))?;
    let total: f64 = x.values.iter().map(|&v| (v - xi).exp()).sum();
    Ok(total <= 4.0)
}

/// `min_i x_i > ln(N / 4)`.
pub fn lower_bound_ok(x: &ScoreVector) -> bool {
    let bound = (x.n() as f64 / 4.0).ln();
    x.values.iter().all(|&v| v > bound)
}

/// `-ln p[label]` for a probability vector.
pub fn cross_entropy(probabilities: &ScoreVector, label: usize) -> Result<f64> {
    let p = probabilities
        .values
        .get(label)
        .ok_or_else(|| Error::Contract(format!("label {label} out of range for N={}", probabilities.n())))?;
    Ok(-p.ln())
}

/// Cross-entropy of `softmax(logits)` against `label` plus its gradient with
/// respect to the logits, `softmax(logits) - onehot(label)`.
pub fn cross_entropy_with_grad<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::Contract(format!(
            "label {label} out of range for N={}",
            logits.len()
        )));
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let (e, s) = shifted_exp(logits);
    let loss = s.ln() + m - logits[label];
    let mut grad: Vec<T> = e.into_iter().map(|v| v / s).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// A positive scalar map `f` with derivative `df`.
#[derive(Clone, Copy)]
pub struct ScalarMap {
    pub name: &'static str,
    pub f: fn(f64) -> f64,
    pub df: fn(f64) -> f64,
}

impl fmt::Debug for ScalarMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

impl PartialEq for ScalarMap {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl ScalarMap {
    pub const EXP: ScalarMap = ScalarMap {
        name: "exp",
        f: f64::exp,
        df: f64::exp,
    };
    pub const SQRT_EXP: ScalarMap = ScalarMap {
        name: "sqrt_exp",
        f: half_exp,
        df: half_exp_deriv,
    };
}

fn half_exp(x: f64) -> f64 {
    (0.5 * x).exp()
}

fn half_exp_deriv(x: f64) -> f64 {
    0.5 * (0.5 * x).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormalizerKind {
    /// L1 normalization of `e^x`.
    Softmax,
    /// L2 normalization of `sqrt(e^x)`.
    L2SqrtExp,
    /// `f(x_i) / sum_k f(x_k)`.
    GenericL1(ScalarMap),
    /// `f(x_i) / sqrt(sum_k f(x_k)^2)`.
    GenericL2(ScalarMap),
}

impl NormalizerKind {
    pub fn name(&self) -> String {
        match self {
            NormalizerKind::Softmax => "softmax".into(),
            NormalizerKind::L2SqrtExp => "l2".into(),
            NormalizerKind::GenericL1(m) => format!("l1({})", m.name),
            NormalizerKind::GenericL2(m) => format!("l2({})", m.name),
        }
    }

    /// Normalizes one row of scores.
    pub fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        match self {
            NormalizerKind::Softmax => Ok(softmax_slice(x)),
            NormalizerKind::L2SqrtExp => Ok(l2_score_slice(x)),
            NormalizerKind::GenericL1(m) | NormalizerKind::GenericL2(m) => {
                let fx = mapped(m, x)?;
                let denom = match self {
                    NormalizerKind::GenericL1(_) => fx.iter().sum::<f64>(),
                    _ => fx.iter().map(|v| v * v).sum::<f64>().sqrt(),
                };
                Ok(fx.iter().map(|v| T::lit(v / denom)).collect())
            }
        }
    }

    /// Vector-Jacobian product: given `x`, the output `y = apply(x)` and
    /// upstream `g`, returns `J^T g`.
    pub fn vjp<T: Scalar>(&self, x: &[T], y: &[T], g: &[T]) -> Result<Vec<T>> {
        let dot = y.iter().zip(g).fold(T::zero(), |a, (&yi, &gi)| a + yi * gi);
        match self {
            NormalizerKind::Softmax => Ok(y.iter().zip(g).map(|(&s, &gj)| s * (gj - dot)).collect()),
            NormalizerKind::L2SqrtExp => {
                let half = T::lit(0.5);
                Ok(y
                    .iter()
                    .zip(g)
                    .map(|(&l, &gj)| half * (gj * l - l * l * dot))
                    .collect())
            }
            NormalizerKind::GenericL1(m) | NormalizerKind::GenericL2(m) => {
                let fx = mapped(m, x)?;
                let l1 = matches!(self, NormalizerKind::GenericL1(_));
                let denom = if l1 {
                    fx.iter().sum::<f64>()
                } else {
                    fx.iter().map(|v| v * v).sum::<f64>().sqrt()
                };
                Ok((0..x.len())
                    .map(|j| {
                        let scale = T::lit((m.df)(x[j].to_f64().unwrap_or(f64::NAN)) / denom);
                        let correction = if l1 { dot } else { y[j] * dot };
                        scale * (g[j] - correction)
                    })
                    .collect())
            }
        }
    }
}

fn mapped<T: Scalar>(m: &ScalarMap, x: &[T]) -> Result<Vec<f64>> {
    x.iter()
        .map(|v| {
            let fx = (m.f)(v.to_f64().unwrap_or(f64::NAN));
            if fx > 0.0 && fx.is_finite() {
                Ok(fx)
            } else {
                Err(Error::Domain(format!(
                    "normalizer map {} is not positive at {v:?}",
                    m.name
                )))
            }
        })
        .collect()
}

/// Row-wise normalizer over `[B, N]` scores.
pub struct ScoreNorm<T: Scalar> {
    pub kind: NormalizerKind,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> ScoreNorm<T> {
    pub fn new(kind: NormalizerKind) -> Self {
        Self { kind, cache: None }
    }
}

fn rows<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    if x.rank() != 2 || x.dim(1) < 2 {
        return Err(Error::Shape(format!(
            "score normalizer expects [B, N>=2], got {:?}",
            x.shape()
        )));
    }
    Ok((x.dim(0), x.dim(1)))
}

impl<T: Scalar> Layer<T> for ScoreNorm<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::ScoreNorm
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (b, n) = rows(x)?;
        let mut out = Vec::with_capacity(b * n);
        for row in x.data().chunks_exact(n) {
            out.extend(self.kind.apply(row)?);
        }
        let y = Tensor::from_vec(&[b, n], out)?;
        self.cache = Some((x.clone(), y.clone()));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, y) = self
            .cache
            .take()
            .ok_or_else(|| missing_cache(LayerKind::ScoreNorm))?;
        if grad_out.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "score normalizer grad_out {:?} vs output {:?}",
                grad_out.shape(),
                y.shape()
            )));
        }
        let n = x.dim(1);
        let mut gx = Vec::with_capacity(x.len());
        for ((xr, yr), gr) in x
            .data()
            .chunks_exact(n)
            .zip(y.data().chunks_exact(n))
            .zip(grad_out.data().chunks_exact(n))
        {
            gx.extend(self.kind.vjp(xr, yr, gr)?);
        }
        Tensor::from_vec(x.shape(), gx)
    }

    fn param_count(&self) -> usize {
        0
    }

    fn cost(&self, input: &[usize]) -> Result<LayerCost> {
        if input.len() != 2 {
            return Err(Error::Shape(format!(
                "score normalizer expects [B, N], got {input:?}"
            )));
        }
        Ok(LayerCost {
            out_shape: input.to_vec(),
            ops: (input[0] * input[1]) as u64,
            ..Default::default()
        })
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn top_class(x: &ScoreVector) -> usize {
    argmax(&x.values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&sv(&[0.0, 0.0])).values(), &[0.5, 0.5]);
        let s = softmax(&sv(&[0.0, 3f64.ln()]));
        assert!((s.values()[0] - 0.25).abs() < 1e-15);
        assert!((s.values()[1] - 0.75).abs() < 1e-15);
        let s = softmax(&sv(&[1000.0, 0.0]));
        assert!((s.values()[0] - 1.0).abs() < 1e-15 && s.values()[1] < 1e-300);
    }

    #[test]
    fn l2_examples() {
        let l = l2_score(&sv(&[0.0, 0.0]));
        assert!((l.values()[0] - 0.5f64.sqrt()).abs() < 1e-15);
        let l = l2_score(&sv(&[0.0, 3f64.ln()]));
        assert!((l.values()[0] - 0.5).abs() < 1e-15);
        assert!((l.values()[1] - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn product_form_partials() {
        let x = sv(&[0.0, 0.0]);
        assert!((softmax_partial(&x, 0, 1).unwrap() + 0.25).abs() < 1e-15);
        assert!((l2score_partial(&x, 0, 1).unwrap() + 0.5 * 0.5f64.sqrt() * 0.5).abs() < 1e-15);
        assert!(matches!(softmax_partial(&x, 1, 1), Err(Error::Contract(_))));
        assert!(matches!(l2score_partial(&x, 0, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn condition_examples() {
        assert!(convergence_condition(&sv(&[0.0, 0.0]), 0).unwrap());
        assert!(!convergence_condition(&sv(&[0.0; 8]), 3).unwrap());
        assert!(!lower_bound_ok(&sv(&[0.0; 8])));
        assert!(lower_bound_ok(&sv(&[0.0; 3])));
    }

    #[test]
    fn cross_entropy_examples() {
        let p = sv(&[0.1; 10]);
        assert!((cross_entropy(&p, 7).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert_eq!(cross_entropy(&sv(&[1.0, 0.0]), 0).unwrap(), 0.0);
        assert!(cross_entropy(&p, 10).is_err());
        let (loss, grad) = cross_entropy_with_grad(&[0.0f64; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert_eq!(grad, vec![0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn generic_maps_reproduce_named_normalizers() {
        let x = [0.3f64, -1.2, 2.5, 0.0];
        let a = NormalizerKind::GenericL1(ScalarMap::EXP).apply(&x).unwrap();
        let b = NormalizerKind::Softmax.apply(&x).unwrap();
        let c = NormalizerKind::GenericL2(ScalarMap::SQRT_EXP).apply(&x).unwrap();
        let d = NormalizerKind::L2SqrtExp.apply(&x).unwrap();
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() < 1e-14);
            assert!((c[k] - d[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_degenerate_vectors() {
        assert!(ScoreVector::new(vec![1.0]).is_err());
        assert!(ScoreVector::new(vec![1.0, f64::NAN]).is_err());
    }
}
