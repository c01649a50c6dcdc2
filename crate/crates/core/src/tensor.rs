//! Dense tensors and the elementwise/reduction kernels built on them.
//!
//! Axis order is `[batch, channel, height, width]`. Lower-rank tensors use the
//! leading extents, e.g. `[batch, features]` for linear-layer inputs. Data is
//! stored row-major in one contiguous buffer.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Element type of a tensor: `f32` for training, `f64` for verification.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// `C <- alpha * A * B + beta * C` on raw strided buffers.
    ///
    /// # Safety
    /// All pointers must be valid for every index reachable through the
    /// given extents and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn to_le_bytes_vec(data: &[Self]) -> Vec<u8>;
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self>;
}

/// Precision tag stored in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }
}

impl Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DType::F32 => write!(f, "f32"),
            DType::F64 => write!(f, "f64"),
        }
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn to_le_bytes_vec(data: &[f32]) -> Vec<u8> {
        data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<f32> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn to_le_bytes_vec(data: &[f64]) -> Vec<u8> {
        data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<f64> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect()
    }
}

/// Borrowed strided matrix operand for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rs: usize, cs: usize) -> Self {
        Self { data, rs, cs }
    }
}

fn max_offset(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    (rows - 1) * rs + (cols - 1) * cs
}

/// Bounds-checked `C <- A * B + beta * C` where A is `m x k` and B is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(max_offset(m, k, a.rs, a.cs) < a.data.len(), "gemm: A out of bounds");
    assert!(max_offset(k, n, b.rs, b.cs) < b.data.len(), "gemm: B out of bounds");
    assert!(max_offset(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
    // SAFETY: every reachable offset was checked against the slice lengths above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Random fill specification for [`Tensor::new`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RandomDist {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
}

/// How [`Tensor::new`] initialises its buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fill<T> {
    Value(T),
    Random { dist: RandomDist, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::Shape(format!(
            "tensor rank must be 1..=4, got {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], fill: Fill<T>) -> Result<Self> {
        match fill {
            Fill::Value(v) => Self::full(shape, v),
            Fill::Random { dist, seed } => {
                let mut rng = SeededRng::new(seed);
                Self::random(shape, dist, &mut rng)
            }
        }
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    /// Same shape as `self`, all zeros. Infallible because `self` is valid.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn random(shape: &[usize], dist: RandomDist, rng: &mut SeededRng) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = match dist {
            RandomDist::Uniform { low, high } => {
                if !(low < high) {
                    return Err(Error::Contract(format!(
                        "uniform range [{low}, {high}) is empty"
                    )));
                }
                let d = Uniform::new(low, high);
                (0..n).map(|_| T::lit(d.sample(rng))).collect()
            }
            RandomDist::Normal { mean, std } => {
                let d = Normal::new(mean, std)
                    .map_err(|e| Error::Contract(format!("normal distribution: {e}")))?;
                (0..n).map(|_| T::lit(d.sample(rng))).collect()
            }
        };
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    /// `self += other`, same shape required.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add_assign {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Extent of axis `i`, with axes beyond the rank reading as 1.
    pub fn dim(&self, i: usize) -> usize {
        self.shape.get(i).copied().unwrap_or(1)
    }
}

/// Elementwise operations. `Exp`, `Ln` and `Sqrt` are unary and take
/// [`Operand::None`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Max,
    Exp,
    Ln,
    Sqrt,
}

impl ElementwiseOp {
    pub fn is_unary(self) -> bool {
        matches!(self, ElementwiseOp::Exp | ElementwiseOp::Ln | ElementwiseOp::Sqrt)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Operand<'a, T> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
    None,
}

fn apply_binary<T: Scalar>(op: ElementwiseOp, a: T, b: T) -> T {
    match op {
        ElementwiseOp::Add => a + b,
        ElementwiseOp::Sub => a - b,
        ElementwiseOp::Mul => a * b,
        ElementwiseOp::Max => {
            if b > a {
                b
            } else {
                a
            }
        }
        _ => unreachable!("unary op in binary position"),
    }
}

/// Elementwise kernel. The right operand may be a tensor of equal shape, a
/// scalar, or a tensor broadcast along the batch axis: shape `[1, rest..]`
/// or `[rest..]` against `a` of shape `[B, rest..]`.
pub fn elementwise<T: Scalar>(
    op: ElementwiseOp,
    a: &Tensor<T>,
    b: Operand<'_, T>,
) -> Result<Tensor<T>> {
    if op.is_unary() {
        if !matches!(b, Operand::None) {
            return Err(Error::Contract(format!("{op:?} is unary")));
        }
        let data = match op {
            ElementwiseOp::Exp => a.data.iter().map(|v| v.exp()).collect(),
            ElementwiseOp::Ln => {
                if let Some(v) = a.data.iter().find(|v| **v < T::zero()) {
                    return Err(Error::Domain(format!("ln of negative value {v}")));
                }
                a.data.iter().map(|v| v.ln()).collect()
            }
            ElementwiseOp::Sqrt => {
                if let Some(v) = a.data.iter().find(|v| **v < T::zero()) {
                    return Err(Error::Domain(format!("sqrt of negative value {v}")));
                }
                a.data.iter().map(|v| v.sqrt()).collect()
            }
            _ => unreachable!(),
        };
        return Ok(Tensor {
            shape: a.shape.clone(),
            data,
        });
    }

    let data = match b {
        Operand::None => return Err(Error::Contract(format!("{op:?} needs a right operand"))),
        Operand::Scalar(s) => a.data.iter().map(|&v| apply_binary(op, v, s)).collect(),
        Operand::Tensor(bt) if bt.shape == a.shape => a
            .data
            .iter()
            .zip(&bt.data)
            .map(|(&x, &y)| apply_binary(op, x, y))
            .collect(),
        Operand::Tensor(bt) => {
            let rest = &a.shape[1..];
            let batch_broadcast = (bt.shape.len() == a.shape.len()
                && bt.shape[0] == 1
                && &bt.shape[1..] == rest)
                || (!rest.is_empty() && bt.shape.as_slice() == rest);
            if !batch_broadcast {
                return Err(Error::Shape(format!(
                    "cannot combine {:?} with {:?}",
                    a.shape, bt.shape
                )));
            }
            let inner = bt.data.len();
            a.data
                .iter()
                .enumerate()
                .map(|(i, &x)| apply_binary(op, x, bt.data[i % inner]))
                .collect()
        }
    };
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
    /// Linear index (row-major over the reduced axes) of the first maximum.
    ArgMax,
}

/// Reduce over `axes`, removing them from the shape. Reducing every axis
/// yields shape `[1]`. Accumulation walks the reduced elements in ascending
/// index order.
pub fn reduce<T: Scalar>(op: ReduceOp, a: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    if axes.is_empty() {
        return Err(Error::Contract("reduce needs at least one axis".into()));
    }
    let rank = a.rank();
    let mut reduced = vec![false; rank];
    for &ax in axes {
        if ax >= rank {
            return Err(Error::Contract(format!("axis {ax} out of range for rank {rank}")));
        }
        if reduced[ax] {
            return Err(Error::Contract(format!("axis {ax} listed twice")));
        }
        reduced[ax] = true;
    }

    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * a.shape[i + 1];
    }
    let kept: Vec<usize> = (0..rank).filter(|&i| !reduced[i]).collect();
    let red: Vec<usize> = (0..rank).filter(|&i| reduced[i]).collect();
    let out_shape: Vec<usize> = if kept.is_empty() {
        vec![1]
    } else {
        kept.iter().map(|&i| a.shape[i]).collect()
    };
    let out_len: usize = kept.iter().map(|&i| a.shape[i]).product();
    let red_len: usize = red.iter().map(|&i| a.shape[i]).product();

    let offset_of = |axes: &[usize], mut flat: usize| -> usize {
        let mut off = 0;
        for &ax in axes.iter().rev() {
            let ext = a.shape[ax];
            off += (flat % ext) * strides[ax];
            flat /= ext;
        }
        off
    };

    let mut out = Vec::with_capacity(out_len);
    for o in 0..out_len {
        let base = offset_of(&kept, o);
        match op {
            ReduceOp::Sum => {
                let mut acc = T::zero();
                for r in 0..red_len {
                    acc += a.data[base + offset_of(&red, r)];
                }
                out.push(acc);
            }
            ReduceOp::Max | ReduceOp::ArgMax => {
                let mut best = a.data[base];
                let mut best_idx = 0usize;
                for r in 1..red_len {
                    let v = a.data[base + offset_of(&red, r)];
                    if v > best {
                        best = v;
                        best_idx = r;
                    }
                }
                out.push(if op == ReduceOp::Max {
                    best
                } else {
                    T::lit(best_idx as f64)
                });
            }
        }
    }
    Tensor::from_vec(&out_shape, out)
}

/// Index of the first maximum of a slice; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_fill() {
        let t = Tensor::<f64>::new(&[1, 1, 2, 2], Fill::Value(0.0)).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ones_fill_counts_elements() {
        let t = Tensor::<f64>::new(&[2, 3, 4, 4], Fill::Value(1.0)).unwrap();
        assert_eq!(t.sum(), 96.0);
    }

    #[test]
    fn seeded_uniform_fill_is_repeatable() {
        let fill = Fill::Random {
            dist: RandomDist::Uniform { low: 0.0, high: 1.0 },
            seed: 7,
        };
        let a = Tensor::<f64>::new(&[1, 1, 1, 1], fill).unwrap();
        let b = Tensor::<f64>::new(&[1, 1, 1, 1], fill).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_extent_is_rejected() {
        assert!(matches!(
            Tensor::<f32>::zeros(&[2, 0, 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(Tensor::<f32>::zeros(&[]), Err(Error::Shape(_))));
    }

    #[test]
    fn exp_and_add() {
        let x = Tensor::<f64>::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let e = elementwise(ElementwiseOp::Exp, &x, Operand::None).unwrap();
        assert!((e.data()[0] - 1.0).abs() < 1e-12);
        assert!((e.data()[1] - std::f64::consts::E).abs() < 1e-12);

        let a = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let s = elementwise(ElementwiseOp::Add, &a, Operand::Tensor(&b)).unwrap();
        assert_eq!(s.data(), &[4.0, 6.0]);
    }

    #[test]
    fn sqrt_exp_identity() {
        let mut rng = SeededRng::new(1);
        let x = Tensor::<f64>::random(
            &[1000],
            RandomDist::Uniform {
                low: -10.0,
                high: 10.0,
            },
            &mut rng,
        )
        .unwrap();
        let lhs = elementwise(
            ElementwiseOp::Sqrt,
            &elementwise(ElementwiseOp::Exp, &x, Operand::None).unwrap(),
            Operand::None,
        )
        .unwrap();
        let half = elementwise(ElementwiseOp::Mul, &x, Operand::Scalar(0.5)).unwrap();
        let rhs = elementwise(ElementwiseOp::Exp, &half, Operand::None).unwrap();
        let max_rel = lhs
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        assert!(max_rel < 1e-12, "max rel err {max_rel}");
    }

    #[test]
    fn domain_and_shape_errors() {
        let neg = Tensor::<f64>::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        assert!(matches!(
            elementwise(ElementwiseOp::Ln, &neg, Operand::None),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            elementwise(ElementwiseOp::Sqrt, &neg, Operand::None),
            Err(Error::Domain(_))
        ));
        let other = Tensor::<f64>::zeros(&[3]).unwrap();
        assert!(matches!(
            elementwise(ElementwiseOp::Add, &neg, Operand::Tensor(&other)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn batch_broadcast() {
        let a = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let r = elementwise(ElementwiseOp::Add, &a, Operand::Tensor(&b)).unwrap();
        assert_eq!(r.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let b2 = Tensor::<f64>::from_vec(&[3], vec![10.0, 20.0, 30.0]).unwrap();
        let r2 = elementwise(ElementwiseOp::Add, &a, Operand::Tensor(&b2)).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn sum_and_argmax() {
        let a = Tensor::<f64>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(reduce(ReduceOp::Sum, &a, &[0]).unwrap().data(), &[10.0]);
        let b = Tensor::<f64>::from_vec(&[3], vec![0.1, 0.9, 0.3]).unwrap();
        assert_eq!(reduce(ReduceOp::ArgMax, &b, &[0]).unwrap().data(), &[1.0]);
    }

    #[test]
    fn spatial_max_matches_brute_force() {
        let mut rng = SeededRng::new(5);
        let x = Tensor::<f64>::random(
            &[1, 2, 3, 3],
            RandomDist::Normal { mean: 0.0, std: 1.0 },
            &mut rng,
        )
        .unwrap();
        let m = reduce(ReduceOp::Max, &x, &[2, 3]).unwrap();
        assert_eq!(m.shape(), &[1, 2]);
        for c in 0..2 {
            let brute = x.data()[c * 9..(c + 1) * 9]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(m.data()[c], brute);
        }
    }

    #[test]
    fn empty_axis_set_is_contract_error() {
        let a = Tensor::<f64>::zeros(&[2, 2]).unwrap();
        assert!(matches!(
            reduce(ReduceOp::Sum, &a, &[]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.4, 1.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 2.0, 0.5]), 1);
    }

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, MatRef::new(&a, 3, 1), MatRef::new(&b, 4, 1), 0.0, &mut c, 4, 1);
        for i in 0..2 {
            for j in 0..4 {
                let expect: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], expect);
            }
        }
    }

    fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..=4)
    }

    proptest! {
        #[test]
        fn reduce_shape_algebra(shape in shape_strategy(), mask in prop::collection::vec(any::<bool>(), 4)) {
            let t = Tensor::<f64>::full(&shape, 1.0).unwrap();
            let mut axes: Vec<usize> = (0..shape.len()).filter(|&i| mask[i]).collect();
            if axes.is_empty() {
                axes.push(0);
            }
            let r = reduce(ReduceOp::Sum, &t, &axes).unwrap();
            let reduced: usize = axes.iter().map(|&i| shape[i]).product();
            prop_assert_eq!(r.len(), t.len() / reduced);
            prop_assert!(r.data().iter().all(|&v| v == reduced as f64));
        }

        #[test]
        fn ops_are_bit_reproducible(seed in any::<u64>()) {
            let run = || {
                let mut rng = SeededRng::new(seed);
                let x = Tensor::<f32>::random(&[3, 4], RandomDist::Uniform { low: -10.0, high: 10.0 }, &mut rng).unwrap();
                let y = Tensor::<f32>::random(&[3, 4], RandomDist::Uniform { low: -10.0, high: 10.0 }, &mut rng).unwrap();
                let z = elementwise(ElementwiseOp::Mul, &x, Operand::Tensor(&y)).unwrap();
                let z = elementwise(ElementwiseOp::Max, &z, Operand::Scalar(0.5)).unwrap();
                reduce(ReduceOp::Sum, &z, &[1]).unwrap()
            };
            prop_assert_eq!(run().data().to_vec(), run().data().to_vec());
        }

        // Compositions restricted to operations that are well-conditioned on
        // positive data, so the f32/f64 gap reflects rounding only.
        #[test]
        fn f32_agrees_with_f64(
            seed in any::<u64>(),
            ops in prop::collection::vec(0u8..5, 1..=5),
        ) {
            let mut rng = SeededRng::new(seed);
            let x64 = Tensor::<f64>::random(&[16], RandomDist::Uniform { low: -10.0, high: 10.0 }, &mut rng).unwrap();
            let y64 = Tensor::<f64>::random(&[16], RandomDist::Uniform { low: -10.0, high: 10.0 }, &mut rng).unwrap();
            let x32: Tensor<f32> = x64.cast();
            let y32: Tensor<f32> = y64.cast();

            fn run<T: Scalar>(ops: &[u8], x: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
                let scale = elementwise(ElementwiseOp::Mul, x, Operand::Scalar(T::lit(0.1))).unwrap();
                let mut v = elementwise(ElementwiseOp::Exp, &scale, Operand::None).unwrap();
                let pos_y = elementwise(ElementwiseOp::Mul, y, Operand::Scalar(T::lit(0.1))).unwrap();
                let pos_y = elementwise(ElementwiseOp::Exp, &pos_y, Operand::None).unwrap();
                for &op in ops {
                    v = match op {
                        0 => elementwise(ElementwiseOp::Add, &v, Operand::Tensor(&pos_y)).unwrap(),
                        1 => elementwise(ElementwiseOp::Mul, &v, Operand::Tensor(&pos_y)).unwrap(),
                        2 => elementwise(ElementwiseOp::Max, &v, Operand::Tensor(&pos_y)).unwrap(),
                        3 => elementwise(ElementwiseOp::Sqrt, &v, Operand::None).unwrap(),
                        _ => {
                            let s = elementwise(ElementwiseOp::Sqrt, &v, Operand::None).unwrap();
                            elementwise(ElementwiseOp::Exp, &s.map(|t| t.min(T::lit(20.0))), Operand::None).unwrap()
                        }
                    };
                }
                v
            }

            let r64 = run(&ops, &x64, &y64);
            let r32 = run(&ops, &x32, &y32).to_f64();
            for (a, b) in r32.data().iter().zip(r64.data()) {
                let rel = (a - b).abs() / b.abs();
                prop_assert!(rel < 1e-4, "rel err {} for ops {:?}", rel, ops);
            }
        }
    }
}
