use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Elementwise `a + b`; shapes must match exactly. A skip path that changes
/// shape has to be projected before it gets here.
pub fn add_skip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "add_skip operands {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

fn check_nchw<T: Scalar>(t: &Tensor<T>) -> Result<()> {
    if t.rank() != 4 {
        return Err(Error::Shape(format!(
            "channel concat expects [B,C,H,W], got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Stacks `[B,C1,H,W]` and `[B,C2,H,W]` into `[B,C1+C2,H,W]`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_nchw(a)?;
    check_nchw(b)?;
    let (sa, sb) = (a.shape(), b.shape());
    if sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(Error::Shape(format!(
            "cannot concat {sa:?} with {sb:?} along channels"
        )));
    }
    let plane = sa[2] * sa[3];
    let (na, nb) = (sa[1] * plane, sb[1] * plane);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for bi in 0..sa[0] {
        out.extend_from_slice(&a.data()[bi * na..][..na]);
        out.extend_from_slice(&b.data()[bi * nb..][..nb]);
    }
    Tensor::from_vec(&[sa[0], sa[1] + sb[1], sa[2], sa[3]], out)
}

/// Inverse of [`concat_channels`]: the first `c1` channels and the rest.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, c1: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    check_nchw(x)?;
    let s = x.shape();
    if c1 == 0 || c1 >= s[1] {
        return Err(Error::Shape(format!(
            "cannot split {c1} channels off {:?}",
            s
        )));
    }
    let plane = s[2] * s[3];
    let (na, nb) = (c1 * plane, (s[1] - c1) * plane);
    let mut a = Vec::with_capacity(s[0] * na);
    let mut b = Vec::with_capacity(s[0] * nb);
    for row in x.data().chunks_exact(na + nb) {
        a.extend_from_slice(&row[..na]);
        b.extend_from_slice(&row[na..]);
    }
    Ok((
        Tensor::from_vec(&[s[0], c1, s[2], s[3]], a)?,
        Tensor::from_vec(&[s[0], s[1] - c1, s[2], s[3]], b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adding_zeros_is_identity() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        let z = x.zeros_like();
        assert_eq!(add_skip(&x, &z).unwrap(), x);
    }

    #[test]
    fn mismatched_skip_is_rejected() {
        let a = Tensor::<f64>::zeros(&[1, 2, 2, 2]).unwrap();
        let b = Tensor::<f64>::zeros(&[1, 3, 2, 2]).unwrap();
        assert!(matches!(add_skip(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor::<f64>::from_vec(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 2, 1, 2], (10..18).map(f64::from).collect()).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 1, 2]);
        assert_eq!(&c.data()[..6], &[1.0, 2.0, 10.0, 11.0, 12.0, 13.0]);
        let (a2, b2) = split_channels(&c, 1).unwrap();
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }
}
