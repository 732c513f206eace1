//! Softmax and scaled dot-product attention kernels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction. `-inf` entries get weight exactly 0.
pub fn softmax_rows<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    let (_, n) = a.dims2()?;
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(n) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        // Fully masked row: no admissible key. Leave zeros rather than NaN.
        row.iter_mut().for_each(|x| *x = S::zero());
        return;
    }
    let mut total = S::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// `softmax(q·kᵀ/√d)·v`.
pub fn attention<S: Scalar>(q: &Tensor<S>, k: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
    attention_masked(q, k, v, None)
}

/// Attention with an optional `Tq×Tk` admissibility mask. Masked-out pairs get
/// an additive `-inf` logit, so their weight is exactly zero.
pub fn attention_masked<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    allowed: Option<&[bool]>,
) -> Result<Tensor<S>> {
    let weights = attention_weights(q, k, allowed)?;
    let (tk, _) = v.dims2()?;
    if tk != k.dims2()?.0 {
        return Err(Error::dim("attention(k, v)", k.shape(), v.shape()));
    }
    weights.matmul(v)
}

/// The `Tq×Tk` attention probability matrix.
pub fn attention_weights<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    allowed: Option<&[bool]>,
) -> Result<Tensor<S>> {
    let (tq, d) = q.dims2()?;
    let (tk, dk) = k.dims2()?;
    if d != dk {
        return Err(Error::dim("attention(q, k)", q.shape(), k.shape()));
    }
    if let Some(mask) = allowed {
        if mask.len() != tq * tk {
            return Err(Error::dim("attention(mask)", &[tq, tk], &[mask.len()]));
        }
    }
    let inv_sqrt_d = S::one() / S::of_usize(d).sqrt();
    let mut logits = vec![S::zero(); tq * tk];
    for i in 0..tq {
        let qi = q.row(i);
        for j in 0..tk {
            let idx = i * tk + j;
            logits[idx] = match allowed {
                Some(m) if !m[idx] => S::neg_infinity(),
                _ => dot(qi, k.row(j)) * inv_sqrt_d,
            };
        }
    }
    let mut w = Tensor::new(vec![tq, tk], logits)?;
    for row in w.data_mut().chunks_mut(tk) {
        softmax_in_place(row);
    }
    Ok(w)
}

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_row() {
        let s = softmax_rows(&Tensor::<f64>::from_rows(&[vec![0.0, 0.0, 0.0]])).unwrap();
        for &x in s.data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let s = softmax_rows(&Tensor::<f64>::from_rows(&[vec![1000.0, 0.0]])).unwrap();
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-15);
        assert!(s.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_closed_form() {
        // exp(ln 2) / (exp(ln 2) + 1) = 2/3
        let s = softmax_rows(&Tensor::<f64>::from_rows(&[vec![std::f64::consts::LN_2, 0.0]])).unwrap();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn attention_single_key_returns_value_row() {
        let q = Tensor::<f64>::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]);
        let k = Tensor::from_rows(&[vec![1.0, 1.0]]);
        let v = Tensor::from_rows(&[vec![4.0, -2.0, 7.0]]);
        let out = attention(&q, &k, &v).unwrap();
        for i in 0..2 {
            assert_eq!(out.row(i), v.row(0));
        }
    }

    #[test]
    fn attention_identical_keys_average_values() {
        let q = Tensor::<f64>::from_rows(&[vec![0.3, -1.0]]);
        let k = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        let v = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![6.0]]);
        let out = attention(&q, &k, &v).unwrap();
        assert!((out.data()[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn attention_hand_example() {
        let q = Tensor::<f64>::from_rows(&[vec![1.0, 0.0]]);
        let k = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let v = Tensor::from_rows(&[vec![1.0], vec![0.0]]);
        let out = attention(&q, &k, &v).unwrap();
        let e = (1.0f64 / 2f64.sqrt()).exp();
        assert!((out.data()[0] - e / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn attention_rejects_width_mismatch() {
        let q = Tensor::<f64>::zeros(&[2, 3]);
        let k = Tensor::<f64>::zeros(&[2, 4]);
        let v = Tensor::<f64>::zeros(&[2, 1]);
        assert!(matches!(attention(&q, &k, &v), Err(Error::Dimension { .. })));
    }

    #[test]
    fn masked_pairs_get_exactly_zero_weight() {
        let q = Tensor::<f64>::from_rows(&[vec![1.0], vec![-1.0]]);
        let k = Tensor::from_rows(&[vec![5.0], vec![-5.0]]);
        let w = attention_weights(&q, &k, Some(&[true, false, false, true])).unwrap();
        assert_eq!(w.data(), &[1.0, 0.0, 0.0, 1.0]);
    }
}
