//! Scaled dot-product attention.

use super::tensor::{softmax_in_place, Scalar, Tensor};
use super::ModelError;

/// Additive bias placed on masked logits before the softmax.
const MASK_BIAS: f64 = -1e9;

/// Attention over row-major buffers. Returns `(output [nq × dv], weights [nq × nk])`.
///
/// Masked key positions get weight exactly zero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    nq: usize,
    nk: usize,
    dk: usize,
    dv: usize,
    mask: Option<&[u8]>,
) -> (Vec<T>, Vec<T>) {
    let scale = T::one() / T::from_f64(dk as f64).sqrt();
    let bias = T::from_f64(MASK_BIAS);
    let mut weights = vec![T::zero(); nq * nk];
    for i in 0..nq {
        let qi = &q[i * dk..(i + 1) * dk];
        let row = &mut weights[i * nk..(i + 1) * nk];
        for (j, w) in row.iter_mut().enumerate() {
            let kj = &k[j * dk..(j + 1) * dk];
            let dot: T = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum();
            *w = dot * scale;
            if mask.is_some_and(|m| m[j] == 0) {
                *w = *w + bias;
            }
        }
        softmax_in_place(row);
        if let Some(m) = mask {
            for (w, &keep) in row.iter_mut().zip(m) {
                if keep == 0 {
                    *w = T::zero();
                }
            }
        }
    }
    let mut out = vec![T::zero(); nq * dv];
    for i in 0..nq {
        let orow = &mut out[i * dv..(i + 1) * dv];
        for j in 0..nk {
            let w = weights[i * nk + j];
            if w == T::zero() {
                continue;
            }
            for (o, &vv) in orow.iter_mut().zip(&v[j * dv..(j + 1) * dv]) {
                *o = *o + w * vv;
            }
        }
    }
    (out, weights)
}

/// Gradients of [`attend`] without a mask. Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    weights: &[T],
    dout: &[T],
    n: usize,
    dk: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let scale = T::one() / T::from_f64(dk as f64).sqrt();
    let mut dq = vec![T::zero(); n * dk];
    let mut dkk = vec![T::zero(); n * dk];
    let mut dv = vec![T::zero(); n * dk];
    let mut dp = vec![T::zero(); n];
    for i in 0..n {
        let w = &weights[i * n..(i + 1) * n];
        let go = &dout[i * dk..(i + 1) * dk];
        // dV += wᵀ·dout, dP = dout·Vᵀ
        for j in 0..n {
            let vj = &v[j * dk..(j + 1) * dk];
            dp[j] = go.iter().zip(vj).map(|(&a, &b)| a * b).sum();
            let wij = w[j];
            for (d, &g) in dv[j * dk..(j + 1) * dk].iter_mut().zip(go) {
                *d = *d + wij * g;
            }
        }
        let dot: T = w.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
        let qi = &q[i * dk..(i + 1) * dk];
        for j in 0..n {
            let ds = w[j] * (dp[j] - dot) * scale;
            if ds == T::zero() {
                continue;
            }
            let kj = &k[j * dk..(j + 1) * dk];
            for (d, &kv) in dq[i * dk..(i + 1) * dk].iter_mut().zip(kj) {
                *d = *d + ds * kv;
            }
            for (d, &qv) in dkk[j * dk..(j + 1) * dk].iter_mut().zip(qi) {
                *d = *d + ds * qv;
            }
        }
    }
    (dq, dkk, dv)
}

fn check_inputs<T: Scalar>(
    queries: &Tensor<T>,
    keys: &Tensor<T>,
    values: &Tensor<T>,
    mask: &[u8],
) -> Result<(), ModelError> {
    let two_d = |t: &Tensor<T>| t.shape().len() == 2;
    if !(two_d(queries) && two_d(keys) && two_d(values))
        || queries.shape()[1] != keys.shape()[1]
        || keys.shape()[0] != values.shape()[0]
        || mask.len() != keys.shape()[0]
    {
        return Err(ModelError::Shape(format!(
            "attention inputs q{:?} k{:?} v{:?} mask[{}]",
            queries.shape(),
            keys.shape(),
            values.shape(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m != 0) {
        return Err(ModelError::AllMasked);
    }
    Ok(())
}

/// `softmax(Q·Kᵀ/√d_k)·V` where positions with `mask == 0` receive zero weight.
pub fn scaled_dot_attention<T: Scalar>(
    queries: &Tensor<T>,
    keys: &Tensor<T>,
    values: &Tensor<T>,
    mask: &[u8],
) -> Result<Tensor<T>, ModelError> {
    attention_with_weights(queries, keys, values, mask).map(|(out, _)| out)
}

/// Like [`scaled_dot_attention`] but also returns the weight matrix.
pub fn attention_with_weights<T: Scalar>(
    queries: &Tensor<T>,
    keys: &Tensor<T>,
    values: &Tensor<T>,
    mask: &[u8],
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    check_inputs(queries, keys, values, mask)?;
    let (nq, dk) = (queries.shape()[0], queries.shape()[1]);
    let (nk, dv) = (keys.shape()[0], values.shape()[1]);
    let (out, w) = attend(queries.data(), keys.data(), values.data(), nq, nk, dk, dv, Some(mask));
    Ok((Tensor::from_vec(&[nq, dv], out), Tensor::from_vec(&[nq, nk], w)))
}
