use std::fmt::Debug;

use num_traits::Float;

/// Floating-point element type. Production weights are `f32`; `f64` is used
/// for numerical checks.
pub trait Scalar: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Panics if `data.len()` disagrees with `shape`.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.shape[self.shape.len() - 1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.shape[self.shape.len() - 1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }
}

/// `out[rows × n] = x[rows × k] · w[k × n] + b[n]`.
pub(crate) fn linear<T: Scalar>(x: &[T], rows: usize, w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let (k, n) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(x.len(), rows * k);
    let mut out = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        out.extend_from_slice(&b.data);
    }
    for r in 0..rows {
        let xr = &x[r * k..(r + 1) * k];
        let orow = &mut out[r * n..(r + 1) * n];
        for (i, &xv) in xr.iter().enumerate() {
            let wr = &w.data[i * n..(i + 1) * n];
            for (o, &wv) in orow.iter_mut().zip(wr) {
                *o = *o + xv * wv;
            }
        }
    }
    out
}

/// Accumulates `dw += xᵀ·dy`, `db += Σ dy` and returns `dx = dy·wᵀ`.
pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    rows: usize,
    w: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
) -> Vec<T> {
    let (k, n) = (w.shape[0], w.shape[1]);
    let mut dx = vec![T::zero(); rows * k];
    for r in 0..rows {
        let dyr = &dy[r * n..(r + 1) * n];
        for (d, &g) in db.data.iter_mut().zip(dyr) {
            *d = *d + g;
        }
        let xr = &x[r * k..(r + 1) * k];
        let dxr = &mut dx[r * k..(r + 1) * k];
        for i in 0..k {
            let wr = &w.data[i * n..(i + 1) * n];
            let mut acc = T::zero();
            for (&wv, &g) in wr.iter().zip(dyr) {
                acc = acc + wv * g;
            }
            dxr[i] = acc;
            let xv = xr[i];
            let dwr = &mut dw.data[i * n..(i + 1) * n];
            for (d, &g) in dwr.iter_mut().zip(dyr) {
                *d = *d + xv * g;
            }
        }
    }
    dx
}

pub(crate) fn add_assign<T: Scalar>(acc: &mut [T], other: &[T]) {
    for (a, &b) in acc.iter_mut().zip(other) {
        *a = *a + b;
    }
}

/// Numerically stable in-place softmax.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_hand_product() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(&[3], vec![0.5, 0.0, -0.5]);
        let y = linear(&[1.0, -1.0, 2.0, 0.5], 2, &w, &b);
        assert_eq!(y, vec![-2.5, -3.0, -3.5, 4.5, 6.5, 8.5]);
    }

    #[test]
    fn linear_backward_matches_hand_gradients() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]);
        let mut dw = Tensor::zeros(&[2, 2]);
        let mut db = Tensor::zeros(&[2]);
        let dx = linear_backward(&[1.0, 2.0], &[1.0, -1.0], 1, &w, &mut dw, &mut db);
        assert_eq!(dx, vec![-1.0, -1.0]);
        assert_eq!(dw.data(), &[1.0, -1.0, 2.0, -2.0]);
        assert_eq!(db.data(), &[1.0, -1.0]);
    }

    #[test]
    fn softmax_is_stable() {
        let mut row = [1000.0f32, 1000.0, -1e9];
        softmax_in_place(&mut row);
        assert_eq!(row, [0.5, 0.5, 0.0]);
    }
}
