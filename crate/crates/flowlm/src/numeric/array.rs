//! Dense row-major arrays and the handful of kernels everything builds on.
//!
//! Shapes are explicit and checked; the only broadcasting anywhere is a
//! trailing-shape broadcast (e.g. adding a `[n]` bias row to an `[m, n]`
//! matrix). Anything else is a shape error, by design of the engine contract.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense array: positive extents, row-major data.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Array<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let n: usize = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "shape {:?} does not match data len {}", shape, data.len());
        Array {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(v: T) -> Self {
        Array {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows for a 2-d view: the product of all leading extents.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Trailing extent (row width for the 2-d view).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.data.len(), "reshape {:?} -> {:?}", self.shape, shape);
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of_f64(self.data.len() as f64)
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Mean squared difference over all elements.
    pub fn mse(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "mse shape mismatch");
        let n = T::of_f64(self.data.len() as f64);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / n
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op: op.to_string(),
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// `true` when `b` broadcasts over `a` by trailing-shape repetition.
pub fn broadcasts<T: Scalar>(a: &Array<T>, b: &Array<T>) -> bool {
    a.shape() == b.shape()
        || (b.shape().len() < a.shape().len() && a.shape().ends_with(b.shape()))
}

/// Elementwise binary op with trailing broadcast of `b`.
pub fn ew_broadcast<T: Scalar>(
    op: &str,
    a: &Array<T>,
    b: &Array<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Array<T>> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    if !broadcasts(a, b) {
        return Err(shape_err(op, a.shape(), b.shape()));
    }
    let chunk = b.len();
    let mut out = Vec::with_capacity(a.len());
    for block in a.data().chunks(chunk) {
        out.extend(block.iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
    }
    Ok(Array::from_vec(a.shape(), out))
}

/// Sum `g` (shaped like the broadcast output) down to the shape of `b`.
pub fn reduce_to<T: Scalar>(g: &Array<T>, bshape: &[usize]) -> Array<T> {
    if g.shape() == bshape {
        return g.clone();
    }
    let chunk: usize = bshape.iter().product();
    let mut acc = vec![T::zero(); chunk];
    for block in g.data().chunks(chunk) {
        for (a, &x) in acc.iter_mut().zip(block) {
            *a += x;
        }
    }
    Array::from_vec(bshape, acc)
}

/// C = A · B for 2-d views `[m, k] x [k, n]`.
pub fn matmul<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    let (m, k) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    if k != kb {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let mut c = Array::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for (l, &al) in arow.iter().enumerate() {
            let brow = &b.data[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + al * bv;
            }
        }
    }
    Ok(c)
}

/// C = A · Bᵀ for `[m, k] x [n, k]`.
pub fn matmul_nt<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    let (m, k) = (a.rows(), a.cols());
    let (n, kb) = (b.rows(), b.cols());
    if k != kb {
        return Err(shape_err("matmul_nt", a.shape(), b.shape()));
    }
    let mut c = Array::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = b.row(j);
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            *cv = acc;
        }
    }
    Ok(c)
}

/// C = Aᵀ · B for `[i, p] x [i, q]`.
pub fn matmul_tn<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    let (ia, p) = (a.rows(), a.cols());
    let (ib, q) = (b.rows(), b.cols());
    if ia != ib {
        return Err(shape_err("matmul_tn", a.shape(), b.shape()));
    }
    let mut c = Array::zeros(&[p, q]);
    for i in 0..ia {
        let arow = a.row(i);
        let brow = b.row(i);
        for (l, &al) in arow.iter().enumerate() {
            let crow = c.row_mut(l);
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + al * bv;
            }
        }
    }
    Ok(c)
}

/// Row-wise softmax, overflow-safe via max subtraction.
pub fn softmax_rows<T: Scalar>(a: &Array<T>) -> Array<T> {
    let mut out = a.clone();
    let rows = out.rows();
    for i in 0..rows {
        let row = out.row_mut(i);
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Row-wise log-sum-exp, overflow-safe.
pub fn logsumexp_row<T: Scalar>(row: &[T]) -> T {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&v| (v - mx).exp()).sum();
    mx + s.ln()
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = Array::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let v = Array::from_vec(&[2, 1], vec![3.0, 4.0]);
        let c = matmul(&eye, &v).unwrap();
        assert_eq!(c.data(), &[3.0, 4.0]);
    }

    #[test]
    fn add_identity() {
        let a = Array::from_vec(&[2], vec![1.0, 2.0]);
        let z = Array::zeros(&[2]);
        assert_eq!(a.add(&z).data(), &[1.0, 2.0]);
    }

    #[test]
    fn softmax_symmetry_and_row_sums() {
        let a = Array::from_vec(&[1, 3], vec![0.0f64, 0.0, 0.0]);
        let s = softmax_rows(&a);
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // Rows must sum to 1 within 1e-12 even for large logits.
        let b = Array::from_vec(&[2, 3], vec![700.0, -700.0, 0.0, 650.0, 649.0, -650.0]);
        let sb = softmax_rows(&b);
        for i in 0..2 {
            let sum: f64 = sb.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(sb.row(i).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn logsumexp_overflow_safe() {
        let row = [700.0f64, 700.0, 700.0];
        let l = logsumexp_row(&row);
        assert!((l - (700.0 + 3.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Array::<f64>::zeros(&[2, 3]);
        let b = Array::<f64>::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"));
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        let a = Array::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Array::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 1.0, 2.0, 3.0]);
        let c = matmul(&a, &b).unwrap();
        // A·B == A·(Bᵀ)ᵀ
        let mut bt = Array::zeros(&[2, 3]);
        for i in 0..3 {
            for j in 0..2 {
                bt.set(j, i, b.at(i, j));
            }
        }
        let c2 = matmul_nt(&a, &bt).unwrap();
        assert!(c.max_abs_diff(&c2) < 1e-15);
        let mut at = Array::zeros(&[3, 2]);
        for i in 0..2 {
            for j in 0..3 {
                at.set(j, i, a.at(i, j));
            }
        }
        let c3 = matmul_tn(&at, &b).unwrap();
        assert!(c.max_abs_diff(&c3) < 1e-15);
    }

    #[test]
    fn broadcast_bias_row() {
        let a = Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Array::from_vec(&[2], vec![10.0, 20.0]);
        let c = ew_broadcast("add", &a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.data(), &[11.0, 22.0, 13.0, 24.0]);
        let r = reduce_to(&c, &[2]);
        assert_eq!(r.data(), &[24.0, 46.0]);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[0.1, 2.0, -1.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
    }
}
