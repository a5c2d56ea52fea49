//! Dense row-major tensors.
//!
//! [`Tensor`] is the one numeric carrier used across the crate: `f64` data in a flat
//! `Vec`, addressed row-major by an explicit shape. There is no view or
//! broadcasting machinery; modules that need tight loops index the flat slice
//! directly and own their offset arithmetic. The invariant maintained by every
//! constructor and mutator is `data.len() == shape.iter().product()`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// All-zero tensor of the given shape.
    #[must_use]
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    /// Constant-filled tensor of the given shape.
    #[must_use]
    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    /// Wraps a flat buffer, checking that the element count matches.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::shape(format!(
                "buffer holds {} values, shape {shape:?} needs {expect}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Builds a tensor by evaluating `f` at each flat index.
    #[must_use]
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(f).collect() }
    }

    /// Like [`Tensor::from_fn`] but hands the closure the full multi-index
    /// instead of the flat offset.
    pub fn from_fn_idx(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Tensor { shape: shape.to_vec(), data }
    }

    #[must_use]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[must_use]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total element count.
    #[must_use]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[must_use]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Consumes the tensor, returning the flat buffer.
    #[must_use]
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of a multi-index. Debug-checked against the shape.
    #[must_use]
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&k, &dim)) in idx.iter().zip(&self.shape).enumerate() {
            debug_assert!(k < dim, "index {k} out of range for axis {i} (len {dim})");
            off = off * dim + k;
        }
        off
    }

    #[must_use]
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} values) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    /// Element-wise map into a new tensor.
    #[must_use]
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Element-wise combination of two same-shape tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "zip of {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Adds `scale * other` in place. Shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "accumulate {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    #[must_use]
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    #[must_use]
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() { 0.0 } else { self.sum() / self.data.len() as f64 }
    }

    /// Smallest element. Empty tensors return +inf.
    #[must_use]
    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest element. Empty tensors return -inf.
    #[must_use]
    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    #[must_use]
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
    }

    /// Largest absolute element-wise difference. Shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "compare {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Dot product of the flat buffers. Lengths must match.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.data.len() != other.data.len() {
            return Err(Error::shape(format!(
                "dot of {} values with {}",
                self.data.len(),
                other.data.len()
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    /// True when every element is finite.
    #[must_use]
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Matrix product of two rank-2 tensors: `[m,k] x [k,n] -> [m,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ([m, ka], [kb, n]) = (a.shape(), b.shape()) else {
        return Err(Error::shape(format!(
            "matmul needs rank-2 operands, got {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    };
    let (m, ka, kb, n) = (*m, *ka, *kb, *n);
    if ka != kb {
        return Err(Error::shape(format!(
            "matmul inner dims differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..ka {
            let ail = ad[i * ka + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &bd[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Literal three-loop matrix product, kept free of any shortcuts so it
    /// can serve as the reference for `matmul`.
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += a.at(&[i, l]) * b.at(&[l, j]);
                }
                out.set(&[i, j], acc);
            }
        }
        out
    }

    fn random_tensor(shape: &[usize], stream: u64) -> Tensor {
        let mut rng = crate::rng::rng_fork(2024, stream);
        Tensor::from_fn(shape, |_| rng.uniform_in(-1.0, 1.0))
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn offset_is_row_major() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(t.at(&[0, 0, 0]), 0.0);
        assert_eq!(t.at(&[0, 0, 3]), 3.0);
        assert_eq!(t.at(&[0, 1, 0]), 4.0);
        assert_eq!(t.at(&[1, 0, 0]), 12.0);
        assert_eq!(t.at(&[1, 2, 3]), 23.0);
    }

    #[test]
    fn matmul_identity_returns_operand() {
        let a = random_tensor(&[4, 4], 0);
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        let prod = matmul(&a, &eye).unwrap();
        assert_eq!(prod, a);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let a = random_tensor(&[3, 5], 1);
        let z = Tensor::zeros(&[5, 2]);
        let prod = matmul(&a, &z).unwrap();
        assert!(prod.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_three_loop_oracle() {
        let a = random_tensor(&[5, 4], 2);
        let b = random_tensor(&[4, 3], 3);
        let got = matmul(&a, &b).unwrap();
        let want = matmul_oracle(&a, &b);
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn matmul_rejects_non_matrices() {
        let a = Tensor::zeros(&[2, 3, 4]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn matmul_associativity_within_relative_tolerance() {
        for trial in 0..20 {
            let a = random_tensor(&[4, 6], 100 + trial);
            let b = random_tensor(&[6, 5], 200 + trial);
            let c = random_tensor(&[5, 3], 300 + trial);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.max_abs().max(right.max_abs()).max(1.0);
            let diff = left.max_abs_diff(&right).unwrap();
            assert!(diff / scale < 1e-10, "trial {trial}: relative diff {}", diff / scale);
        }
    }

    #[test]
    fn reshape_preserves_data_and_checks_len() {
        let t = Tensor::from_fn(&[2, 6], |i| i as f64);
        let r = t.reshape(&[3, 4]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[5, 2]).is_err());
    }

    #[test]
    fn reductions_and_comparisons() {
        let t = Tensor::from_vec(&[4], vec![-2.0, 0.5, 3.0, -0.25]).unwrap();
        assert_eq!(t.sum(), 1.25);
        assert_eq!(t.min(), -2.0);
        assert_eq!(t.max(), 3.0);
        assert_eq!(t.max_abs(), 3.0);
        let u = Tensor::from_vec(&[4], vec![-2.0, 0.5, 3.0, 0.75]).unwrap();
        assert_eq!(t.max_abs_diff(&u).unwrap(), 1.0);
    }
}
