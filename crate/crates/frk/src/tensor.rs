//! Dense n-dimensional tensors of 64-bit reals, row-major.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Validates that a shape is non-empty with all dimensions ≥ 1.
pub fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::Shape("shape must have at least one dimension".into()));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!(
            "all dimensions must be >= 1, got {shape:?}"
        )));
    }
    Ok(())
}

/// Number of elements a shape addresses: `product(shape)`.
pub fn param_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Dense tensor with explicit shape and row-major flat storage.
///
/// Invariants: `product(shape) == data.len()` and every dimension is ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Tensor of the given shape with every element equal to `fill`.
    pub fn new(shape: &[usize], fill: f64) -> Result<Self> {
        validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![fill; param_count(shape)],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        validate_shape(shape)?;
        if param_count(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} addresses {} elements but {} were supplied",
                param_count(shape),
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform samples in `[lo, hi)`, drawn in row-major order.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        validate_shape(shape)?;
        if lo >= hi {
            return Err(Error::Range(format!("need lo < hi, got [{lo}, {hi})")));
        }
        let data = (0..param_count(shape)).map(|_| rng.uniform(lo, hi)).collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Normal samples scaled by `scale`, drawn in row-major order.
    pub fn rand_normal(shape: &[usize], scale: f64, rng: &mut Rng) -> Result<Self> {
        validate_shape(shape)?;
        let data = (0..param_count(shape))
            .map(|_| scale * rng.next_normal())
            .collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    /// Flat offset of a multi-index. Panics on rank or bounds violations.
    pub fn offset_of(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (d, (&i, &n)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < n, "index {i} out of bounds for dim {d} (size {n})");
            off = off * n + i;
        }
        off
    }

    /// Multi-index of a flat offset. Panics if out of bounds.
    pub fn index_of(&self, mut offset: usize) -> Vec<usize> {
        assert!(offset < self.data.len(), "offset out of bounds");
        let mut idx = vec![0; self.shape.len()];
        for d in (0..self.shape.len()).rev() {
            idx[d] = offset % self.shape[d];
            offset /= self.shape[d];
        }
        idx
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset_of(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset_of(index);
        self.data[off] = value;
    }

    /// Same data under a new shape (element counts must agree).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    /// Consuming reshape; avoids the copy.
    pub fn reshaped(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += scale * other`, elementwise. Panics on length mismatch.
    pub fn add_scaled(&mut self, scale: f64, other: &Tensor) {
        assert_eq!(self.data.len(), other.data.len(), "length mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "length mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!(
                "{what} requires a 2-D tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// 2-D matrix product `self (m×k) · other (k×n)`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dims differ: {k} vs {k2}"
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (d, &b) in dst.iter_mut().zip(brow) {
                    *d += a * b;
                }
            }
        }
        Tensor::from_vec(&[m, n], out)
    }

    /// `self (m×k) · otherᵀ` where `other` is `(n×k)`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul_nt")?;
        let (n, k2) = other.dims2("matmul_nt")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul_nt inner dims differ: {k} vs {k2}"
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(a, b)| a * b).sum();
            }
        }
        Tensor::from_vec(&[m, n], out)
    }

    /// `selfᵀ · other` where `self` is `(k×m)` and `other` is `(k×n)`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.dims2("matmul_tn")?;
        let (k2, n) = other.dims2("matmul_tn")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul_tn inner dims differ: {k} vs {k2}"
            )));
        }
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(brow) {
                    *d += a * b;
                }
            }
        }
        Tensor::from_vec(&[m, n], out)
    }

    /// Transpose of a 2-D tensor.
    pub fn transposed(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::from_vec(&[n, m], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn new_zero_fill() {
        let t = Tensor::new(&[2, 2], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn new_constant_fill() {
        let t = Tensor::new(&[3], 1.5).unwrap();
        assert_eq!(t.data(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(Tensor::new(&[2, 0], 0.0), Err(Error::Shape(_))));
        assert!(matches!(Tensor::new(&[], 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn rand_uniform_deterministic() {
        let a = Tensor::rand_uniform(&[64], 0.0, 1.0, &mut Rng::from_seed(11)).unwrap();
        let b = Tensor::rand_uniform(&[64], 0.0, 1.0, &mut Rng::from_seed(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rand_uniform_mean_near_half() {
        let t = Tensor::rand_uniform(&[1000], 0.0, 1.0, &mut Rng::from_seed(5)).unwrap();
        let mean = t.data().iter().sum::<f64>() / 1000.0;
        assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn rand_uniform_empty_range_rejected() {
        let r = Tensor::rand_uniform(&[4], 1.0, 1.0, &mut Rng::from_seed(0));
        assert!(matches!(r, Err(Error::Range(_))));
    }

    #[test]
    fn param_count_examples() {
        assert_eq!(param_count(&[64, 3, 11, 11]), 23_232);
        assert_eq!(param_count(&[1]), 1);
        assert_eq!(param_count(&[4096, 4096]), 16_777_216);
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
        // The transposed variants agree with the plain product.
        let bt = b.transposed().unwrap();
        assert_eq!(a.matmul_nt(&bt).unwrap(), c);
        let at = a.transposed().unwrap();
        assert_eq!(at.matmul_tn(&b).unwrap(), c);
    }

    proptest! {
        #[test]
        fn index_offset_roundtrip(shape in proptest::collection::vec(1usize..=8, 1..=4)) {
            let t = Tensor::zeros(&shape).unwrap();
            for off in 0..t.len() {
                let idx = t.index_of(off);
                prop_assert_eq!(t.offset_of(&idx), off);
            }
        }
    }
}
