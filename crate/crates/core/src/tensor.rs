//! Dense row-major tensors.
//!
//! 4-D activations use the NCHW layout throughout. A squeezed channel
//! descriptor is a `[N, C]` tensor.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{Scalar, Strides};

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

fn validate_dims(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::invalid_shape(shape, "at least one dimension required"));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::invalid_shape(shape, "all dimensions must be >= 1"));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn full(shape: &[usize], fill: T) -> Result<Self> {
        let len = validate_dims(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![fill; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// Zeros with the shape of `other`; cannot fail.
    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = validate_dims(shape)?;
        if len != data.len() {
            return Err(Error::mismatch(
                "from_vec",
                format!("shape {shape:?} needs {len} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        Ok(t)
    }

    /// i.i.d. uniform samples in `[lo, hi)`.
    pub fn rand_uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Self> {
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(Error::InvalidRange { lo, hi });
        }
        let len = validate_dims(shape)?;
        let data = (0..len).map(|_| T::from_f64(rng.uniform(lo, hi))).collect();
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
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

    /// In-place access. The element count and shape stay fixed.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// `(n, c, h, w)` of a 4-D tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::mismatch(
                "dims4",
                format!("expected a 4-D NCHW tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::mismatch(
                "dims2",
                format!("expected a 2-D tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = validate_dims(shape)?;
        if len != self.data.len() {
            return Err(Error::mismatch(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    /// `self += other`, in place.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Sum in index order.
    pub fn sum(&self) -> T {
        self.data.iter().copied().fold(T::zero(), |acc, v| acc + v)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn expect_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::mismatch(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::mismatch(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", self.shape, other.shape),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            Strides::row_major(k),
            &other.data,
            Strides::row_major(n),
            T::zero(),
            &mut out,
            Strides::row_major(n),
        );
        Tensor::from_vec(&[m, n], out)
    }

    /// `out[n,c,h,w] = u[n,c,h,w] * s[n,c]`.
    pub fn channel_scale(&self, s: &Tensor<T>) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if s.shape != [n, c] {
            return Err(Error::mismatch(
                "channel_scale",
                format!("gate {:?} does not match input {:?}", s.shape, self.shape),
            ));
        }
        let plane = h * w;
        let mut out = self.data.clone();
        for (chunk, &g) in out.chunks_exact_mut(plane).zip(&s.data) {
            chunk.iter_mut().for_each(|v| *v *= g);
        }
        Tensor::from_vec(&self.shape, out)
    }

    /// Global average over H and W: `[N, C, H, W] -> [N, C]`.
    ///
    /// Each plane is summed in ascending value order, so the result is exactly
    /// invariant under any rearrangement of the pixels within a channel.
    pub fn spatial_mean(&self) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        let plane = h * w;
        let inv = T::one() / T::from_f64(plane as f64);
        let mut scratch = Vec::with_capacity(plane);
        let data = self
            .data
            .chunks_exact(plane)
            .map(|chunk| {
                scratch.clear();
                scratch.extend_from_slice(chunk);
                scratch.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                scratch.iter().copied().fold(T::zero(), |a, v| a + v) * inv
            })
            .collect();
        Tensor::from_vec(&[n, c], data)
    }

    /// Copy of sample `i` along the leading axis, keeping the leading axis as 1.
    pub fn sample(&self, i: usize) -> Result<Self> {
        let n = self.shape[0];
        if i >= n {
            return Err(Error::mismatch("sample", format!("index {i} >= {n}")));
        }
        let stride = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor::from_vec(&shape, self.data[i * stride..(i + 1) * stride].to_vec())
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid_shape(&[0], "cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.expect_same_shape(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::from_vec(&shape, data)
    }
}
