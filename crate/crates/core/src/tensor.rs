//! Dense row-major tensors.
//!
//! Image tensors follow the NCHW convention. A `Tensor` is a plain value; it
//! joins a computation graph only when wrapped by [`Tape::var`](crate::Tape::var)
//! or produced by an operation on a [`Var`](crate::Var).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::shape_err;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel,
                data.len()
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Destructures an NCHW shape.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err!("expected a rank-4 NCHW tensor, got {:?}", self.shape)),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(shape_err!("expected a rank-2 tensor, got {:?}", self.shape)),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("shape mismatch {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.data.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element at an NCHW index.
    #[inline]
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let (_, cs, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cs + c) * h + y) * w + x]
    }

    /// Converts between element types (f32 <-> f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Channels `[start, start + len)` along dimension 1.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Self> {
        if self.shape.len() < 2 || start + len > self.shape[1] {
            return Err(shape_err!(
                "cannot take channels {}..{} of {:?}",
                start,
                start + len,
                self.shape
            ));
        }
        let outer = self.shape[0];
        let c = self.shape[1];
        let inner: usize = self.shape[2..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for n in 0..outer {
            let base = n * c * inner;
            data.extend_from_slice(&self.data[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[1] = len;
        Ok(Tensor { shape, data })
    }

    /// Concatenation along dimension 1.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        if a.shape.len() < 2
            || a.shape.len() != b.shape.len()
            || a.shape[0] != b.shape[0]
            || a.shape[2..] != b.shape[2..]
        {
            return Err(shape_err!("cannot concatenate {:?} and {:?}", a.shape, b.shape));
        }
        let outer = a.shape[0];
        let inner: usize = a.shape[2..].iter().product();
        let (ca, cb) = (a.shape[1], b.shape[1]);
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for n in 0..outer {
            data.extend_from_slice(&a.data[n * ca * inner..(n + 1) * ca * inner]);
            data.extend_from_slice(&b.data[n * cb * inner..(n + 1) * cb * inner]);
        }
        let mut shape = a.shape.clone();
        shape[1] = ca + cb;
        Ok(Tensor { shape, data })
    }

    /// Batch item `n` of an NCHW tensor, keeping a leading batch dimension of 1.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        if self.shape.is_empty() || n >= self.shape[0] {
            return Err(shape_err!("batch index {} out of range for {:?}", n, self.shape));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Tensor { shape, data: self.data[n * inner..(n + 1) * inner].to_vec() })
    }

    /// Stacks equally shaped tensors along a new or existing leading dimension.
    ///
    /// Inputs of shape `[1, ...]` are joined into `[k, ...]`.
    pub fn stack_batch(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| shape_err!("cannot stack zero tensors"))?;
        if first.shape.is_empty() || first.shape[0] != 1 {
            return Err(shape_err!("stack_batch expects leading dimension 1, got {:?}", first.shape));
        }
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            t.expect_same_shape(first)?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = items.len();
        Ok(Tensor { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn concat_then_narrow_recovers_inputs() {
        let a = Tensor::<f64>::from_f64(&[2, 1, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let b = Tensor::<f64>::from_f64(
            &[2, 2, 2, 2],
            &(0..16).map(|v| v as f64 * 0.5).collect::<Vec<_>>(),
        )
        .unwrap();
        let c = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2, 2]);
        assert_eq!(c.narrow_channels(0, 1).unwrap(), a);
        assert_eq!(c.narrow_channels(1, 2).unwrap(), b);
    }

    #[test]
    fn stack_and_split_batch() {
        let a = Tensor::<f32>::full(&[1, 2, 1, 1], 1.0);
        let b = Tensor::<f32>::full(&[1, 2, 1, 1], 2.0);
        let s = Tensor::stack_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 1, 1]);
        assert_eq!(s.batch_item(1).unwrap(), b);
        assert_eq!(s.batch_item(0).unwrap(), a);
    }
}
