//! Dense tensor value type: rank 1–3, row-major, contiguous.
//!
//! `Tensor` is a plain value — no strides, no views. Differentiation lives in
//! [`crate::tape`], which stores tensors as nodes and records backward rules.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense rank-1..=3 array with row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from a shape and flat row-major data.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::shape(format!(
                "rank must be 1..=3, got shape {shape:?}"
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![T::zero(); numel])
    }

    pub fn full(shape: &[usize], v: T) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![v; numel])
    }

    /// Rank-1 tensor holding a single value.
    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Rank-1 tensor from a slice.
    pub fn from_slice(values: &[T]) -> Result<Self> {
        Tensor::new(&[values.len()], values.to_vec())
    }

    /// Fills a tensor by calling `f` with the flat row-major index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, (0..numel).map(|i| f(i)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Single element of a rank-1 tensor of length 1.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "item() requires exactly one element, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Flat offset of `[i, j]` in a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Flat offset of `[b, i, j]` in a rank-3 tensor.
    pub fn at3(&self, b: usize, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 3);
        self.data[(b * self.shape[1] + i) * self.shape[2] + j]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bytes occupied by the element data.
    pub fn byte_size(&self) -> usize {
        self.numel() * T::WIDTH as usize
    }

    /// Elementwise conversion to another scalar type (via f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Interprets the same row-major data under a new shape.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    /// Max |a - b| over elements; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }
}

/// Decomposes `shape` around `axis` into (lanes, axis_len, stride).
///
/// A lane is one 1-D slice along `axis`; lane `l` starts at flat offset
/// `(l / stride) * axis_len * stride + (l % stride)` and its `i`-th element
/// lives at `start + i * stride`.
pub fn axis_lanes(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let axis_len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let lanes: usize = shape.iter().product::<usize>() / axis_len;
    Ok((lanes, axis_len, stride))
}

/// Flat offset of the first element of lane `lane` (see [`axis_lanes`]).
pub fn lane_start(lane: usize, axis_len: usize, stride: usize) -> usize {
    (lane / stride) * axis_len * stride + (lane % stride)
}
