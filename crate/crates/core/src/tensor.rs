//! Dense N-dimensional tensors in channel-first layout.
//!
//! A tensor's first axis is the channel axis; the remaining axes are spatial.
//! Data is stored row-major with the last axis fastest. Training code runs in
//! `f32`; gradient verification runs the same code in `f64`.

use crate::error::{Error, Result};
use std::fmt;

/// Scalar element type for tensors (`f32` or `f64`).
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert a plain `f64` constant to the active scalar type.
#[inline]
pub fn cast<E: Scalar>(x: f64) -> E {
    E::from_f64(x).expect("constant representable in scalar type")
}

/// Dense tensor: `shape[0]` channels followed by spatial extents.
#[derive(Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(Error::Config(format!(
                "tensor extents must all be >= 1, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Config(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, E::zero())
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> E) -> Self {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for axis in (0..shape.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < shape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Extent of the channel axis.
    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    /// Spatial extents (all axes after the channel axis).
    #[inline]
    pub fn spatial(&self) -> &[usize] {
        &self.shape[1..]
    }

    /// Number of elements in one channel.
    #[inline]
    pub fn channel_len(&self) -> usize {
        self.spatial().iter().product()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    #[inline]
    pub fn data(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    /// Contiguous slice holding channel `c`.
    #[inline]
    pub fn channel(&self, c: usize) -> &[E] {
        let n = self.channel_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [E] {
        let n = self.channel_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, index: &[usize]) -> E {
        self.data[flat_index(&self.shape, index)]
    }

    pub fn set(&mut self, index: &[usize], value: E) {
        let i = flat_index(&self.shape, index);
        self.data[i] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape_mismatch("zip_map", &self.shape, &other.shape));
        }
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

    pub fn scale(&self, s: E) -> Self {
        self.map(|v| v * s)
    }

    pub fn max_abs(&self) -> E {
        self.data
            .iter()
            .fold(E::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Convert element type (used to run gradient checks in `f64`).
    pub fn convert<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| F::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

impl<E: Scalar> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} elements]", self.data.len())
        }
    }
}

/// Row-major strides for `shape` (last axis has stride 1).
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), index.len());
    let mut flat = 0usize;
    for (axis, (&e, &i)) in shape.iter().zip(index).enumerate() {
        debug_assert!(i < e, "index {i} out of range {e} on axis {axis}");
        let _ = axis;
        flat = flat * e + i;
    }
    flat
}

/// Visit every multi-index of `shape` in row-major order.
pub fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize], usize)) {
    let len: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..len {
        f(&idx, flat);
        for axis in (0..shape.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_length_must_agree() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn channel_slices_are_contiguous() {
        let t = Tensor::<f32>::from_fn(&[2, 2, 2], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f32);
        assert_eq!(t.channel(0), &[0.0, 1.0, 10.0, 11.0]);
        assert_eq!(t.channel(1), &[100.0, 101.0, 110.0, 111.0]);
    }

    #[test]
    fn flat_index_is_row_major_last_axis_fastest() {
        assert_eq!(flat_index(&[2, 3, 4], &[0, 0, 1]), 1);
        assert_eq!(flat_index(&[2, 3, 4], &[0, 1, 0]), 4);
        assert_eq!(flat_index(&[2, 3, 4], &[1, 0, 0]), 12);
    }

    #[test]
    fn from_fn_matches_for_each_index_order() {
        let shape = [2, 3];
        let t = Tensor::<f64>::from_fn(&shape, |i| (i[0] * 3 + i[1]) as f64);
        for_each_index(&shape, |idx, flat| {
            assert_eq!(t.get(idx), flat as f64);
        });
    }
}
