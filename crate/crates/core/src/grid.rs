//! Dense image container and the elementwise numerics built on it.
//!
//! Images live in `[-1, 1]`, stored row-major with interleaved channels
//! (`index = (row * width + col) * channels + channel`). All reductions sum
//! in index order, left to right, so repeated calls are bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.height, self.width, self.channels]
    }

    pub(crate) fn check_nonempty(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            Err(Error::EmptyShape(self.dims()))
        } else {
            Ok(())
        }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.check_nonempty()?;
        if data.len() != shape.len() {
            return Err(Error::LengthMismatch {
                len: data.len(),
                shape: shape.dims(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image grid"));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values already known to be consistent.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        shape.check_nonempty()?;
        Ok(Self::from_parts(shape, vec![0.0; shape.len()]))
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self> {
        shape.check_nonempty()?;
        Ok(Self::from_parts(shape, vec![value; shape.len()]))
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        shape.check_nonempty()?;
        let mut data = Vec::with_capacity(shape.len());
        for r in 0..shape.height {
            for c in 0..shape.width {
                for ch in 0..shape.channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::from_vec(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[self.shape.index(row, col, channel)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.dims(),
                got: other.shape.dims(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        ImageGrid::from_parts(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> Result<ImageGrid> {
        self.check_same_shape(other)?;
        Ok(ImageGrid::from_parts(
            self.shape,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn scale(&self, a: f64) -> ImageGrid {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn norm(&self) -> f64 {
        sum_sq(&self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        sum(&self.data) / self.data.len() as f64
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> ImageGrid {
        self.map(|v| v.clamp(lo, hi))
    }

    /// One channel as a `height x width` row-major plane.
    pub fn channel_plane(&self, channel: usize) -> Vec<f64> {
        let c = self.shape.channels;
        self.data.iter().skip(channel).step_by(c).copied().collect()
    }

    /// Inverse of [`ImageGrid::channel_plane`] over all channels.
    pub(crate) fn from_planes(shape: Shape, planes: &[Vec<f64>]) -> ImageGrid {
        let mut data = vec![0.0; shape.len()];
        for (ch, plane) in planes.iter().enumerate() {
            for (p, &v) in plane.iter().enumerate() {
                data[p * shape.channels + ch] = v;
            }
        }
        ImageGrid::from_parts(shape, data)
    }
}

/// I.i.d. standard normal grid drawn from `stream`.
pub fn gaussian_grid(shape: Shape, stream: &RngStream) -> Result<ImageGrid> {
    shape.check_nonempty()?;
    Ok(ImageGrid::from_parts(shape, stream.normals(shape.len())))
}

/// `a * x + y`.
pub fn axpy(a: f64, x: &ImageGrid, y: &ImageGrid) -> Result<ImageGrid> {
    x.zip_map(y, |xv, yv| a * xv + yv)
}

pub fn dot(x: &ImageGrid, y: &ImageGrid) -> Result<f64> {
    x.check_same_shape(y)?;
    Ok(dot_slices(&x.data, &y.data))
}

pub fn l2_dist_sq(x: &ImageGrid, y: &ImageGrid) -> Result<f64> {
    x.check_same_shape(y)?;
    Ok(dist_sq_slices(&x.data, &y.data))
}

#[inline]
pub(crate) fn sum(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, &x| acc + x)
}

#[inline]
pub(crate) fn sum_sq(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, &x| acc + x * x)
}

#[inline]
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub(crate) fn dist_sq_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}
