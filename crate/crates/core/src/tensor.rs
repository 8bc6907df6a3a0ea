//! Dense rank-3 feature maps.
//!
//! Every value flowing through a network is a [`Tensor`] laid out channel-major,
//! then row-major: element `(c, y, x)` lives at `(c * height + y) * width + x`.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Size in bytes when stored as `f32`.
    pub const fn bytes(&self) -> usize {
        self.len() * std::mem::size_of::<f32>()
    }

    pub const fn same_spatial(&self, other: &Shape) -> bool {
        self.height == other.height && self.width == other.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::ZeroDimension(shape));
        }
        if data.len() != shape.len() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(Shape::new(channels, height, width), data)
    }

    pub fn full(shape: Shape, value: f32) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    /// Builds a tensor by evaluating `f(c, y, x)` for every element.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn bytes(&self) -> usize {
        self.shape.bytes()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Copies out the channels in `range`.
    pub fn slice_channels(&self, range: Range<usize>) -> Result<Tensor> {
        if range.start >= range.end || range.end > self.shape.channels {
            return Err(Error::ChannelMismatch {
                expected: self.shape.channels,
                actual: range.end,
            });
        }
        let plane = self.shape.plane();
        let shape = Shape::new(range.len(), self.shape.height, self.shape.width);
        Tensor::new(
            shape,
            self.data[range.start * plane..range.end * plane].to_vec(),
        )
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation over all elements.
    pub fn std(&self) -> f64 {
        let mean = self.mean();
        let var = self
            .data
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64;
        var.sqrt()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths() {
        assert!(matches!(
            Tensor::from_vec(2, 2, 2, vec![0.0; 7]),
            Err(Error::DataLength { len: 7, .. })
        ));
        assert!(matches!(
            Tensor::from_vec(0, 2, 2, vec![]),
            Err(Error::ZeroDimension(_))
        ));
    }

    #[test]
    fn layout_is_channel_major() {
        let t =
            Tensor::from_fn(Shape::new(2, 3, 4), |c, y, x| (c * 100 + y * 10 + x) as f32).unwrap();
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[4], 10.0);
        assert_eq!(t.data()[12], 100.0);
        assert_eq!(t.get(1, 2, 3), 123.0);
        assert_eq!(t.channel(1)[0], 100.0);
    }

    #[test]
    fn slice_channels_copies_range() {
        let t = Tensor::from_fn(Shape::new(3, 2, 2), |c, _, _| c as f32).unwrap();
        let s = t.slice_channels(1..3).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 2));
        assert_eq!(s.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        assert!(t.slice_channels(2..4).is_err());
    }

    #[test]
    fn bytes_are_float32() {
        assert_eq!(Shape::new(24, 360, 640).bytes(), 22_118_400);
    }
}
