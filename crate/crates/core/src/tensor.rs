//! Dense row-major `f64` tensors and convolution weight containers.

use crate::error::{Error, Result};

/// Dense N-D array of `f64`, row-major. Images and feature maps are
/// channel-first (`C×H×W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::dim("dims", "positive extents", format!("{dims:?}")));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::dim("data", len, data.len()));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "tensor extents must be positive: {dims:?}");
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "tensor extents must be positive: {dims:?}");
        let len: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
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

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != self.data.len() || dims.contains(&0) {
            return Err(Error::dim("reshape", self.data.len(), format!("{dims:?}")));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// Returns `(C, H, W)` or a dimension error if the tensor is not 3-D.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::dim("ndim", "3 (C×H×W)", self.dims.len())),
        }
    }

    pub fn expect_dims(&self, axis: &str, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::dim(axis, format!("{dims:?}"), format!("{:?}", self.dims)));
        }
        Ok(())
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.dims[1], self.dims[2]);
        self.data[(c * h + y) * w + x]
    }

    /// Borrow channel `c` of a `C×H×W` tensor as a flat `H·W` slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane: usize = self.dims[1..].iter().product();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane: usize = self.dims[1..].iter().product();
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::dim(
                "shape",
                format!("{:?}", self.dims),
                format!("{:?}", other.dims),
            ));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    /// In-place `self += k * other`.
    pub fn axpy(&mut self, k: f64, other: &Tensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dim(
                "shape",
                format!("{:?}", self.dims),
                format!("{:?}", other.dims),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// 4-D convolution kernel indexed `[out][in][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    tensor: Tensor,
}

impl ConvWeights {
    pub fn new(out_channels: usize, in_channels: usize, kh: usize, kw: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self {
            tensor: Tensor::new(&[out_channels, in_channels, kh, kw], data)?,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kh: usize, kw: usize) -> Self {
        Self {
            tensor: Tensor::zeros(&[out_channels, in_channels, kh, kw]),
        }
    }

    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        if tensor.ndim() != 4 {
            return Err(Error::dim("ndim", "4 (out×in×kh×kw)", tensor.ndim()));
        }
        Ok(Self { tensor })
    }

    pub fn out_channels(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.tensor.dims()[1]
    }

    pub fn kh(&self) -> usize {
        self.tensor.dims()[2]
    }

    pub fn kw(&self) -> usize {
        self.tensor.dims()[3]
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, h: usize, t: usize) -> f64 {
        let d = self.tensor.dims();
        self.tensor.data()[((o * d[1] + i) * d[2] + h) * d[3] + t]
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.tensor.data_mut()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn as_tensor_mut(&mut self) -> &mut Tensor {
        &mut self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }
}
