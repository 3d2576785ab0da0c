//! Dense N×C×H×W tensors and a reverse-mode autodiff tape.

mod gradcheck;
mod graph;
pub(crate) mod kernels;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{BatchNormStats, Graph, NormMode, Var};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values, rank ≤ 4.
///
/// Images and fields use the N×C×H×W layout throughout the crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.len() > 4 {
            return Err(Error::InvalidArgument(format!("rank {} exceeds 4", dims.len())));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("dims {:?} need {} values, got {}", dims, n, data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { dims: vec![], data: vec![value] }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.dims.iter().all(|&d| d == 1)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Interprets the tensor as N×C×H×W. Rank-3 tensors are treated as C×H×W with N = 1.
    pub fn nchw(&self) -> Result<[usize; 4]> {
        match *self.dims.as_slice() {
            [n, c, h, w] => Ok([n, c, h, w]),
            [c, h, w] => Ok([1, c, h, w]),
            _ => Err(Error::shape("nchw", format!("expected rank 3 or 4, got {:?}", self.dims))),
        }
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.dims, dims),
            ));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { dims: self.dims.clone(), data })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Copies sample `n` out of a batch, keeping a leading batch axis of 1.
    pub fn sample(&self, n: usize) -> Result<Tensor> {
        let [bn, c, h, w] = self.nchw()?;
        if n >= bn {
            return Err(Error::InvalidArgument(format!("sample {n} out of batch {bn}")));
        }
        let plane = c * h * w;
        Ok(Tensor { dims: vec![1, c, h, w], data: self.data[n * plane..(n + 1) * plane].to_vec() })
    }

    /// Stacks equally-shaped N×C×H×W tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::InvalidArgument("stack of nothing".into()))?;
        let [_, c, h, w] = first.nchw()?;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let [tn, tc, th, tw] = t.nchw()?;
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::shape("stack", format!("{:?} vs {:?}", t.dims, first.dims)));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { dims: vec![n, c, h, w], data })
    }

    /// Copies channels `start..start + len` of an N×C×H×W tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.nchw()?;
        if start + len > c {
            return Err(Error::shape("slice_channels", format!("{start}+{len} > {c}")));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            let base = (b * c + start) * hw;
            data.extend_from_slice(&self.data[base..base + len * hw]);
        }
        Ok(Tensor { dims: vec![n, len, h, w], data })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
