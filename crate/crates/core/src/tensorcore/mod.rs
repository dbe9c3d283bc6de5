//! Dense `[batch, channels, length]` tensors and the hand-differentiated
//! primitives the temporal network is built from.
//!
//! Every primitive takes a [`Mask`] over `[batch, length]`. Positions where the
//! mask is false are padding: they hold zeros on the way out of every op and
//! receive zero gradient on the way back, so the amount of right padding in a
//! batch has no effect on any valid-position value.

mod activation;
mod batchnorm;
mod conv;
mod gradcheck;
mod loss;

pub use activation::{dropout_backward, dropout_forward, relu_backward, relu_forward, DropoutCache};
pub use batchnorm::{BatchNorm, BatchNormCache, BN_EPSILON, BN_MOMENTUM};
pub use conv::{
    conv1d_backward, conv1d_forward, pointwise_linear_backward, pointwise_linear_forward, Conv1d, ConvGrads,
};
pub use gradcheck::{grad_check, relative_error};
pub use loss::masked_mse_loss;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Where the `(kernel - 1) * dilation` zeros of a length-preserving convolution go.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    /// All padding on the left: output `t` only sees inputs `<= t`.
    #[default]
    CausalLeft,
    /// Padding split across both ends, the extra element on the right.
    Symmetric,
}

impl PaddingMode {
    /// `(left, right)` padding for a kernel of `kernel` taps at `dilation`.
    pub fn pads(self, kernel: usize, dilation: usize) -> (usize, usize) {
        let total = (kernel - 1) * dilation;
        match self {
            PaddingMode::CausalLeft => (total, 0),
            PaddingMode::Symmetric => (total / 2, total - total / 2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Validation(format!("tensor shape {shape:?} has a zero dimension")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor data length", n, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Splits a rank-3 shape into `(batch, channels, length)`.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [b, c, l] => Ok((b, c, l)),
            _ => Err(Error::shape("tensor rank", 3, self.shape.len())),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape element count", self.data.len(), n));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Validation(format!(
                "shape mismatch in add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }
}

/// Validity mask over `[batch, length]`; `true` marks a real timestep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    batch: usize,
    length: usize,
    valid: Vec<bool>,
}

impl Mask {
    pub fn new(batch: usize, length: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != batch * length {
            return Err(Error::shape("mask length", batch * length, valid.len()));
        }
        Ok(Mask { batch, length, valid })
    }

    pub fn all_valid(batch: usize, length: usize) -> Self {
        Mask {
            batch,
            length,
            valid: vec![true; batch * length],
        }
    }

    /// Prefix mask: row `b` is valid for `t < lengths[b]`.
    pub fn from_lengths(lengths: &[usize], length: usize) -> Self {
        let mut valid = vec![false; lengths.len() * length];
        for (b, &n) in lengths.iter().enumerate() {
            valid[b * length..b * length + n.min(length)].fill(true);
        }
        Mask {
            batch: lengths.len(),
            length,
            valid,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize) -> bool {
        self.valid[b * self.length + t]
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn check(&self, batch: usize, length: usize) -> Result<()> {
        if self.batch != batch {
            return Err(Error::shape("mask batch", batch, self.batch));
        }
        if self.length != length {
            return Err(Error::shape("mask length", length, self.length));
        }
        Ok(())
    }

    /// Zeroes every padded position of a `[B, C, L]` tensor in place.
    pub fn apply(&self, x: &mut Tensor) -> Result<()> {
        let (b, c, l) = x.dims3()?;
        self.check(b, l)?;
        let data = x.data_mut();
        for bi in 0..b {
            let row = &self.valid[bi * l..(bi + 1) * l];
            if row.iter().all(|&v| v) {
                continue;
            }
            for ci in 0..c {
                let base = (bi * c + ci) * l;
                for (t, &v) in row.iter().enumerate() {
                    if !v {
                        data[base + t] = 0.0;
                    }
                }
            }
        }
        Ok(())
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}
