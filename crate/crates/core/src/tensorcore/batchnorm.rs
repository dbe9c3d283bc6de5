use super::{Mask, Mode, Param, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization whose statistics only see valid timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

/// What the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub enum BatchNormCache {
    Train { x_hat: Tensor, inv_std: Vec<f64>, counts: usize },
    Eval { x_hat: Tensor },
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Tensor::filled(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            momentum: BN_MOMENTUM,
            eps: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Train mode normalizes with the masked batch statistics and folds them into
    /// the running estimates; eval mode uses the running estimates. Padded
    /// positions come out as zero.
    pub fn forward(&mut self, x: &Tensor, mask: &Mask, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        let (bn, c, l) = x.dims3()?;
        mask.check(bn, l)?;
        if c != self.channels() {
            return Err(Error::shape("batch-norm channels", self.channels(), c));
        }
        let n = mask.count();
        if n == 0 {
            return Err(Error::Validation("batch-norm over zero valid positions".into()));
        }
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let xd = x.data();
        let mut out = Tensor::zeros(x.shape());

        match mode {
            Mode::Eval => {
                let (out, x_hat) = self.eval_normalize(x, mask)?;
                Ok((out, BatchNormCache::Eval { x_hat }))
            }
            Mode::Train => {
                let mut x_hat = Tensor::zeros(x.shape());
                let mut inv_std = vec![0.0; c];
                for ch in 0..c {
                    let mut sum = 0.0;
                    for b in 0..bn {
                        let base = (b * c + ch) * l;
                        for t in 0..l {
                            if mask.get(b, t) {
                                sum += xd[base + t];
                            }
                        }
                    }
                    let mean = sum / n as f64;
                    let mut ss = 0.0;
                    for b in 0..bn {
                        let base = (b * c + ch) * l;
                        for t in 0..l {
                            if mask.get(b, t) {
                                let dlt = xd[base + t] - mean;
                                ss += dlt * dlt;
                            }
                        }
                    }
                    let var = ss / n as f64;
                    let inv = 1.0 / (var + self.eps).sqrt();
                    inv_std[ch] = inv;
                    let (xh, od) = (x_hat.data_mut(), out.data_mut());
                    for b in 0..bn {
                        let base = (b * c + ch) * l;
                        for t in 0..l {
                            if mask.get(b, t) {
                                let h = (xd[base + t] - mean) * inv;
                                xh[base + t] = h;
                                od[base + t] = gamma[ch] * h + beta[ch];
                            }
                        }
                    }
                    let unbiased = if n > 1 { ss / (n - 1) as f64 } else { var };
                    let m = self.momentum;
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (1.0 - m) * *rm + m * mean;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (1.0 - m) * *rv + m * unbiased;
                }
                Ok((
                    out,
                    BatchNormCache::Train {
                        x_hat,
                        inv_std,
                        counts: n,
                    },
                ))
            }
        }
    }

    /// Eval-mode output together with the normalized pre-affine values.
    pub fn eval_normalize(&self, x: &Tensor, mask: &Mask) -> Result<(Tensor, Tensor)> {
        let (bn, c, l) = x.dims3()?;
        mask.check(bn, l)?;
        if c != self.channels() {
            return Err(Error::shape("batch-norm channels", self.channels(), c));
        }
        let (gamma, beta, xd) = (self.gamma.value.data(), self.beta.value.data(), x.data());
        let mut out = Tensor::zeros(x.shape());
        let mut x_hat = Tensor::zeros(x.shape());
        let (xh, od) = (x_hat.data_mut(), out.data_mut());
        for ch in 0..c {
            let inv = 1.0 / (self.running_var.data()[ch] + self.eps).sqrt();
            let mu = self.running_mean.data()[ch];
            for b in 0..bn {
                let base = (b * c + ch) * l;
                for t in 0..l {
                    if mask.get(b, t) {
                        let h = (xd[base + t] - mu) * inv;
                        xh[base + t] = h;
                        od[base + t] = gamma[ch] * h + beta[ch];
                    }
                }
            }
        }
        Ok((out, x_hat))
    }

    /// Accumulates `gamma`/`beta` gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &BatchNormCache, grad: &Tensor, mask: &Mask) -> Result<Tensor> {
        let (bn, c, l) = grad.dims3()?;
        mask.check(bn, l)?;
        let gd = grad.data();
        let mut dx = Tensor::zeros(grad.shape());
        let gamma = self.gamma.value.data().to_vec();
        match cache {
            BatchNormCache::Eval { x_hat } => {
                let xh = x_hat.data();
                for ch in 0..c {
                    let inv = 1.0 / (self.running_var.data()[ch] + self.eps).sqrt();
                    let (mut dbeta, mut dgamma) = (0.0, 0.0);
                    for b in 0..bn {
                        let base = (b * c + ch) * l;
                        for t in 0..l {
                            if mask.get(b, t) {
                                dbeta += gd[base + t];
                                dgamma += gd[base + t] * xh[base + t];
                                dx.data_mut()[base + t] = gd[base + t] * gamma[ch] * inv;
                            }
                        }
                    }
                    self.beta.grad.data_mut()[ch] += dbeta;
                    self.gamma.grad.data_mut()[ch] += dgamma;
                }
                Ok(dx)
            }
            BatchNormCache::Train { x_hat, inv_std, counts } => {
                let n = *counts as f64;
                let xh = x_hat.data();
                for ch in 0..c {
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xh = 0.0;
                    for b in 0..bn {
                        let base = (b * c + ch) * l;
                        for t in 0..l {
                            if mask.get(b, t) {
                                sum_dy += gd[base + t];
                                sum_dy_xh += gd[base + t] * xh[base + t];
                            }
                        }
                    }
                    self.beta.grad.data_mut()[ch] += sum_dy;
                    self.gamma.grad.data_mut()[ch] += sum_dy_xh;
                    let scale = gamma[ch] * inv_std[ch] / n;
                    let dxd = dx.data_mut();
                    for b in 0..bn {
                        let base = (b * c + ch) * l;
                        for t in 0..l {
                            if mask.get(b, t) {
                                dxd[base + t] = scale * (n * gd[base + t] - sum_dy - xh[base + t] * sum_dy_xh);
                            }
                        }
                    }
                }
                Ok(dx)
            }
        }
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Param); 2] {
        [("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    pub fn buffers_mut(&mut self) -> [(&'static str, &mut Tensor); 2] {
        [("running_mean", &mut self.running_mean), ("running_var", &mut self.running_var)]
    }
}
