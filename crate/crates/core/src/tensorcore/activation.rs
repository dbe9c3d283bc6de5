use rand::Rng;

use super::{Mask, Mode, Tensor};
use crate::error::{Error, Result};

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// Gradient of relu given the forward input; the kink at 0 takes slope 0.
pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if x.shape() != grad.shape() {
        return Err(Error::Validation("relu gradient shape differs from input".into()));
    }
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Per-element multipliers of one dropout call (`0` or `1 / (1 - rate)`).
#[derive(Clone, Debug)]
pub struct DropoutCache {
    scale: Option<Vec<f64>>,
}

impl DropoutCache {
    /// Cache of an eval-mode (pass-through) call.
    pub fn identity() -> Self {
        DropoutCache { scale: None }
    }
}

/// Inverted dropout over a `[B, C, L]` tensor.
///
/// Random draws are made only at valid positions, in `(b, c, t)` order, so the
/// masks of real timesteps do not depend on how much padding a batch carries.
pub fn dropout_forward<R: Rng>(
    x: &Tensor,
    mask: &Mask,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, DropoutCache)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Validation(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), DropoutCache { scale: None }));
    }
    let (bn, c, l) = x.dims3()?;
    mask.check(bn, l)?;
    let keep = 1.0 / (1.0 - rate);
    let mut scale = vec![0.0; x.len()];
    for b in 0..bn {
        for ch in 0..c {
            let base = (b * c + ch) * l;
            for t in 0..l {
                if mask.get(b, t) {
                    scale[base + t] = if rng.gen::<f64>() < rate { 0.0 } else { keep };
                }
            }
        }
    }
    let data = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, DropoutCache { scale: Some(scale) }))
}

pub fn dropout_backward(cache: &DropoutCache, grad: &Tensor) -> Result<Tensor> {
    match &cache.scale {
        None => Ok(grad.clone()),
        Some(scale) => {
            if scale.len() != grad.len() {
                return Err(Error::shape("dropout gradient length", scale.len(), grad.len()));
            }
            let data = grad.data().iter().zip(scale).map(|(g, s)| g * s).collect();
            Tensor::new(grad.shape().to_vec(), data)
        }
    }
}
