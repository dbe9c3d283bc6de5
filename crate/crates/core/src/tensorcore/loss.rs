use super::{Mask, Tensor};
use crate::error::{Error, Result};

/// Mean squared error over valid positions of `[B, L]` predictions.
///
/// Returns the loss and its gradient with respect to `pred`, which is
/// `2 (pred - target) / n_valid` at valid positions and zero elsewhere.
pub fn masked_mse_loss(pred: &Tensor, target: &Tensor, mask: &Mask) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::Validation(format!(
            "prediction shape {:?} differs from target shape {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (b, l) = match pred.shape() {
        [b, l] => (*b, *l),
        other => return Err(Error::shape("loss input rank", 2, other.len())),
    };
    mask.check(b, l)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::Validation("loss over zero valid positions".into()));
    }
    let mut sum = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    let scale = 2.0 / n as f64;
    for (i, ((&p, &y), &m)) in pred.data().iter().zip(target.data()).zip(mask.valid()).enumerate() {
        if m {
            let d = p - y;
            sum += d * d;
            grad.data_mut()[i] = scale * d;
        }
    }
    Ok((sum / n as f64, grad))
}
