use super::Mode;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Inverted dropout. In train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1/(1-p)`; eval mode is the identity.
/// Returns the output together with the multiplicative mask.
pub fn dropout(x: &Tensor, p: f64, rng: &mut Rng, mode: Mode) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), Tensor::new(x.shape(), 1.0)));
    }
    let keep = 1.0 / (1.0 - p);
    let mask_data: Vec<f64> = (0..x.len())
        .map(|_| if rng.uniform() < p { 0.0 } else { keep })
        .collect();
    let mask = Tensor::from_vec(x.shape(), mask_data)?;
    let y = x
        .data()
        .iter()
        .zip(mask.data())
        .map(|(a, m)| a * m)
        .collect();
    Ok((Tensor::from_vec(x.shape(), y)?, mask))
}

pub fn dropout_backward(grad_out: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != mask.shape() {
        return Err(Error::shape("dropout grad shape"));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(mask.data())
        .map(|(g, m)| g * m)
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}
