use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Negative-side slope used throughout the network.
pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

/// Upstream gradient scaled by 1 where `x > 0` and by `slope` elsewhere.
pub fn leaky_relu_backward(x: &Tensor, grad_out: &Tensor, slope: f64) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape("leaky_relu grad shape"));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn relu(x: &Tensor) -> Tensor {
    leaky_relu(x, 0.0)
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    leaky_relu_backward(x, grad_out, 0.0)
}
