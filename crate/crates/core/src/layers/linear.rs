use std::collections::BTreeMap;

use super::LayerGrads;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Mat, Tensor};

/// Fully connected layer `y = x Wᵀ + b` with `W: [out, in]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear<'a> {
    pub weight: &'a Tensor,
    pub bias: &'a Tensor,
}

impl<'a> Linear<'a> {
    pub fn new(weight: &'a Tensor, bias: &'a Tensor) -> Self {
        Self { weight, bias }
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (&[n, fin], &[out, win]) = (x.shape(), self.weight.shape()) else {
            return Err(Error::shape(format!(
                "linear expects [n, in] input and [out, in] weight, got {:?} and {:?}",
                x.shape(),
                self.weight.shape()
            )));
        };
        if fin != win || self.bias.shape() != [out] {
            return Err(Error::shape(format!(
                "linear input {:?} vs weight {:?} / bias {:?}",
                x.shape(),
                self.weight.shape(),
                self.bias.shape()
            )));
        }
        Ok((n, fin, out))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, fin, out) = self.dims(x)?;
        let mut y = Tensor::zeros(&[n, out]);
        for row in y.data_mut().chunks_exact_mut(out) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            n,
            fin,
            out,
            1.0,
            Mat::row_major(x.data(), fin),
            Mat::transposed(self.weight.data(), fin),
            1.0,
            y.data_mut(),
            out,
        );
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<LayerGrads> {
        let (n, fin, out) = self.dims(x)?;
        if grad_out.shape() != [n, out] {
            return Err(Error::shape("linear grad_out shape"));
        }
        let mut grad_x = Tensor::zeros(&[n, fin]);
        gemm(
            n,
            out,
            fin,
            1.0,
            Mat::row_major(grad_out.data(), out),
            Mat::row_major(self.weight.data(), fin),
            0.0,
            grad_x.data_mut(),
            fin,
        );
        let mut grad_w = Tensor::zeros(&[out, fin]);
        gemm(
            out,
            n,
            fin,
            1.0,
            Mat::transposed(grad_out.data(), out),
            Mat::row_major(x.data(), fin),
            0.0,
            grad_w.data_mut(),
            fin,
        );
        let mut grad_b = Tensor::zeros(&[out]);
        for row in grad_out.data().chunks_exact(out) {
            for (b, g) in grad_b.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut grad_params = BTreeMap::new();
        grad_params.insert("weight", grad_w);
        grad_params.insert("bias", grad_b);
        Ok(LayerGrads {
            grad_input: Some(grad_x),
            grad_params,
        })
    }
}
