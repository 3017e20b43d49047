//! Network building blocks with explicit forward and backward passes.
//!
//! Every backward takes the upstream gradient of the layer output and returns
//! the gradient of the layer input together with named parameter gradients
//! whose shapes mirror the parameters.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod linear;
mod loss;
mod pool;

use std::collections::BTreeMap;

use crate::tensor::Tensor;

pub use activation::{leaky_relu, leaky_relu_backward, relu, relu_backward, LEAKY_SLOPE};
pub use batchnorm::{update_running, BatchNorm, BnCache, BN_EPS, BN_MOMENTUM};
pub use conv::{valid_extent, Conv2dValid};
pub use dropout::{dropout, dropout_backward};
pub use linear::Linear;
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{avgpool_width, avgpool_width_backward, global_avg_pool, global_avg_pool_backward};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
pub struct LayerGrads {
    /// `None` when the caller asked to skip the input gradient.
    pub grad_input: Option<Tensor>,
    pub grad_params: BTreeMap<&'static str, Tensor>,
}

#[cfg(test)]
pub(crate) mod testing {
    use crate::gradcheck::{check, probe_dot};
    use crate::tensor::Tensor;

    pub const TOL: f64 = 1e-4;

    pub fn fd_check_input(
        x: &Tensor,
        analytic: &Tensor,
        probe: &Tensor,
        tol: f64,
        f: impl Fn(&Tensor) -> Tensor,
    ) {
        let r = check(x, analytic, None, 1e-5, |xx| probe_dot(probe, &f(xx)));
        assert!(
            r.max_rel_error < tol,
            "input grad rel err {} at {}",
            r.max_rel_error,
            r.worst_index
        );
    }

    pub fn fd_check_param(
        p: &Tensor,
        analytic: &Tensor,
        probe: &Tensor,
        tol: f64,
        f: impl Fn(&Tensor) -> Tensor,
    ) {
        let r = check(p, analytic, None, 1e-5, |pp| probe_dot(probe, &f(pp)));
        assert!(
            r.max_rel_error < tol,
            "param grad rel err {} at {}",
            r.max_rel_error,
            r.worst_index
        );
    }
}
