//! Central finite-difference gradient checking.
//!
//! Relative error is `|a - n| / max(|a|, |n|, FLOOR)`: gradients smaller than
//! `FLOOR` are compared on an absolute scale, so coordinates with a true
//! gradient of zero do not produce spurious failures.

use crate::tensor::Tensor;

pub const FLOOR: f64 = 1e-3;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for flat coordinate `i`.
pub fn numeric_partial(x: &Tensor, i: usize, step: f64, f: &mut impl FnMut(&Tensor) -> f64) -> f64 {
    let mut probe = x.clone();
    let orig = probe.data()[i];
    probe.data_mut()[i] = orig + step;
    let up = f(&probe);
    probe.data_mut()[i] = orig - step;
    let down = f(&probe);
    (up - down) / (2.0 * step)
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compares `analytic` to central differences of the scalar `f` at `x`.
/// `coords = None` checks every coordinate.
pub fn check(
    x: &Tensor,
    analytic: &Tensor,
    coords: Option<&[usize]>,
    step: f64,
    mut f: impl FnMut(&Tensor) -> f64,
) -> CheckReport {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape mismatch");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut report = CheckReport::default();
    for &i in coords {
        let numeric = numeric_partial(x, i, step, &mut f);
        let err = rel_error(analytic.data()[i], numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    report
}

/// Scalar objective `Σ probe ⊙ y`, whose gradient w.r.t. `y` is `probe`.
pub fn probe_dot(probe: &Tensor, y: &Tensor) -> f64 {
    assert_eq!(probe.shape(), y.shape(), "probe shape mismatch");
    probe.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}
