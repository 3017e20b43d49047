use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Non-overlapping mean over windows of `window` columns along the last
/// axis of an NCHW tensor. Trailing columns that do not fill a window are
/// dropped.
pub fn avgpool_width(x: &Tensor, window: usize) -> Result<Tensor> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::shape(format!("avgpool input must be NCHW, got {:?}", x.shape())));
    };
    if window == 0 || window > w {
        return Err(Error::shape(format!("pool window {window} invalid for width {w}")));
    }
    let ow = w / window;
    let scale = 1.0 / window as f64;
    let mut out = Vec::with_capacity(n * c * h * ow);
    for row in x.data().chunks_exact(w) {
        out.extend(
            row[..ow * window]
                .chunks_exact(window)
                .map(|win| win.iter().sum::<f64>() * scale),
        );
    }
    Tensor::from_vec(&[n, c, h, ow], out)
}

pub fn avgpool_width_backward(grad_out: &Tensor, input_width: usize, window: usize) -> Result<Tensor> {
    let &[n, c, h, ow] = grad_out.shape() else {
        return Err(Error::shape("avgpool grad must be NCHW"));
    };
    if window == 0 || input_width / window != ow {
        return Err(Error::shape(format!(
            "pool grad width {ow} inconsistent with input width {input_width} / {window}"
        )));
    }
    let scale = 1.0 / window as f64;
    let mut out = Tensor::zeros(&[n, c, h, input_width]);
    for (dst, src) in out
        .data_mut()
        .chunks_exact_mut(input_width)
        .zip(grad_out.data().chunks_exact(ow))
    {
        for (win, &g) in dst.chunks_exact_mut(window).zip(src) {
            win.fill(g * scale);
        }
    }
    Ok(out)
}

/// Mean over the last axis: `[n, c, h, w] -> [n, c, h]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::shape(format!("GAP input must be NCHW, got {:?}", x.shape())));
    };
    if w == 0 {
        return Err(Error::shape("GAP over empty width"));
    }
    let data = x
        .data()
        .chunks_exact(w)
        .map(|row| row.iter().sum::<f64>() / w as f64)
        .collect();
    Tensor::from_vec(&[n, c, h], data)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, width: usize) -> Result<Tensor> {
    let &[n, c, h] = grad_out.shape() else {
        return Err(Error::shape("GAP grad must be [n, c, h]"));
    };
    let mut data = Vec::with_capacity(n * c * h * width);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / width as f64, width));
    }
    Tensor::from_vec(&[n, c, h, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, probe_dot};
    use crate::rng::Rng;
    use crate::tensor::uniform_init;
    use proptest::prelude::{prop_assert, prop_assume, proptest};

    #[test]
    fn table_widths() {
        for (w, pool, expect) in [(449, 8, 56), (481, 8, 60), (497, 8, 62), (89, 4, 22), (178, 2, 89)] {
            let x = Tensor::zeros(&[1, 15, 1, w]);
            assert_eq!(avgpool_width(&x, pool).unwrap().shape()[3], expect);
        }
        let x = Tensor::zeros(&[1, 15, 28, 449]);
        assert_eq!(avgpool_width(&x, 8).unwrap().shape(), &[1, 15, 28, 56]);
    }

    #[test]
    fn small_mean() {
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool_width(&x, 2).unwrap().data(), &[1.5, 3.5]);
        assert!(avgpool_width(&x, 5).is_err());
    }

    #[test]
    fn gap_shapes_and_values() {
        let x = Tensor::new(&[1, 15, 1, 22], 2.5);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[1, 15, 1]);
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));

        let mut rng = Rng::new(9);
        let x = uniform_init(&mut rng, &[2, 3, 2, 5], 1.0).unwrap();
        let y = global_avg_pool(&x).unwrap();
        for s in 0..2 {
            for c in 0..3 {
                for r in 0..2 {
                    let mean: f64 = (0..5).map(|k| x.get(&[s, c, r, k]).unwrap()).sum::<f64>() / 5.0;
                    assert!((y.get(&[s, c, r]).unwrap() - mean).abs() < 1e-15);
                }
            }
        }
        assert!(global_avg_pool(&Tensor::zeros(&[1, 1, 1, 0])).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for draw in 0..20 {
            let mut rng = Rng::new(draw);
            let x = uniform_init(&mut rng, &[2, 2, 3, 11], 1.0).unwrap();
            let probe = uniform_init(&mut rng, &[2, 2, 3, 2], 1.0).unwrap();
            let g = avgpool_width_backward(&probe, 11, 4).unwrap();
            let r = check(&x, &g, None, 1e-5, |xx| probe_dot(&probe, &avgpool_width(xx, 4).unwrap()));
            assert!(r.max_rel_error < 1e-6, "{r:?}");

            let probe = uniform_init(&mut rng, &[2, 2, 3], 1.0).unwrap();
            let g = global_avg_pool_backward(&probe, 11).unwrap();
            let r = check(&x, &g, None, 1e-5, |xx| probe_dot(&probe, &global_avg_pool(xx).unwrap()));
            assert!(r.max_rel_error < 1e-6, "{r:?}");
        }
    }

    proptest! {
        #[test]
        fn pooled_sum_is_windowed_sum(seed in 0u64..500, w in 1usize..30, window in 1usize..8) {
            prop_assume!(window <= w);
            let x = uniform_init(&mut Rng::new(seed), &[1, 2, 2, w], 1.0).unwrap();
            let y = avgpool_width(&x, window).unwrap();
            let used = (w / window) * window;
            let mut windowed = 0.0;
            for row in x.data().chunks_exact(w) {
                windowed += row[..used].iter().sum::<f64>();
            }
            prop_assert!((y.sum() - windowed / window as f64).abs() < 1e-10);
        }
    }
}
