use std::collections::BTreeMap;

use super::{LayerGrads, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Running statistics follow `running = (1 - m) * running + m * batch`.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over the `(n, h, w)` axes of NCHW input.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm<'a> {
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub running_mean: &'a Tensor,
    pub running_var: &'a Tensor,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    pub mode: Mode,
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Unbiased batch variance, the quantity folded into the running variance.
    pub batch_var: Vec<f64>,
}

fn dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[n, c, h, w] => Ok((n, c, h * w)),
        other => Err(Error::shape(format!("batchnorm input must be NCHW, got {other:?}"))),
    }
}

impl<'a> BatchNorm<'a> {
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, BnCache)> {
        let (n, c, hw) = dims(x)?;
        for t in [self.gamma, self.beta, self.running_mean, self.running_var] {
            if t.shape() != [c] {
                return Err(Error::shape(format!(
                    "batchnorm parameter {:?} for {c} channels",
                    t.shape()
                )));
            }
        }
        let count = n * hw;
        let data = x.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let mut unbiased = vec![0.0; c];
        match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::invalid(format!(
                        "batchnorm in train mode needs at least 2 values per channel, got {count}"
                    )));
                }
                for ch in 0..c {
                    let mut acc = 0.0;
                    for s in 0..n {
                        acc += data[(s * c + ch) * hw..][..hw].iter().sum::<f64>();
                    }
                    let m = acc / count as f64;
                    let mut sq = 0.0;
                    for s in 0..n {
                        sq += data[(s * c + ch) * hw..][..hw]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = sq / count as f64;
                    unbiased[ch] = sq / (count - 1) as f64;
                }
            }
            Mode::Eval => {
                mean.copy_from_slice(self.running_mean.data());
                var.copy_from_slice(self.running_var.data());
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
                for k in base..base + hw {
                    let xh = (data[k] - mean[ch]) * inv_std[ch];
                    x_hat.data_mut()[k] = xh;
                    y.data_mut()[k] = g * xh + b;
                }
            }
        }
        Ok((
            y,
            BnCache {
                mode,
                x_hat,
                inv_std,
                batch_mean: mean,
                batch_var: unbiased,
            },
        ))
    }

    pub fn backward(&self, cache: &BnCache, grad_out: &Tensor) -> Result<LayerGrads> {
        let (n, c, hw) = dims(grad_out)?;
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(Error::shape("batchnorm grad shape"));
        }
        let count = (n * hw) as f64;
        let g = grad_out.data();
        let xh = cache.x_hat.data();
        let mut grad_gamma = vec![0.0; c];
        let mut grad_beta = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for k in base..base + hw {
                    grad_gamma[ch] += g[k] * xh[k];
                    grad_beta[ch] += g[k];
                }
            }
        }
        let mut grad_x = Tensor::zeros(grad_out.shape());
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                let scale = self.gamma.data()[ch] * cache.inv_std[ch];
                for k in base..base + hw {
                    grad_x.data_mut()[k] = match cache.mode {
                        Mode::Eval => scale * g[k],
                        Mode::Train => {
                            scale / count
                                * (count * g[k] - grad_beta[ch] - xh[k] * grad_gamma[ch])
                        }
                    };
                }
            }
        }
        let mut grad_params = BTreeMap::new();
        grad_params.insert("gamma", Tensor::from_vec(&[c], grad_gamma)?);
        grad_params.insert("beta", Tensor::from_vec(&[c], grad_beta)?);
        Ok(LayerGrads {
            grad_input: Some(grad_x),
            grad_params,
        })
    }
}

/// Folds the batch statistics of a train-mode pass into the running buffers.
pub fn update_running(
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    cache: &BnCache,
    momentum: f64,
) {
    for (r, b) in running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
    for (r, b) in running_var.data_mut().iter_mut().zip(&cache.batch_var) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, probe_dot};
    use crate::rng::Rng;
    use crate::tensor::uniform_init;

    struct Owned {
        gamma: Tensor,
        beta: Tensor,
        mean: Tensor,
        var: Tensor,
    }

    impl Owned {
        fn new(c: usize, g: f64, b: f64) -> Self {
            Self {
                gamma: Tensor::new(&[c], g),
                beta: Tensor::new(&[c], b),
                mean: Tensor::zeros(&[c]),
                var: Tensor::new(&[c], 1.0),
            }
        }
        fn layer(&self) -> BatchNorm<'_> {
            BatchNorm {
                gamma: &self.gamma,
                beta: &self.beta,
                running_mean: &self.mean,
                running_var: &self.var,
                eps: BN_EPS,
            }
        }
    }

    fn channel_stats(y: &Tensor, ch: usize) -> (f64, f64) {
        let (n, c, hw) = dims(y).unwrap();
        let vals: Vec<f64> = (0..n)
            .flat_map(|s| y.data()[(s * c + ch) * hw..][..hw].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn train_mode_standardizes() {
        let x = uniform_init(&mut Rng::new(1), &[4, 3, 2, 8], 5.0)
            .unwrap()
            .map(|v| 3.0 * v + 7.0);
        let p = Owned::new(3, 1.0, 0.0);
        let (y, _) = p.layer().forward(&x, Mode::Train).unwrap();
        for ch in 0..3 {
            let (m, v) = channel_stats(&y, ch);
            assert!(m.abs() < 1e-6);
            // eps keeps the variance a hair below one
            assert!((v - 1.0).abs() < 1e-6, "var {v}");
        }
    }

    #[test]
    fn affine_applies_after_normalization() {
        let x = uniform_init(&mut Rng::new(2), &[8, 2, 1, 16], 1.0).unwrap();
        let p = Owned::new(2, 2.0, 3.0);
        let (y, _) = p.layer().forward(&x, Mode::Train).unwrap();
        for ch in 0..2 {
            let (m, v) = channel_stats(&y, ch);
            assert!((m - 3.0).abs() < 1e-6);
            assert!((v.sqrt() - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_and_eval_mode() {
        let x = uniform_init(&mut Rng::new(3), &[4, 2, 1, 10], 1.0)
            .unwrap()
            .map(|v| v + 2.0);
        let mut p = Owned::new(2, 1.0, 0.0);
        let (_, cache) = p.layer().forward(&x, Mode::Train).unwrap();
        update_running(&mut p.mean, &mut p.var, &cache, BN_MOMENTUM);
        for ch in 0..2 {
            assert!((p.mean.data()[ch] - 0.1 * cache.batch_mean[ch]).abs() < 1e-15);
            assert!((p.var.data()[ch] - (0.9 + 0.1 * cache.batch_var[ch])).abs() < 1e-15);
        }
        let (y, _) = p.layer().forward(&x, Mode::Eval).unwrap();
        let expect = (x.data()[0] - p.mean.data()[0]) / (p.var.data()[0] + BN_EPS).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn train_mode_needs_two_values() {
        let x = Tensor::zeros(&[1, 1, 1, 1]);
        let p = Owned::new(1, 1.0, 0.0);
        assert!(p.layer().forward(&x, Mode::Train).is_err());
        assert!(p.layer().forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for draw in 0..20 {
            let mut rng = Rng::new(50 + draw);
            let mode = if draw % 4 == 3 { Mode::Eval } else { Mode::Train };
            let x = uniform_init(&mut rng, &[3, 2, 2, 4], 2.0).unwrap();
            let mut p = Owned::new(2, 1.0, 0.0);
            p.gamma = uniform_init(&mut rng, &[2], 1.5).unwrap();
            p.beta = uniform_init(&mut rng, &[2], 1.0).unwrap();
            p.mean = uniform_init(&mut rng, &[2], 0.5).unwrap();
            p.var = uniform_init(&mut rng, &[2], 0.5).unwrap().map(|v| v + 1.0);
            let probe = uniform_init(&mut rng, x.shape(), 1.0).unwrap();
            let (_, cache) = p.layer().forward(&x, mode).unwrap();
            let grads = p.layer().backward(&cache, &probe).unwrap();

            let r = check(&x, grads.grad_input.as_ref().unwrap(), None, 1e-5, |xx| {
                probe_dot(&probe, &p.layer().forward(xx, mode).unwrap().0)
            });
            assert!(r.max_rel_error < 1e-4, "x {mode:?} {r:?}");
            let r = check(&p.gamma, &grads.grad_params["gamma"], None, 1e-5, |gg| {
                let l = BatchNorm { gamma: gg, ..p.layer() };
                probe_dot(&probe, &l.forward(&x, mode).unwrap().0)
            });
            assert!(r.max_rel_error < 1e-4, "gamma {r:?}");
            let r = check(&p.beta, &grads.grad_params["beta"], None, 1e-5, |bb| {
                let l = BatchNorm { beta: bb, ..p.layer() };
                probe_dot(&probe, &l.forward(&x, mode).unwrap().0)
            });
            assert!(r.max_rel_error < 1e-4, "beta {r:?}");
        }
    }
}
