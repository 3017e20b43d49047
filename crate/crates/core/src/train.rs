//! Adam and the training loop with validation-selected checkpointing.

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::layers::{softmax_cross_entropy, Mode};
use crate::model::{Model, ModelConfig, TensorMap};
use crate::preprocess::SegmentSet;
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one tensor per parameter path.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: TensorMap,
    pub v: TensorMap,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &TensorMap, config: AdamConfig) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            config,
        }
    }

    /// One bias-corrected Adam update of every parameter in `params`.
    pub fn step(&mut self, params: &mut TensorMap, grads: &TensorMap) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (path, p) in params.iter() {
            let g = grads.get(path)?;
            if g.shape() != p.shape() || self.m.get(path)?.shape() != p.shape() {
                return Err(Error::shape(format!("gradient for `{path}` has shape {:?}", g.shape())));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (path, p) in params.iter_mut() {
            let g = grads.get(path)?.data();
            let m = self.m.get_mut(path)?.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let v = self.v.get_mut(path)?.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            let (m, v) = (self.m.get(path)?.data(), self.v.get(path)?.data());
            for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                *pi -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            val_fraction: 0.2,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn apply_kv(mut self, kv: &mut KvMap) -> Result<Self> {
        self.max_epochs = kv.take_or("max_epochs", self.max_epochs)?;
        self.batch_size = kv.take_or("batch_size", self.batch_size)?;
        self.lr = kv.take_or("lr", self.lr)?;
        self.seed = kv.take_or("seed", self.seed)?;
        self.val_fraction = kv.take_or("val_fraction", self.val_fraction)?;
        self.shuffle = kv.take_or("shuffle", self.shuffle)?;
        self.validate()?;
        Ok(self)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("max_epochs", self.max_epochs);
        kv.insert("batch_size", self.batch_size);
        kv.insert("lr", self.lr);
        kv.insert("seed", self.seed);
        kv.insert("val_fraction", self.val_fraction);
        kv.insert("shuffle", self.shuffle);
        kv
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean cross-entropy over the epoch's minibatches.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tval_accuracy\n");
        for e in &self.epochs {
            out.push_str(&format!("{}\t{:.6}\t{:.6}\n", e.epoch, e.train_loss, e.val_accuracy));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters from the epoch with the highest validation accuracy.
    pub model: Model,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub history: History,
}

/// Seeded permutation split: the first `floor((1 - fraction)·n)` rows of
/// the permutation train, the rest validate.
pub fn split_train_val(set: &SegmentSet, fraction: f64, seed: u64) -> Result<(SegmentSet, SegmentSet)> {
    let n = set.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} segments into train and validation")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("validation fraction {fraction} outside (0, 1)")));
    }
    let n_train = ((1.0 - fraction) * n as f64 + 1e-9).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {n} segments leaves an empty side"
        )));
    }
    let perm = Rng::new(seed).permutation(n);
    Ok((set.select(&perm[..n_train])?, set.select(&perm[n_train..])?))
}

pub fn accuracy_of(predicted: &[usize], truth: &[usize]) -> f64 {
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// One minibatch update: train-mode forward, mean cross-entropy, backward,
/// Adam step, running-statistics update. Returns the batch loss.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    x: &Tensor,
    y: &[usize],
    dropout_rng: &mut Rng,
) -> Result<f64> {
    let trace = model.forward(x, Mode::Train, Some(dropout_rng))?;
    let (loss, grad) = softmax_cross_entropy(&trace.logits, y)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("training loss became {loss}")));
    }
    let (grads, _) = model.backward(&trace, &grad, false)?;
    adam.step(&mut model.params.weights, &grads)?;
    model.absorb_batch_stats(&trace)?;
    Ok(loss)
}

/// Trains from a fresh initialization and keeps the epoch with the best
/// validation accuracy (earliest on ties).
pub fn fit(train: &SegmentSet, val: &SegmentSet, model_config: &ModelConfig, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("fit needs at least one training and one validation segment"));
    }
    crate::alloc::retain_freed_memory();
    let mut model = Model::new(model_config.clone(), &mut Rng::new(derive_seed(cfg.seed, &[0])))?;
    let mut order_rng = Rng::new(derive_seed(cfg.seed, &[1]));
    let mut dropout_rng = Rng::new(derive_seed(cfg.seed, &[2]));
    let mut adam = AdamState::new(&model.params.weights, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });

    let mut history = History::default();
    let mut best: Option<(usize, f64, Model)> = None;
    let n = train.len();
    for epoch in 1..=cfg.max_epochs {
        let order: Vec<usize> = if cfg.shuffle { order_rng.permutation(n) } else { (0..n).collect() };
        let mut loss_sum = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let batch = train.select(rows)?;
            let loss = train_step(&mut model, &mut adam, &batch.x, &batch.y, &mut dropout_rng)?;
            loss_sum += loss * rows.len() as f64;
        }
        let val_accuracy = accuracy_of(&model.predict(&val.x)?, &val.y);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, model.clone()));
        }
    }
    let (best_epoch, best_val_accuracy, model) = best.expect("at least one epoch ran");
    Ok(FitResult {
        model,
        best_epoch,
        best_val_accuracy,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn scalar_map(v: f64) -> TensorMap {
        let mut m = TensorMap::new();
        m.insert("p", Tensor::from_vec(&[1], vec![v]).unwrap());
        m
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut p = scalar_map(0.7);
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &scalar_map(0.0)).unwrap();
        assert_eq!(p.get("p").unwrap().data(), &[0.7]);
        assert_eq!(st.t, 1);
    }

    /// Hand-rolled scalar Adam used as the reference.
    fn reference(p0: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        p
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let mut p = scalar_map(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &scalar_map(1.0)).unwrap();
        let got = p.get("p").unwrap().data()[0];
        assert_eq!(got, reference(0.0, &[1.0], 1e-3));
        assert!((got + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn trajectory_matches_reference() {
        let grads = [0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 1.1];
        let mut p = scalar_map(1.5);
        let mut st = AdamState::new(&p, AdamConfig { lr: 0.01, ..AdamConfig::default() });
        for g in grads {
            st.step(&mut p, &scalar_map(g)).unwrap();
        }
        let want = reference(1.5, &grads, 0.01);
        assert!((p.get("p").unwrap().data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn mismatched_grads_rejected() {
        let mut p = scalar_map(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let mut bad = TensorMap::new();
        bad.insert("p", Tensor::zeros(&[2]));
        assert!(st.step(&mut p, &bad).is_err());
        let mut other = TensorMap::new();
        other.insert("q", Tensor::zeros(&[1]));
        assert!(st.step(&mut p, &other).is_err());
        assert_eq!(st.t, 0);
    }

    fn toy_set(n: usize, seed: u64) -> SegmentSet {
        use crate::preprocess::{segment, Recording};
        use std::collections::BTreeMap;
        let mut rng = Rng::new(seed);
        let parts: Vec<SegmentSet> = (0..n)
            .map(|i| {
                let label = i % 2;
                let data: Vec<f64> = (0..2)
                    .flat_map(|ch| {
                        let amp = if ch == label { 3.0 } else { 0.3 };
                        let phase = rng.uniform() * 6.0;
                        (0..32)
                            .map(|t| amp * (phase + t as f64 * 1.3).sin() + 0.1 * rng.normal())
                            .collect::<Vec<_>>()
                    })
                    .collect();
                let rec = Recording::new(
                    Tensor::from_vec(&[2, 32], data).unwrap(),
                    16.0,
                    vec!["L1".into(), "R1".into()],
                    1,
                    i as u32,
                    BTreeMap::new(),
                )
                .unwrap();
                segment(&rec, 2.0, label).unwrap()
            })
            .collect();
        SegmentSet::concat(&parts).unwrap()
    }

    fn toy_model() -> ModelConfig {
        ModelConfig {
            num_channels: 2,
            sampling_rate: 16.0,
            segment_len: 32,
            num_t_kernels: 4,
            num_s_kernels: 4,
            hidden: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn separable_toy_reaches_full_val_accuracy() {
        let data = toy_set(80, 1);
        let (tr, va) = split_train_val(&data, 0.2, 3).unwrap();
        let cfg = TrainConfig { max_epochs: 50, batch_size: 16, lr: 1e-2, seed: 4, ..TrainConfig::default() };
        let fit = fit(&tr, &va, &toy_model(), &cfg).unwrap();
        assert_eq!(fit.best_val_accuracy, 1.0, "{}", fit.history.to_tsv());
        // the stored checkpoint reproduces its recorded score
        assert_eq!(accuracy_of(&fit.model.predict(&va.x).unwrap(), &va.y), fit.best_val_accuracy);
        let rec = fit.history.epochs[fit.best_epoch - 1];
        assert_eq!(rec.val_accuracy, fit.best_val_accuracy);
        assert!(fit.history.epochs[..fit.best_epoch - 1].iter().all(|e| e.val_accuracy < fit.best_val_accuracy));
    }

    #[test]
    fn one_epoch_history_and_initial_loss() {
        let data = toy_set(40, 2);
        let (tr, va) = split_train_val(&data, 0.2, 3).unwrap();
        let cfg = TrainConfig { max_epochs: 1, batch_size: 8, ..TrainConfig::default() };
        let fit = fit(&tr, &va, &toy_model(), &cfg).unwrap();
        assert_eq!(fit.history.epochs.len(), 1);
        assert_eq!(fit.best_epoch, 1);
        let loss = fit.history.epochs[0].train_loss;
        assert!((loss - std::f64::consts::LN_2).abs() < 0.15, "{loss}");
        assert_eq!(fit.history.to_tsv().lines().count(), 2);
    }

    #[test]
    fn full_batch_loss_decreases() {
        let data = toy_set(32, 5);
        let cfg = ModelConfig { dropout_p: 0.0, ..toy_model() };
        let mut model = Model::new(cfg, &mut Rng::new(6)).unwrap();
        let mut adam = AdamState::new(&model.params.weights, AdamConfig::default());
        let mut rng = Rng::new(0);
        let losses: Vec<f64> = (0..6)
            .map(|_| train_step(&mut model, &mut adam, &data.x, &data.y, &mut rng).unwrap())
            .collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn fit_is_bit_reproducible() {
        let data = toy_set(24, 7);
        let (tr, va) = split_train_val(&data, 0.25, 1).unwrap();
        let mc = ModelConfig { dropout_p: 0.0, ..toy_model() };
        let cfg = TrainConfig { max_epochs: 3, batch_size: 5, seed: 9, ..TrainConfig::default() };
        let a = fit(&tr, &va, &mc, &cfg).unwrap();
        let b = fit(&tr, &va, &mc, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        let c = fit(&tr, &va, &mc, &TrainConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn fit_rejects_empty_sets_and_bad_config() {
        let data = toy_set(4, 1);
        let empty = data.select(&[]).unwrap();
        assert!(fit(&data, &empty, &toy_model(), &TrainConfig::default()).is_err());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(fit(&data, &data, &toy_model(), &bad).is_err());
    }

    #[test]
    fn split_examples() {
        let data = toy_set(10, 1);
        let (tr, va) = split_train_val(&data, 0.2, 0).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let (tr2, _) = split_train_val(&data, 0.2, 0).unwrap();
        assert_eq!(tr, tr2);
        let (tr3, _) = split_train_val(&data, 0.2, 1).unwrap();
        assert_ne!(tr.trial_ids, tr3.trial_ids);
        assert!(split_train_val(&data.select(&[0]).unwrap(), 0.2, 0).is_err());
        assert!(split_train_val(&data, 0.95, 0).is_err());
        assert!(split_train_val(&data, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_disjoint_and_exhaustive(n in 2usize..40, frac in 0.05f64..0.95, seed in 0u64..1000) {
            let data = toy_set(n, 3);
            match split_train_val(&data, frac, seed) {
                Ok((tr, va)) => {
                    prop_assert_eq!(tr.len(), ((1.0 - frac) * n as f64 + 1e-9).floor() as usize);
                    let mut all: Vec<u32> = tr.trial_ids.iter().chain(&va.trial_ids).copied().collect();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..n as u32).collect::<Vec<_>>());
                }
                Err(_) => {
                    let k = ((1.0 - frac) * n as f64 + 1e-9).floor() as usize;
                    prop_assert!(k == 0 || k == n);
                }
            }
        }
    }
}
