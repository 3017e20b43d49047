//! Input-gradient saliency and its per-channel summary.
//!
//! Score: the pre-softmax logit of a class (the predicted one unless told
//! otherwise). A sample's channel map is the time-mean of `|∂score/∂x|`,
//! min-max rescaled to [-1, 1]; subject maps average normalized sample maps
//! and rescale again.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::Model;
use crate::preprocess::SegmentSet;
use crate::tensor::Tensor;

const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub per_channel: Vec<f64>,
    /// `None` for averages across subjects.
    pub subject_id: Option<u32>,
    pub dimension: String,
    /// Number of segments averaged into the map.
    pub samples: usize,
}

/// Per-sample input gradients `[n, c, l]` of `logit[classes[i]]`.
///
/// In eval mode samples do not interact, so one backward pass with a one-hot
/// upstream gradient per row yields every sample's gradient.
pub fn input_gradients(model: &Model, x: &Tensor, classes: &[usize]) -> Result<Tensor> {
    let [n, 1, c, l] = *x.shape() else {
        return Err(Error::shape(format!("expected [n, 1, c, l] input, got {:?}", x.shape())));
    };
    if classes.len() != n {
        return Err(Error::shape(format!("{} target classes for {n} samples", classes.len())));
    }
    let k = model.config.classes;
    if let Some(bad) = classes.iter().find(|&&cl| cl >= k) {
        return Err(Error::invalid(format!("class {bad} out of range for {k} classes")));
    }
    let mut out = Vec::with_capacity(n * c * l);
    for start in (0..n).step_by(CHUNK) {
        let rows: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let xb = x.select_axis0(&rows)?;
        let trace = model.forward(&xb, Mode::Eval, None)?;
        let mut upstream = Tensor::zeros(trace.logits.shape());
        for (i, &r) in rows.iter().enumerate() {
            upstream.data_mut()[i * k + classes[r]] = 1.0;
        }
        let (_, gx) = model.backward(&trace, &upstream, true)?;
        out.extend_from_slice(gx.expect("input gradient requested").data());
    }
    Tensor::from_vec(&[n, c, l], out)
}

/// Gradient `[c, l]` of one segment's class logit.
pub fn input_gradient(model: &Model, x: &Tensor, class: usize) -> Result<Tensor> {
    if x.shape().first() != Some(&1) {
        return Err(Error::shape(format!("expected a single segment, got {:?}", x.shape())));
    }
    let g = input_gradients(model, x, &[class])?;
    let shape = g.shape()[1..].to_vec();
    g.reshape(&shape)
}

/// `v ← 2·(v − min)/(max − min) − 1`; a constant vector maps to zeros.
pub fn normalize_unit_range(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| 2.0 * (v - lo) / (hi - lo) - 1.0).collect()
}

/// Time-mean of `|grad|` per channel, rescaled to [-1, 1].
pub fn channel_map(grad: &Tensor) -> Result<Vec<f64>> {
    let [c, l] = *grad.shape() else {
        return Err(Error::shape(format!("expected [c, l] gradient, got {:?}", grad.shape())));
    };
    if l == 0 {
        return Err(Error::shape("gradient has no time samples"));
    }
    let means: Vec<f64> = (0..c)
        .map(|ch| grad.data()[ch * l..(ch + 1) * l].iter().map(|g| g.abs()).sum::<f64>() / l as f64)
        .collect();
    Ok(normalize_unit_range(&means))
}

/// Elementwise mean of the maps, rescaled to [-1, 1].
pub fn subject_average(maps: &[SaliencyMap]) -> Result<SaliencyMap> {
    let first = maps.first().ok_or_else(|| Error::invalid("no saliency maps to average"))?;
    let c = first.per_channel.len();
    if maps.iter().any(|m| m.per_channel.len() != c) {
        return Err(Error::shape("saliency maps with different channel counts"));
    }
    let mut mean = vec![0.0; c];
    for m in maps {
        for (acc, v) in mean.iter_mut().zip(&m.per_channel) {
            *acc += v / maps.len() as f64;
        }
    }
    let subject_id = first.subject_id.filter(|&id| maps.iter().all(|m| m.subject_id == Some(id)));
    Ok(SaliencyMap {
        per_channel: normalize_unit_range(&mean),
        subject_id,
        dimension: first.dimension.clone(),
        samples: maps.iter().map(|m| m.samples).sum(),
    })
}

/// Averaged map over a subject's segments, optionally only those whose
/// label is `class`. Each segment is explained with respect to its
/// predicted class.
pub fn subject_saliency(model: &Model, set: &SegmentSet, dimension: &str, class: Option<usize>) -> Result<SaliencyMap> {
    let rows: Vec<usize> = (0..set.len()).filter(|&i| class.is_none_or(|k| set.y[i] == k)).collect();
    if rows.is_empty() {
        return Err(Error::invalid(format!("subject {} has no segments to explain", set.subject_id)));
    }
    let x = set.x.select_axis0(&rows)?;
    let predicted = model.predict(&x)?;
    let grads = input_gradients(model, &x, &predicted)?;
    let maps = (0..rows.len())
        .map(|i| {
            Ok(SaliencyMap {
                per_channel: channel_map(&grads.index_axis0(i)?)?,
                subject_id: Some(set.subject_id),
                dimension: dimension.to_string(),
                samples: 1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    subject_average(&maps)
}

/// Indices of the `k` largest entries, largest first (ties → lower index).
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `channel<TAB>value` table.
pub fn channel_map_tsv(names: &[String], map: &SaliencyMap) -> Result<String> {
    if names.len() != map.per_channel.len() {
        return Err(Error::shape(format!(
            "{} channel names for a {}-channel map",
            names.len(),
            map.per_channel.len()
        )));
    }
    let mut out = format!(
        "# subject={} dimension={} samples={}\nchannel\tvalue\n",
        map.subject_id.map_or_else(|| "all".to_string(), |id| id.to_string()),
        map.dimension,
        map.samples
    );
    for (name, v) in names.iter().zip(&map.per_channel) {
        let _ = writeln!(out, "{name}\t{v}");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{numeric_partial, rel_error};
    use crate::model::ModelConfig;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn small_model(seed: u64) -> Model {
        let cfg = ModelConfig {
            num_channels: 4,
            sampling_rate: 16.0,
            segment_len: 32,
            num_t_kernels: 3,
            num_s_kernels: 3,
            hidden: 6,
            ..ModelConfig::default()
        };
        let mut model = Model::new(cfg, &mut Rng::new(seed)).unwrap();
        // non-trivial running statistics
        let mut rng = Rng::new(seed + 1);
        for t in model.params.stats.iter_mut().map(|(_, t)| t) {
            for v in t.data_mut() {
                *v = 0.5 + rng.uniform();
            }
        }
        model
    }

    fn random_input(n: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::from_vec(&[n, 1, 4, 32], (0..n * 128).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = small_model(1);
        let x = random_input(1, 2);
        for class in 0..2 {
            let g = input_gradient(&model, &x, class).unwrap();
            let mut rng = Rng::new(3 + class as u64);
            for _ in 0..5 {
                let i = rng.below(x.len() as u64) as usize;
                let num = numeric_partial(&x, i, 1e-5, &mut |probe| {
                    model.logits(probe, 1).unwrap().data()[class]
                });
                assert!(rel_error(g.data()[i], num) < 1e-4, "{} vs {num}", g.data()[i]);
            }
        }
    }

    #[test]
    fn batched_gradients_match_single() {
        let model = small_model(4);
        let x = random_input(3, 5);
        let batch = input_gradients(&model, &x, &[0, 1, 1]).unwrap();
        for (i, class) in [0, 1, 1].into_iter().enumerate() {
            let single = input_gradient(&model, &x.index_axis0(i).unwrap().reshape(&[1, 1, 4, 32]).unwrap(), class).unwrap();
            let row = batch.index_axis0(i).unwrap();
            let err = row.data().iter().zip(single.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let mut model = small_model(6);
        for t in model.params.weights.iter_mut().map(|(_, t)| t) {
            t.fill(0.0);
        }
        let g = input_gradient(&model, &random_input(1, 7), 1).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn gradient_is_deterministic_and_validates_class() {
        let model = small_model(8);
        let x = random_input(1, 9);
        let scaled = x.map(|v| v * 1.0);
        assert_eq!(input_gradient(&model, &x, 0).unwrap(), input_gradient(&model, &scaled, 0).unwrap());
        assert!(input_gradient(&model, &x, 2).is_err());
        assert!(input_gradient(&model, &random_input(2, 1), 0).is_err());
    }

    #[test]
    fn channel_map_examples() {
        let constant = Tensor::new(&[3, 5], 0.7);
        assert_eq!(channel_map(&constant).unwrap(), vec![0.0; 3]);
        let mut g = Tensor::new(&[3, 4], 0.1);
        g.set(&[1, 2], -9.0).unwrap();
        let m = channel_map(&g).unwrap();
        assert_eq!(m[1], 1.0);
        assert_eq!(m[0], -1.0);
        assert!(channel_map(&Tensor::zeros(&[2, 0])).is_err());
    }

    fn map(v: Vec<f64>) -> SaliencyMap {
        SaliencyMap {
            per_channel: v,
            subject_id: Some(1),
            dimension: "arousal".into(),
            samples: 1,
        }
    }

    #[test]
    fn subject_average_examples() {
        let m = map(vec![-1.0, 0.5, 1.0]);
        assert_eq!(subject_average(std::slice::from_ref(&m)).unwrap().per_channel, m.per_channel);
        let neg = map(m.per_channel.iter().map(|v| -v).collect());
        assert_eq!(subject_average(&[m.clone(), neg]).unwrap().per_channel, vec![0.0; 3]);

        let maps = [map(vec![-1.0, 0.0, 1.0]), map(vec![1.0, -1.0, 0.2]), map(vec![0.4, 1.0, -1.0])];
        let mean = [0.4 / 3.0, 0.0, 0.2 / 3.0];
        let (lo, hi) = (0.0, 0.4 / 3.0);
        let want: Vec<f64> = mean.iter().map(|v| 2.0 * (v - lo) / (hi - lo) - 1.0).collect();
        let got = subject_average(&maps).unwrap();
        for (g, w) in got.per_channel.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert_eq!(got.samples, 3);
        assert!(subject_average(&[]).is_err());
        assert!(subject_average(&[map(vec![0.0]), map(vec![0.0, 1.0])]).is_err());
    }

    #[test]
    fn subject_saliency_stays_in_range() {
        let model = small_model(10);
        let x = random_input(6, 11);
        let set = SegmentSet {
            x,
            y: vec![0, 1, 0, 1, 1, 1],
            trial_ids: vec![1, 1, 2, 2, 3, 3],
            subject_id: 7,
        };
        let m = subject_saliency(&model, &set, "valence", Some(1)).unwrap();
        assert_eq!((m.samples, m.subject_id), (4, Some(7)));
        assert!(m.per_channel.iter().all(|v| (-1.0..=1.0).contains(v)));
        let names: Vec<String> = ["L1", "L2", "R1", "R2"].map(String::from).to_vec();
        let tsv = channel_map_tsv(&names, &m).unwrap();
        assert_eq!(tsv.lines().count(), 6);
        assert!(channel_map_tsv(&names[..3], &m).is_err());
        let empty = SegmentSet { y: vec![0; 6], ..set };
        assert!(subject_saliency(&model, &empty, "valence", Some(1)).is_err());
    }

    #[test]
    fn top_k_orders_by_value() {
        assert_eq!(top_k(&[0.1, 0.9, -1.0, 0.9], 2), vec![1, 3]);
        assert_eq!(top_k(&[0.5], 3), vec![0]);
    }

    proptest! {
        #[test]
        fn channel_map_preserves_order(values in prop::collection::vec(-5.0f64..5.0, 2..40), c in 1usize..6) {
            let l = values.len();
            let mut data = Vec::new();
            let mut rng = Rng::new(l as u64);
            for _ in 0..c {
                data.extend(values.iter().map(|v| v * rng.uniform_range(0.1, 3.0)));
            }
            let g = Tensor::from_vec(&[c, l], data).unwrap();
            let m = channel_map(&g).unwrap();
            prop_assert!(m.iter().all(|v| (-1.0..=1.0).contains(v)));
            let means: Vec<f64> = (0..c).map(|ch| g.data()[ch * l..(ch + 1) * l].iter().map(|x| x.abs()).sum::<f64>()).collect();
            let mut by_mean: Vec<usize> = (0..c).collect();
            by_mean.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
            for w in by_mean.windows(2) {
                prop_assert!(m[w[0]] <= m[w[1]]);
            }
        }
    }
}
