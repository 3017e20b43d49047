use super::*;
use crate::rng::Rng;
use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn rec_from(rows: Vec<Vec<f64>>, fs: f64, names: &[&str]) -> Recording {
    let c = rows.len();
    let n = rows[0].len();
    Recording::new(
        Tensor::from_vec(&[c, n], rows.concat()).unwrap(),
        fs,
        names.iter().map(|s| s.to_string()).collect(),
        1,
        7,
        BTreeMap::from([("arousal".to_string(), 6.0), ("valence".to_string(), 5.0)]),
    )
    .unwrap()
}

fn noise_rec(c: usize, n: usize, fs: f64, seed: u64) -> Recording {
    let mut rng = Rng::new(seed);
    let names: Vec<String> = (0..c).map(|i| format!("ch{i}")).collect();
    let rows = (0..c).map(|_| (0..n).map(|_| rng.normal()).collect()).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    rec_from(rows, fs, &refs)
}

fn peak_frequency(x: &[f64], fs: f64) -> f64 {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let half = buf.len() / 2;
    let k = (1..half).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
    k as f64 * fs / buf.len() as f64
}

#[test]
fn recording_validates_names() {
    let err = Recording::new(Tensor::zeros(&[2, 4]), 128.0, vec!["a".into()], 0, 0, BTreeMap::new());
    assert!(err.is_err());
    assert!(Recording::new(Tensor::zeros(&[1, 4]), 0.0, vec!["a".into()], 0, 0, BTreeMap::new()).is_err());
}

#[test]
fn decimate_rate_and_length() {
    let rec = noise_rec(2, 512 * 10, 512.0, 1);
    let d = decimate(&rec, 4).unwrap();
    assert_eq!(d.fs, 128.0);
    assert_eq!(d.num_samples(), 1280);
    assert_eq!(d.channel(1)[3], rec.channel(1)[12]);
    assert_eq!(decimate(&rec, 1).unwrap(), rec);
    assert!(decimate(&rec, 0).is_err());
}

#[test]
fn decimated_sine_keeps_its_frequency() {
    let fs = 512.0;
    let x: Vec<f64> = (0..512 * 8).map(|i| (2.0 * std::f64::consts::PI * 8.0 * i as f64 / fs).sin()).collect();
    let rec = rec_from(vec![x], fs, &["a"]);
    let d = decimate(&rec, 4).unwrap();
    assert!((peak_frequency(d.channel(0), d.fs) - 8.0).abs() < 1e-9);
}

#[test]
fn car_examples() {
    let rec = rec_from(vec![vec![1.0, 2.0], vec![3.0, 6.0]], 128.0, &["a", "b"]);
    let out = common_average_reference(&rec).unwrap();
    assert_eq!(out.channel(0), &[-1.0, -2.0]);
    assert_eq!(out.channel(1), &[1.0, 2.0]);
    let single = rec_from(vec![vec![1.0, 2.0]], 128.0, &["a"]);
    assert!(common_average_reference(&single).is_err());
}

#[test]
fn car_zero_sum_and_idempotent() {
    let rec = noise_rec(6, 300, 128.0, 2);
    let once = common_average_reference(&rec).unwrap();
    for t in 0..300 {
        let s: f64 = (0..6).map(|i| once.channel(i)[t]).sum();
        assert!(s.abs() < 1e-12);
    }
    let twice = common_average_reference(&once).unwrap();
    for (a, b) in once.data.data().iter().zip(twice.data.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn baseline_crops() {
    let rec = noise_rec(2, 63 * 128, 128.0, 3);
    let out = remove_baseline(&rec, 3.0, 0.0).unwrap();
    assert_eq!(out.num_samples(), 60 * 128);
    assert_eq!(out.channel(0)[0], rec.channel(0)[384]);
    assert_eq!(remove_baseline(&rec, 0.0, 0.0).unwrap(), rec);
    let long = noise_rec(1, 100 * 128, 128.0, 4);
    assert_eq!(remove_baseline(&long, 30.0, 30.0).unwrap().num_samples(), 40 * 128);
    assert!(remove_baseline(&long, 60.0, 40.0).is_err());
}

const DEAP_CHANNELS: [&str; 32] = [
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7", "CP5", "CP1", "P3", "P7", "PO3", "O1", "Oz", "Pz", "Fp2",
    "AF4", "Fz", "F4", "F8", "FC6", "FC2", "Cz", "C4", "T8", "CP6", "CP2", "P4", "P8", "PO4", "O2",
];

#[test]
fn deap_layout_reorders_to_28() {
    let rows: Vec<Vec<f64>> = (0..32).map(|i| vec![i as f64; 4]).collect();
    let rec = rec_from(rows, 128.0, &DEAP_CHANNELS);
    let m = Montage::preset("deap").unwrap();
    let out = reorder_channels(&rec, &m).unwrap();
    assert_eq!(out.num_channels(), 28);
    assert_eq!(out.channel_names[0], "Fp1");
    assert_eq!(out.channel_names[14], "Fp2");
    // Fp2 was row 16 of the input
    assert_eq!(out.channel(14)[0], 16.0);
}

#[test]
fn reorder_identity_and_errors() {
    let rec = noise_rec(4, 10, 128.0, 5);
    let m = Montage {
        left: vec!["ch0".into(), "ch1".into()],
        right: vec!["ch2".into(), "ch3".into()],
    };
    assert_eq!(reorder_channels(&rec, &m).unwrap(), rec);
    let missing = Montage {
        left: vec!["ch0".into()],
        right: vec!["zz".into()],
    };
    assert!(reorder_channels(&rec, &missing).is_err());
    let unequal = Montage {
        left: vec!["ch0".into(), "ch1".into()],
        right: vec!["ch2".into()],
    };
    assert!(reorder_channels(&rec, &unequal).is_err());
}

proptest! {
    #[test]
    fn reorder_undoes_any_permutation(seed in 0u64..500) {
        let rec = noise_rec(6, 8, 128.0, seed);
        let m = Montage {
            left: vec!["ch0".into(), "ch1".into(), "ch2".into()],
            right: vec!["ch3".into(), "ch4".into(), "ch5".into()],
        };
        let perm = Rng::new(seed).permutation(6);
        let shuffled = Recording {
            data: {
                let rows: Vec<f64> = perm.iter().flat_map(|&i| rec.channel(i).to_vec()).collect();
                Tensor::from_vec(&[6, 8], rows).unwrap()
            },
            channel_names: perm.iter().map(|&i| rec.channel_names[i].clone()).collect(),
            ..rec.clone()
        };
        prop_assert_eq!(reorder_channels(&shuffled, &m).unwrap(), reorder_channels(&rec, &m).unwrap());
    }

    #[test]
    fn reorder_preserves_row_multiset(seed in 0u64..200) {
        let rec = noise_rec(8, 5, 128.0, seed);
        let m = Montage {
            left: vec!["ch6".into(), "ch1".into()],
            right: vec!["ch3".into(), "ch0".into()],
        };
        let out = reorder_channels(&rec, &m).unwrap();
        for i in 0..out.num_channels() {
            let row = out.channel(i);
            prop_assert!((0..rec.num_channels()).any(|j| rec.channel(j) == row));
        }
    }

    #[test]
    fn segments_partition_the_trial(secs in 1usize..30, win in 1usize..6) {
        let rec = noise_rec(2, secs * 16, 16.0, secs as u64);
        if win > secs {
            prop_assert!(segment(&rec, win as f64, 0).is_err());
        } else {
            let s = segment(&rec, win as f64, 1).unwrap();
            let l = win * 16;
            prop_assert_eq!(s.len(), secs / win);
            for ch in 0..2 {
                let mut rebuilt = Vec::new();
                for k in 0..s.len() {
                    rebuilt.extend_from_slice(&s.x.data()[(k * 2 + ch) * l..][..l]);
                }
                let tail = &rec.channel(ch)[rebuilt.len()..];
                rebuilt.extend_from_slice(tail);
                prop_assert_eq!(&rebuilt[..], rec.channel(ch));
            }
            prop_assert!(s.y.iter().all(|&y| y == 1));
            prop_assert!(s.trial_ids.iter().all(|&t| t == 7));
        }
    }
}

#[test]
fn segment_examples() {
    let rec = noise_rec(3, 60 * 128, 128.0, 6);
    let s = segment(&rec, 4.0, 0).unwrap();
    assert_eq!(s.x.shape(), &[15, 1, 3, 512]);
    let rec = noise_rec(1, 10 * 128, 128.0, 6);
    assert_eq!(segment(&rec, 4.0, 0).unwrap().len(), 2);
    let rec = noise_rec(1, 4 * 128, 128.0, 6);
    let s = segment(&rec, 4.0, 0).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s.x.data(), rec.data.data());
    assert_eq!(segment(&rec, 2.5, 0).unwrap().len(), 1);
    assert!(segment(&rec, 4.003, 0).is_err());
}

#[test]
fn binarize() {
    assert_eq!(binarize_label(9.0, 5.0).unwrap(), 1);
    assert_eq!(binarize_label(1.0, 5.0).unwrap(), 0);
    assert_eq!(binarize_label(5.0, 5.0).unwrap(), 0);
    assert_eq!(binarize_label(5.01, 5.0).unwrap(), 1);
    assert!(binarize_label(0.5, 5.0).is_err());
    assert!(binarize_label(9.5, 5.0).is_err());
    let rec = noise_rec(1, 4, 128.0, 0);
    assert_eq!(rec.label("arousal", 5.0).unwrap(), 1);
    assert_eq!(rec.label("valence", 5.0).unwrap(), 0);
    assert!(rec.label("dominance", 5.0).is_err());
}

#[test]
fn segment_set_helpers() {
    let a = segment(&noise_rec(2, 64, 16.0, 1), 1.0, 0).unwrap();
    let b = SegmentSet {
        trial_ids: vec![9; 4],
        ..segment(&noise_rec(2, 64, 16.0, 2), 1.0, 1).unwrap()
    };
    let both = SegmentSet::concat(&[a.clone(), b]).unwrap();
    assert_eq!(both.len(), 8);
    assert_eq!(both.trials(), vec![7, 9]);
    let only = both.filter_trials(|t| t == 7).unwrap();
    assert_eq!(only, a);
}

#[test]
fn full_pipeline_deap_shape_and_determinism() {
    let mut rng = Rng::new(8);
    let rows: Vec<Vec<f64>> = (0..32).map(|_| (0..63 * 512).map(|_| rng.normal()).collect()).collect();
    let raw = rec_from(rows, 512.0, &DEAP_CHANNELS);
    let cfg = PreprocessConfig::default();
    let a = preprocess(&raw, &cfg).unwrap();
    assert_eq!(a.fs, 128.0);
    assert_eq!(a.data.shape(), &[28, 60 * 128]);
    let b = preprocess(&raw, &cfg).unwrap();
    let bits = |r: &Recording| r.data.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(segment(&a, 4.0, 0).unwrap().x.shape(), &[15, 1, 28, 512]);
}

#[test]
fn pipeline_order_is_crop_decimate_filter_car_reorder() {
    let mut rng = Rng::new(9);
    let names = ["R1", "L1", "R2", "L2"];
    let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..20 * 256).map(|_| rng.normal()).collect()).collect();
    let raw = rec_from(rows, 256.0, &names);
    let cfg = PreprocessConfig {
        baseline_pre_s: 2.0,
        baseline_post_s: 1.0,
        target_fs: Some(128.0),
        band: (4.0, 45.0),
        car: true,
        montage: "generic:2".into(),
    };
    let manual = {
        let r = remove_baseline(&raw, 2.0, 1.0).unwrap();
        let r = decimate(&r, 2).unwrap();
        let r = bandpass(&r, 4.0, 45.0).unwrap();
        let r = common_average_reference(&r).unwrap();
        reorder_channels(&r, &Montage::generic(2)).unwrap()
    };
    assert_eq!(preprocess(&raw, &cfg).unwrap(), manual);

    // an upper edge above the new Nyquist forces filtering at the original rate
    let wide = PreprocessConfig { band: (4.0, 70.0), ..cfg };
    let manual = {
        let r = remove_baseline(&raw, 2.0, 1.0).unwrap();
        let r = bandpass(&r, 4.0, 70.0).unwrap();
        let r = decimate(&r, 2).unwrap();
        let r = common_average_reference(&r).unwrap();
        reorder_channels(&r, &Montage::generic(2)).unwrap()
    };
    assert_eq!(preprocess(&raw, &wide).unwrap(), manual);
}

#[test]
fn config_kv_round_trip_and_errors() {
    let cfg = PreprocessConfig::default();
    let text = cfg.to_kv().render();
    let mut kv = KvMap::parse(&text).unwrap();
    let back = PreprocessConfig::default().apply_kv(&mut kv).unwrap();
    kv.finish().unwrap();
    assert_eq!(back, cfg);

    let mut kv = KvMap::parse("montage = generic:0").unwrap();
    assert!(PreprocessConfig::default().apply_kv(&mut kv).is_err());
    let mut kv = KvMap::parse("target_fs = 0\nmontage = generic:3").unwrap();
    let c = PreprocessConfig::default().apply_kv(&mut kv).unwrap();
    assert_eq!(c.target_fs, None);
    assert_eq!(c.resolve_montage().unwrap().num_channels(), 6);
}

#[test]
fn non_integer_rate_ratio_is_rejected() {
    let raw = noise_rec(2, 1000, 100.0, 1);
    let cfg = PreprocessConfig {
        baseline_pre_s: 0.0,
        target_fs: Some(30.0),
        band: (1.0, 10.0),
        montage: "generic:1".into(),
        ..PreprocessConfig::default()
    };
    assert!(preprocess(&raw, &cfg).is_err());
}
