mod common;

use common::{band_power, loglog_slope, mann_whitney_p, median, welch};
use tsception::data::{pink_noise, read_dataset, synth_generate, write_dataset, Effect, SynthSpec};
use tsception::Rng;

fn spec(amplitude_ratio: f64, asymmetry_gain: f64) -> SynthSpec {
    SynthSpec {
        trials_per_subject: 20,
        trial_seconds: 20.0,
        channels: 4,
        effect: Effect {
            band: (8.0, 12.0),
            target_channels: vec![0, 2],
            amplitude_ratio,
            asymmetry_gain,
        },
        ..SynthSpec::default()
    }
}

fn powers_by_class(spec: &SynthSpec, channel: usize) -> (Vec<f64>, Vec<f64>) {
    let ds = synth_generate(spec).unwrap();
    let mut low = Vec::new();
    let mut high = Vec::new();
    for t in &ds.subjects[0].trials {
        let p = band_power(t.channel(channel), t.fs, 8.0, 12.0);
        if t.label("arousal", 5.0).unwrap() == 1 {
            high.push(p);
        } else {
            low.push(p);
        }
    }
    (low, high)
}

#[test]
fn pink_noise_psd_slope_is_minus_one() {
    let mut rng = Rng::new(5);
    let fs = 128.0;
    let mut acc: Option<Vec<f64>> = None;
    let mut freqs = Vec::new();
    for _ in 0..8 {
        let x = pink_noise(128 * 120, &mut rng, 1.0);
        let (f, p) = welch(&x, fs, 512);
        freqs = f;
        acc = Some(match acc {
            None => p,
            Some(a) => a.iter().zip(&p).map(|(u, v)| u + v).collect(),
        });
    }
    let psd = acc.unwrap();
    let (f, p): (Vec<f64>, Vec<f64>) = freqs
        .iter()
        .zip(&psd)
        .filter(|(f, _)| **f >= 1.0 && **f <= 40.0)
        .map(|(f, p)| (*f, *p))
        .unzip();
    let slope = loglog_slope(&f, &p);
    assert!((slope + 1.0).abs() <= 0.3, "slope {slope}");
}

#[test]
fn planted_effect_doubles_band_power() {
    let s = spec(2.0, 1.5);
    for ch in [0, 2] {
        let (low, high) = powers_by_class(&s, ch);
        let floor = 2.0 * median(&low);
        assert!(high.iter().all(|&p| p >= floor), "channel {ch}: {high:?} vs {floor}");
    }
}

#[test]
fn null_effect_is_indistinguishable() {
    let s = spec(0.0, 1.0);
    for ch in 0..4 {
        let (low, high) = powers_by_class(&s, ch);
        let p = mann_whitney_p(&low, &high);
        assert!(p >= 0.01, "channel {ch}: p = {p}");
    }
}

#[test]
fn same_seed_same_file() {
    let dir = tempfile::tempdir().unwrap();
    let s = SynthSpec { trials_per_subject: 4, trial_seconds: 4.0, ..spec(2.0, 1.5) };
    let (a, b) = (dir.path().join("a.tsc"), dir.path().join("b.tsc"));
    write_dataset(&synth_generate(&s).unwrap(), &a).unwrap();
    write_dataset(&synth_generate(&s).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_dataset(&a).unwrap(), synth_generate(&s).unwrap());
}
