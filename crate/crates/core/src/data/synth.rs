//! Deterministic synthetic EEG with a planted, hemisphere-asymmetric effect.
//!
//! Every channel carries independent pink (1/f) noise. Trials of the effect
//! class additionally carry one band-limited source per trial, added to the
//! target channels with RMS `amplitude_ratio · noise_scale · g`, where
//! `g = asymmetry_gain` on left-hemisphere rows (index < c/2) and
//! `1 / asymmetry_gain` on right-hemisphere rows.
//!
//! Channels are emitted in canonical order with names `L1..Lk, R1..Rk`.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::kv::{join_list, KvMap};
use crate::preprocess::{Montage, Recording};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Effect {
    pub band: (f64, f64),
    pub target_channels: Vec<usize>,
    pub amplitude_ratio: f64,
    pub asymmetry_gain: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub subjects: usize,
    pub trials_per_subject: usize,
    pub trial_seconds: f64,
    pub fs: f64,
    pub channels: usize,
    pub effect: Effect,
    /// RMS of the pink background.
    pub noise_scale: f64,
    /// Class whose trials carry the effect.
    pub effect_class: usize,
    /// Fraction of trials labelled 1 (rounded to a whole count per subject).
    pub high_fraction: f64,
    /// Rating dimension that carries the class.
    pub dimension: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            subjects: 1,
            trials_per_subject: 40,
            trial_seconds: 60.0,
            fs: 128.0,
            channels: 8,
            effect: Effect {
                band: (8.0, 12.0),
                target_channels: vec![0, 4],
                amplitude_ratio: 2.0,
                asymmetry_gain: 1.5,
            },
            noise_scale: 1.0,
            effect_class: 1,
            high_fraction: 0.5,
            dimension: "arousal".into(),
        }
    }
}

const DIMENSIONS: [&str; 2] = ["arousal", "valence"];

impl SynthSpec {
    pub fn samples_per_trial(&self) -> usize {
        (self.trial_seconds * self.fs).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c < 2 || c % 2 != 0 {
            return Err(Error::config("channels", format!("must be even and >= 2, got {c}")));
        }
        if self.subjects == 0 {
            return Err(Error::config("subjects", "must be >= 1"));
        }
        if self.trials_per_subject == 0 {
            return Err(Error::config("trials_per_subject", "must be >= 1"));
        }
        if !(self.fs > 0.0) {
            return Err(Error::config("fs", "must be positive"));
        }
        if !(self.trial_seconds > 0.0) || self.samples_per_trial() < 2 {
            return Err(Error::config("trial_seconds", "trial must span at least 2 samples"));
        }
        let (lo, hi) = self.effect.band;
        if !(0.0 < lo && lo < hi && hi <= self.fs / 2.0) {
            return Err(Error::config("effect_band", format!("need 0 < lo < hi <= fs/2, got {lo}-{hi}")));
        }
        if self.effect.target_channels.is_empty() {
            return Err(Error::config("target_channels", "at least one target channel required"));
        }
        if let Some(&bad) = self.effect.target_channels.iter().find(|&&t| t >= c) {
            return Err(Error::config("target_channels", format!("index {bad} out of range for {c} channels")));
        }
        if !(self.effect.amplitude_ratio >= 0.0) {
            return Err(Error::config("amplitude_ratio", "must be >= 0"));
        }
        if !(self.effect.asymmetry_gain > 0.0) {
            return Err(Error::config("asymmetry_gain", "must be > 0"));
        }
        if !(self.noise_scale > 0.0) {
            return Err(Error::config("noise_scale", "must be > 0"));
        }
        if self.effect_class > 1 {
            return Err(Error::config("effect_class", "must be 0 or 1"));
        }
        if !(0.0..=1.0).contains(&self.high_fraction) {
            return Err(Error::config("high_fraction", "must lie in [0, 1]"));
        }
        if self.dimension.is_empty() {
            return Err(Error::config("dimension", "must not be empty"));
        }
        Ok(())
    }

    pub fn apply_kv(mut self, kv: &mut KvMap) -> Result<Self> {
        self.seed = kv.take_or("seed", self.seed)?;
        self.subjects = kv.take_or("subjects", self.subjects)?;
        self.trials_per_subject = kv.take_or("trials_per_subject", self.trials_per_subject)?;
        self.trial_seconds = kv.take_or("trial_seconds", self.trial_seconds)?;
        self.fs = kv.take_or("fs", self.fs)?;
        self.channels = kv.take_or("channels", self.channels)?;
        self.effect.band.0 = kv.take_or("effect_band_lo", self.effect.band.0)?;
        self.effect.band.1 = kv.take_or("effect_band_hi", self.effect.band.1)?;
        if let Some(t) = kv.take_list("target_channels")? {
            self.effect.target_channels = t;
        }
        self.effect.amplitude_ratio = kv.take_or("amplitude_ratio", self.effect.amplitude_ratio)?;
        self.effect.asymmetry_gain = kv.take_or("asymmetry_gain", self.effect.asymmetry_gain)?;
        self.noise_scale = kv.take_or("noise_scale", self.noise_scale)?;
        self.effect_class = kv.take_or("effect_class", self.effect_class)?;
        self.high_fraction = kv.take_or("high_fraction", self.high_fraction)?;
        self.dimension = kv.take_or("dimension", self.dimension)?;
        self.validate()?;
        Ok(self)
    }

    /// Parses a spec file; unknown keys are rejected.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text)?;
        let spec = Self::default().apply_kv(&mut kv)?;
        kv.finish()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("seed", self.seed);
        kv.insert("subjects", self.subjects);
        kv.insert("trials_per_subject", self.trials_per_subject);
        kv.insert("trial_seconds", self.trial_seconds);
        kv.insert("fs", self.fs);
        kv.insert("channels", self.channels);
        kv.insert("effect_band_lo", self.effect.band.0);
        kv.insert("effect_band_hi", self.effect.band.1);
        kv.insert("target_channels", join_list(&self.effect.target_channels));
        kv.insert("amplitude_ratio", self.effect.amplitude_ratio);
        kv.insert("asymmetry_gain", self.effect.asymmetry_gain);
        kv.insert("noise_scale", self.noise_scale);
        kv.insert("effect_class", self.effect_class);
        kv.insert("high_fraction", self.high_fraction);
        kv.insert("dimension", &self.dimension);
        kv
    }
}

fn white(n: usize, rng: &mut Rng) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.normal(), 0.0)).collect()
}

/// Shapes white noise in the frequency domain: bin `k` (and its mirror) is
/// multiplied by `gain(k)`; the result is rescaled to RMS `rms`.
fn shaped_noise(n: usize, rng: &mut Rng, rms: f64, gain: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let mut buf = white(n, rng);
    planner.plan_fft_forward(n).process(&mut buf);
    for k in 0..n {
        let folded = k.min(n - k);
        buf[k] *= gain(folded);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if cur == 0.0 {
        return x;
    }
    x.into_iter().map(|v| v * rms / cur).collect()
}

/// Pink noise: power spectral density ∝ 1/f, zero mean, RMS `rms`.
pub fn pink_noise(n: usize, rng: &mut Rng, rms: f64) -> Vec<f64> {
    shaped_noise(n, rng, rms, |k| if k == 0 { 0.0 } else { 1.0 / (k as f64).sqrt() })
}

/// White noise restricted to `[lo, hi]` Hz, RMS `rms`.
fn band_noise(n: usize, fs: f64, (lo, hi): (f64, f64), rng: &mut Rng, rms: f64) -> Vec<f64> {
    let df = fs / n as f64;
    shaped_noise(n, rng, rms, |k| {
        let f = k as f64 * df;
        if f >= lo && f <= hi && k > 0 {
            1.0
        } else {
            0.0
        }
    })
}

fn rating(class: usize, rng: &mut Rng) -> f64 {
    // classes split at 5: low = 1..=5, high = 6..=9
    if class == 1 {
        6.0 + rng.below(4) as f64
    } else {
        1.0 + rng.below(5) as f64
    }
}

fn generate_trial(spec: &SynthSpec, subject: u32, trial: u32, label: usize) -> Result<Recording> {
    let mut rng = Rng::new(derive_seed(spec.seed, &[u64::from(subject), u64::from(trial)]));
    let (c, n) = (spec.channels, spec.samples_per_trial());
    let mut rows: Vec<Vec<f64>> = (0..c).map(|_| pink_noise(n, &mut rng, spec.noise_scale)).collect();
    let e = &spec.effect;
    if label == spec.effect_class && e.amplitude_ratio > 0.0 {
        let source = band_noise(n, spec.fs, e.band, &mut rng, 1.0);
        for &ch in &e.target_channels {
            let g = if ch < c / 2 { e.asymmetry_gain } else { 1.0 / e.asymmetry_gain };
            let amp = e.amplitude_ratio * spec.noise_scale * g;
            for (v, s) in rows[ch].iter_mut().zip(&source) {
                *v += amp * s;
            }
        }
    }
    let mut ratings = BTreeMap::new();
    ratings.insert(spec.dimension.clone(), rating(label, &mut rng));
    for dim in DIMENSIONS {
        if dim != spec.dimension {
            ratings.insert(dim.to_string(), 1.0 + rng.below(9) as f64);
        }
    }
    let names = Montage::generic(c / 2).order().map(str::to_string).collect();
    Recording::new(Tensor::from_vec(&[c, n], rows.concat())?, spec.fs, names, subject, trial, ratings)
}

/// Subjects are numbered from 1, trials from 1 within each subject.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let trials = spec.trials_per_subject;
    let n_high = (spec.high_fraction * trials as f64).round() as usize;
    let subjects = (1..=spec.subjects as u32)
        .map(|sid| {
            let mut labels: Vec<usize> = (0..trials).map(|i| usize::from(i < n_high)).collect();
            Rng::new(derive_seed(spec.seed, &[u64::from(sid)])).shuffle(&mut labels);
            let trials = labels
                .iter()
                .enumerate()
                .map(|(i, &label)| generate_trial(spec, sid, i as u32 + 1, label))
                .collect::<Result<_>>()?;
            Ok(Subject { id: sid, trials })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { subjects })
}
