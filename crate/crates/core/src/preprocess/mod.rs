//! Signal chain from raw trials to network-ready segments.
//!
//! Order: baseline crop → decimate → band-pass → common average reference
//! → mirror reorder. When the band's upper edge would not fit below the
//! decimated Nyquist frequency, the band-pass runs at the original rate
//! before decimation instead. Segmentation happens later, once the label
//! dimension is known.

mod filter;
mod montage;

use std::collections::BTreeMap;

pub use filter::{butterworth_magnitude, BandPass, Section, BUTTER_ORDER};
pub use montage::Montage;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::tensor::Tensor;

/// One trial of one subject: `data` is `[channels, samples]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub data: Tensor,
    pub fs: f64,
    pub channel_names: Vec<String>,
    pub subject_id: u32,
    pub trial_id: u32,
    /// Self-assessment per dimension (`arousal`, `valence`, ...), 1..9.
    pub ratings: BTreeMap<String, f64>,
}

impl Recording {
    pub fn new(
        data: Tensor,
        fs: f64,
        channel_names: Vec<String>,
        subject_id: u32,
        trial_id: u32,
        ratings: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let rec = Self {
            data,
            fs,
            channel_names,
            subject_id,
            trial_id,
            ratings,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.data.shape() {
            &[c, _] if c == self.channel_names.len() => {}
            other => {
                return Err(Error::shape(format!(
                    "recording data {other:?} does not match {} channel names",
                    self.channel_names.len()
                )))
            }
        }
        if !(self.fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {}", self.fs)));
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn num_samples(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        let n = self.num_samples();
        &self.data.data()[i * n..(i + 1) * n]
    }

    fn with_data(&self, data: Tensor, fs: f64) -> Self {
        Self {
            data,
            fs,
            ..self.clone()
        }
    }

    fn map_channels(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let c = self.num_channels();
        let rows: Vec<Vec<f64>> = (0..c).map(|i| f(self.channel(i))).collect();
        let n = rows.first().map_or(0, Vec::len);
        Ok(self.with_data(Tensor::from_vec(&[c, n], rows.concat())?, self.fs))
    }

    pub fn label(&self, dimension: &str, threshold: f64) -> Result<usize> {
        let rating = self.ratings.get(dimension).ok_or_else(|| {
            Error::invalid(format!(
                "trial {} of subject {} has no {dimension:?} rating",
                self.trial_id, self.subject_id
            ))
        })?;
        binarize_label(*rating, threshold)
    }
}

/// Network inputs of one subject with trial provenance per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSet {
    /// `[n, 1, c, l]`
    pub x: Tensor,
    pub y: Vec<usize>,
    pub trial_ids: Vec<u32>,
    pub subject_id: u32,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            x: self.x.select_axis0(rows)?,
            y: rows.iter().map(|&r| self.y[r]).collect(),
            trial_ids: rows.iter().map(|&r| self.trial_ids[r]).collect(),
            subject_id: self.subject_id,
        })
    }

    /// Rows whose trial id satisfies `keep`, in their original order.
    pub fn filter_trials(&self, keep: impl Fn(u32) -> bool) -> Result<Self> {
        let rows: Vec<usize> = (0..self.len()).filter(|&r| keep(self.trial_ids[r])).collect();
        self.select(&rows)
    }

    pub fn concat(parts: &[SegmentSet]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("no segment sets to concatenate"))?;
        if parts.iter().any(|p| p.subject_id != first.subject_id) {
            return Err(Error::invalid("segment sets from different subjects"));
        }
        Ok(Self {
            x: Tensor::concat(&parts.iter().map(|p| &p.x).collect::<Vec<_>>(), 0)?,
            y: parts.iter().flat_map(|p| p.y.iter().copied()).collect(),
            trial_ids: parts.iter().flat_map(|p| p.trial_ids.iter().copied()).collect(),
            subject_id: first.subject_id,
        })
    }

    /// Distinct trial ids in order of first appearance.
    pub fn trials(&self) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for &t in &self.trial_ids {
            if out.last() != Some(&t) && !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }
}

/// Zero-phase Butterworth band-pass of every channel.
pub fn bandpass(rec: &Recording, lo: f64, hi: f64) -> Result<Recording> {
    let filter = BandPass::design(BUTTER_ORDER, lo, hi, rec.fs)?;
    rec.map_channels(|ch| filter.filtfilt(ch))
}

/// Keeps every `factor`-th sample. No anti-alias filter is applied here.
pub fn decimate(rec: &Recording, factor: usize) -> Result<Recording> {
    if factor == 0 {
        return Err(Error::invalid("decimation factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(rec.clone());
    }
    let out = rec.map_channels(|ch| ch.iter().step_by(factor).copied().collect())?;
    Ok(Recording {
        fs: rec.fs / factor as f64,
        ..out
    })
}

/// Subtracts the across-channel mean at every time point.
pub fn common_average_reference(rec: &Recording) -> Result<Recording> {
    let (c, n) = (rec.num_channels(), rec.num_samples());
    if c < 2 {
        return Err(Error::invalid("common average reference needs at least 2 channels"));
    }
    let mut mean = vec![0.0; n];
    for i in 0..c {
        for (m, v) in mean.iter_mut().zip(rec.channel(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    rec.map_channels(|ch| ch.iter().zip(&mean).map(|(v, m)| v - m).collect())
}

/// Drops `pre_s` seconds from the start and `post_s` from the end.
pub fn remove_baseline(rec: &Recording, pre_s: f64, post_s: f64) -> Result<Recording> {
    if pre_s < 0.0 || post_s < 0.0 {
        return Err(Error::invalid("baseline durations must be non-negative"));
    }
    let pre = samples_for(pre_s, rec.fs, "baseline")?;
    let post = samples_for(post_s, rec.fs, "baseline")?;
    let n = rec.num_samples();
    if pre + post >= n {
        return Err(Error::invalid(format!(
            "cropping {pre}+{post} samples leaves nothing of a {n}-sample trial"
        )));
    }
    rec.map_channels(|ch| ch[pre..n - post].to_vec())
}

/// Rows become `montage.left ++ montage.right`; unlisted channels are dropped.
pub fn reorder_channels(rec: &Recording, montage: &Montage) -> Result<Recording> {
    montage.validate()?;
    let index: Vec<usize> = montage
        .order()
        .map(|name| {
            rec.channel_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::invalid(format!("channel {name:?} not present in recording")))
        })
        .collect::<Result<_>>()?;
    let n = rec.num_samples();
    let mut data = Vec::with_capacity(index.len() * n);
    for &i in &index {
        data.extend_from_slice(rec.channel(i));
    }
    Ok(Recording {
        data: Tensor::from_vec(&[index.len(), n], data)?,
        channel_names: montage.order().map(str::to_string).collect(),
        ..rec.clone()
    })
}

/// Non-overlapping windows of `seconds`; the remainder is dropped.
pub fn segment(rec: &Recording, seconds: f64, label: usize) -> Result<SegmentSet> {
    let l = samples_for(seconds, rec.fs, "segment length")?;
    let (c, n) = (rec.num_channels(), rec.num_samples());
    if l == 0 || l > n {
        return Err(Error::invalid(format!("segment of {l} samples does not fit a {n}-sample trial")));
    }
    let count = n / l;
    let mut data = Vec::with_capacity(count * c * l);
    for k in 0..count {
        for i in 0..c {
            data.extend_from_slice(&rec.channel(i)[k * l..(k + 1) * l]);
        }
    }
    Ok(SegmentSet {
        x: Tensor::from_vec(&[count, 1, c, l], data)?,
        y: vec![label; count],
        trial_ids: vec![rec.trial_id; count],
        subject_id: rec.subject_id,
    })
}

/// 1 ("high") iff `rating > threshold`.
pub fn binarize_label(rating: f64, threshold: f64) -> Result<usize> {
    if !(1.0..=9.0).contains(&rating) {
        return Err(Error::invalid(format!("rating {rating} outside 1..9")));
    }
    Ok(usize::from(rating > threshold))
}

/// `seconds · fs` as a sample count; errors unless it is (nearly) integral.
fn samples_for(seconds: f64, fs: f64, what: &str) -> Result<usize> {
    let exact = seconds * fs;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-6 {
        return Err(Error::invalid(format!("{what} of {seconds} s is not a whole number of samples at {fs} Hz")));
    }
    Ok(rounded as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub baseline_pre_s: f64,
    pub baseline_post_s: f64,
    /// `None` keeps the recorded rate.
    pub target_fs: Option<f64>,
    pub band: (f64, f64),
    pub car: bool,
    /// Preset name or `generic:<pairs>`.
    pub montage: String,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            baseline_pre_s: 3.0,
            baseline_post_s: 0.0,
            target_fs: Some(128.0),
            band: (4.0, 45.0),
            car: true,
            montage: "deap".to_string(),
        }
    }
}

impl PreprocessConfig {
    /// Reads `baseline_pre_s`, `baseline_post_s`, `target_fs` (0 = keep),
    /// `band_lo`, `band_hi`, `car`, and `montage` (a preset name or
    /// `generic:<pairs>`).
    pub fn apply_kv(mut self, kv: &mut KvMap) -> Result<Self> {
        self.baseline_pre_s = kv.take_or("baseline_pre_s", self.baseline_pre_s)?;
        self.baseline_post_s = kv.take_or("baseline_post_s", self.baseline_post_s)?;
        if let Some(fs) = kv.take::<f64>("target_fs")? {
            self.target_fs = (fs > 0.0).then_some(fs);
        }
        self.band.0 = kv.take_or("band_lo", self.band.0)?;
        self.band.1 = kv.take_or("band_hi", self.band.1)?;
        self.car = kv.take_or("car", self.car)?;
        self.montage = kv.take_or("montage", self.montage)?;
        self.resolve_montage()?;
        Ok(self)
    }

    pub fn resolve_montage(&self) -> Result<Montage> {
        match self.montage.strip_prefix("generic:") {
            Some(k) => match k.parse() {
                Ok(pairs) if pairs > 0 => Ok(Montage::generic(pairs)),
                _ => Err(Error::config("montage", format!("bad pair count in {:?}", self.montage))),
            },
            None => Montage::preset(&self.montage),
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("baseline_pre_s", self.baseline_pre_s);
        kv.insert("baseline_post_s", self.baseline_post_s);
        kv.insert("target_fs", self.target_fs.unwrap_or(0.0));
        kv.insert("band_lo", self.band.0);
        kv.insert("band_hi", self.band.1);
        kv.insert("car", self.car);
        kv.insert("montage", &self.montage);
        kv
    }
}

/// Runs the full chain on one recording.
pub fn preprocess(rec: &Recording, cfg: &PreprocessConfig) -> Result<Recording> {
    let mut rec = remove_baseline(rec, cfg.baseline_pre_s, cfg.baseline_post_s)?;
    let factor = match cfg.target_fs {
        None => 1,
        Some(target) => {
            let ratio = rec.fs / target;
            if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
                return Err(Error::config(
                    "target_fs",
                    format!("{} Hz is not an integer fraction of {} Hz", target, rec.fs),
                ));
            }
            ratio.round() as usize
        }
    };
    let (lo, hi) = cfg.band;
    if hi < rec.fs / factor as f64 / 2.0 {
        rec = decimate(&rec, factor)?;
        rec = bandpass(&rec, lo, hi)?;
    } else {
        rec = bandpass(&rec, lo, hi)?;
        rec = decimate(&rec, factor)?;
    }
    if cfg.car {
        rec = common_average_reference(&rec)?;
    }
    reorder_channels(&rec, &cfg.resolve_montage()?)
}

#[cfg(test)]
mod tests;
