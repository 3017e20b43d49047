//! Datasets: subjects holding trials, the binary container, and the
//! synthetic generator.

mod format;
mod synth;

pub use format::{read_dataset, read_dataset_from, write_dataset, write_dataset_to, DATASET_MAGIC, DATASET_VERSION};
pub use synth::{pink_noise, synth_generate, Effect, SynthSpec};

use crate::error::{Error, Result};
use crate::preprocess::{segment, PreprocessConfig, Recording, SegmentSet};

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: u32,
    pub trials: Vec<Recording>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
}

impl Subject {
    /// Segments every trial and labels it by `dimension` against `threshold`.
    pub fn segments(&self, seconds: f64, dimension: &str, threshold: f64) -> Result<SegmentSet> {
        if self.trials.is_empty() {
            return Err(Error::invalid(format!("subject {} has no trials", self.id)));
        }
        let parts = self
            .trials
            .iter()
            .map(|t| segment(t, seconds, t.label(dimension, threshold)?))
            .collect::<Result<Vec<_>>>()?;
        SegmentSet::concat(&parts)
    }
}

impl Dataset {
    /// Checks ids are unique and every trial agrees on rate and channels.
    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<u32> = self.subjects.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format("duplicate subject id".into()));
        }
        for s in &self.subjects {
            let mut trial_ids: Vec<u32> = s.trials.iter().map(|t| t.trial_id).collect();
            trial_ids.sort_unstable();
            if trial_ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Format(format!("duplicate trial id in subject {}", s.id)));
            }
            for t in &s.trials {
                t.validate()?;
                if t.subject_id != s.id {
                    return Err(Error::Format(format!(
                        "trial {} claims subject {} inside subject {}",
                        t.trial_id, t.subject_id, s.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn map_recordings(&self, f: impl Fn(&Recording) -> Result<Recording>) -> Result<Self> {
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                Ok(Subject {
                    id: s.id,
                    trials: s.trials.iter().map(&f).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { subjects })
    }

    pub fn preprocess(&self, cfg: &PreprocessConfig) -> Result<Self> {
        self.map_recordings(|r| crate::preprocess::preprocess(r, cfg))
    }

    /// Channel count shared by every trial.
    pub fn num_channels(&self) -> Result<usize> {
        let mut counts = self.subjects.iter().flat_map(|s| &s.trials).map(Recording::num_channels);
        let first = counts.next().ok_or_else(|| Error::invalid("dataset has no trials"))?;
        if counts.any(|c| c != first) {
            return Err(Error::invalid("trials disagree on channel count"));
        }
        Ok(first)
    }

    /// Sampling rate shared by every trial.
    pub fn sampling_rate(&self) -> Result<f64> {
        let mut rates = self.subjects.iter().flat_map(|s| &s.trials).map(|t| t.fs);
        let first = rates.next().ok_or_else(|| Error::invalid("dataset has no trials"))?;
        if rates.any(|r| r != first) {
            return Err(Error::invalid("trials disagree on sampling rate"));
        }
        Ok(first)
    }

    pub fn channel_names(&self) -> Result<Vec<String>> {
        self.subjects
            .iter()
            .flat_map(|s| &s.trials)
            .next()
            .map(|t| t.channel_names.clone())
            .ok_or_else(|| Error::invalid("dataset has no trials"))
    }
}
