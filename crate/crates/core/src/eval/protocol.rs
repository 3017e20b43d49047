//! Trial-wise cross-validation protocols.
//!
//! Seeds: fold assignment for subject `s` uses `derive_seed(seed, [s, u64::MAX])`,
//! the learner of fold `k` receives `derive_seed(seed, [s, k])`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::metrics::{vote, Confusion};
use crate::error::{Error, Result};
use crate::preprocess::SegmentSet;
use crate::rng::{derive_seed, Rng};

pub const CV_FOLDS: usize = 10;
const FOLD_ASSIGNMENT: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// Ten folds of whole trials, scored per segment.
    Cv10,
    /// One trial held out per fold, scored per trial by segment vote.
    Loto,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Cv10 => "cv10",
            Protocol::Loto => "loto",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cv10" => Ok(Protocol::Cv10),
            "loto" => Ok(Protocol::Loto),
            _ => Err(Error::config("protocol", format!("expected cv10 or loto, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FoldContext {
    pub subject_id: u32,
    pub fold: usize,
    pub seed: u64,
}

/// Anything that can be trained on one side of a fold and predict the other.
///
/// A learner may report several variants (e.g. one trained network scored
/// as-is and with kernels zeroed); `fit_predict` returns one prediction
/// vector per variant, in `variants()` order.
pub trait Learner: Sync {
    fn variants(&self) -> Vec<String>;

    fn fit_predict(&self, ctx: &FoldContext, train: &SegmentSet, test: &SegmentSet) -> Result<Vec<Vec<usize>>>;
}

/// One scored item: a segment under cv10, a whole trial under LOTO.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ItemPrediction {
    pub subject_id: u32,
    pub trial_id: u32,
    pub truth: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold_index: usize,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub f1: f64,
    pub predictions: Vec<ItemPrediction>,
}

impl FoldResult {
    pub fn from_items(fold_index: usize, predictions: Vec<ItemPrediction>) -> Result<Self> {
        let mut confusion = Confusion::default();
        for p in &predictions {
            confusion.record(p.predicted, p.truth)?;
        }
        Ok(Self {
            fold_index,
            confusion,
            accuracy: confusion.accuracy()?,
            f1: confusion.f1()?,
            predictions,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectResult {
    pub subject_id: u32,
    pub protocol: Protocol,
    pub variant: String,
    pub folds: Vec<FoldResult>,
    pub accuracy: f64,
    pub f1: f64,
}

impl SubjectResult {
    /// cv10 averages the fold scores; LOTO folds hold one trial each, so
    /// their confusions are pooled.
    pub fn new(subject_id: u32, protocol: Protocol, variant: String, folds: Vec<FoldResult>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::invalid("subject result without folds"));
        }
        let (accuracy, f1) = match protocol {
            Protocol::Cv10 => {
                let k = folds.len() as f64;
                (
                    folds.iter().map(|f| f.accuracy).sum::<f64>() / k,
                    folds.iter().map(|f| f.f1).sum::<f64>() / k,
                )
            }
            Protocol::Loto => {
                let pooled = folds.iter().fold(Confusion::default(), |acc, f| acc.merge(&f.confusion));
                (pooled.accuracy()?, pooled.f1()?)
            }
        };
        Ok(Self {
            subject_id,
            protocol,
            variant,
            folds,
            accuracy,
            f1,
        })
    }
}

/// Seeded shuffle of the trials, then round-robin into ten folds.
pub fn cv10_folds(trials: &[u32], seed: u64) -> Result<Vec<Vec<u32>>> {
    if trials.len() < CV_FOLDS {
        return Err(Error::invalid(format!(
            "{CV_FOLDS}-fold cross-validation needs at least {CV_FOLDS} trials, got {}",
            trials.len()
        )));
    }
    let mut order = trials.to_vec();
    Rng::new(seed).shuffle(&mut order);
    let mut folds = vec![Vec::new(); CV_FOLDS];
    for (i, t) in order.into_iter().enumerate() {
        folds[i % CV_FOLDS].push(t);
    }
    Ok(folds)
}

pub fn loto_folds(trials: &[u32]) -> Result<Vec<Vec<u32>>> {
    if trials.len() < 2 {
        return Err(Error::invalid(format!(
            "leave-one-trial-out needs at least 2 trials, got {}",
            trials.len()
        )));
    }
    Ok(trials.iter().map(|&t| vec![t]).collect())
}

pub fn protocol_folds(protocol: Protocol, set: &SegmentSet, seed: u64) -> Result<Vec<Vec<u32>>> {
    let trials = set.trials();
    match protocol {
        Protocol::Cv10 => cv10_folds(&trials, derive_seed(seed, &[u64::from(set.subject_id), FOLD_ASSIGNMENT])),
        Protocol::Loto => loto_folds(&trials),
    }
}

pub fn check_disjoint(train: &SegmentSet, test: &SegmentSet, fold: usize) -> Result<()> {
    let train_trials = train.trials();
    match test.trials().into_iter().find(|t| train_trials.contains(t)) {
        Some(trial) => Err(Error::Leakage { fold, trial }),
        None => Ok(()),
    }
}

/// Test side = segments of `test_trials`, train side = everything else.
pub fn split_fold(set: &SegmentSet, test_trials: &[u32], fold: usize) -> Result<(SegmentSet, SegmentSet)> {
    let train = set.filter_trials(|t| !test_trials.contains(&t))?;
    let test = set.filter_trials(|t| test_trials.contains(&t))?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid(format!("fold {fold} leaves an empty train or test side")));
    }
    check_disjoint(&train, &test, fold)?;
    Ok((train, test))
}

fn score_fold(protocol: Protocol, fold: usize, test: &SegmentSet, predicted: &[usize]) -> Result<FoldResult> {
    if predicted.len() != test.len() {
        return Err(Error::shape(format!(
            "learner returned {} predictions for {} segments",
            predicted.len(),
            test.len()
        )));
    }
    let items = match protocol {
        Protocol::Cv10 => (0..test.len())
            .map(|i| ItemPrediction {
                subject_id: test.subject_id,
                trial_id: test.trial_ids[i],
                truth: test.y[i],
                predicted: predicted[i],
            })
            .collect(),
        Protocol::Loto => test
            .trials()
            .into_iter()
            .map(|trial| {
                let rows: Vec<usize> = (0..test.len()).filter(|&i| test.trial_ids[i] == trial).collect();
                let votes: Vec<usize> = rows.iter().map(|&i| predicted[i]).collect();
                Ok(ItemPrediction {
                    subject_id: test.subject_id,
                    trial_id: trial,
                    truth: test.y[rows[0]],
                    predicted: vote(&votes)?,
                })
            })
            .collect::<Result<_>>()?,
    };
    FoldResult::from_items(fold, items)
}

/// Runs every fold of one subject (in parallel) and returns one result per
/// learner variant.
pub fn evaluate_subject(
    set: &SegmentSet,
    protocol: Protocol,
    learner: &dyn Learner,
    seed: u64,
) -> Result<Vec<SubjectResult>> {
    let folds = protocol_folds(protocol, set, seed)?;
    let variants = learner.variants();
    let per_fold: Vec<Vec<FoldResult>> = folds
        .par_iter()
        .enumerate()
        .map(|(k, test_trials)| {
            let (train, test) = split_fold(set, test_trials, k)?;
            let ctx = FoldContext {
                subject_id: set.subject_id,
                fold: k,
                seed: derive_seed(seed, &[u64::from(set.subject_id), k as u64]),
            };
            let predictions = learner.fit_predict(&ctx, &train, &test)?;
            if predictions.len() != variants.len() {
                return Err(Error::shape(format!(
                    "learner returned {} variants, declared {}",
                    predictions.len(),
                    variants.len()
                )));
            }
            predictions.iter().map(|p| score_fold(protocol, k, &test, p)).collect()
        })
        .collect::<Result<_>>()?;
    variants
        .into_iter()
        .enumerate()
        .map(|(v, name)| {
            let folds = per_fold.iter().map(|f| f[v].clone()).collect();
            SubjectResult::new(set.subject_id, protocol, name, folds)
        })
        .collect()
}

/// All subjects, results indexed `[variant][subject]` with subjects sorted
/// by id.
pub fn evaluate_subjects(
    sets: &[SegmentSet],
    protocol: Protocol,
    learner: &dyn Learner,
    seed: u64,
) -> Result<Vec<Vec<SubjectResult>>> {
    if sets.is_empty() {
        return Err(Error::invalid("no subjects to evaluate"));
    }
    let mut per_subject: Vec<Vec<SubjectResult>> = sets
        .par_iter()
        .map(|s| evaluate_subject(s, protocol, learner, seed))
        .collect::<Result<_>>()?;
    per_subject.sort_by_key(|r| r[0].subject_id);
    let variants = learner.variants().len();
    Ok((0..variants)
        .map(|v| per_subject.iter().map(|r| r[v].clone()).collect())
        .collect())
}

/// Single-variant cv10 for one subject.
pub fn cv10_trialwise(set: &SegmentSet, learner: &dyn Learner, seed: u64) -> Result<Vec<FoldResult>> {
    Ok(evaluate_subject(set, Protocol::Cv10, learner, seed)?.swap_remove(0).folds)
}

/// Single-variant leave-one-trial-out for one subject.
pub fn loto(set: &SegmentSet, learner: &dyn Learner, seed: u64) -> Result<Vec<FoldResult>> {
    Ok(evaluate_subject(set, Protocol::Loto, learner, seed)?.swap_remove(0).folds)
}
