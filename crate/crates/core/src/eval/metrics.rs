use crate::error::{Error, Result};

/// Binary confusion counts; the positive class is label 1 ("high").
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[usize], truth: &[usize]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::shape(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            c.record(p, t)?;
        }
        Ok(c)
    }

    pub fn record(&mut self, predicted: usize, truth: usize) -> Result<()> {
        match (predicted, truth) {
            (1, 1) => self.tp += 1,
            (0, 0) => self.tn += 1,
            (1, 0) => self.fp += 1,
            (0, 1) => self.fn_ += 1,
            _ => return Err(Error::invalid(format!("non-binary pair ({predicted}, {truth})"))),
        }
        Ok(())
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> Result<f64> {
        self.nonempty()?;
        Ok((self.tp + self.tn) as f64 / self.total() as f64)
    }

    /// `tp / (tp + (fp + fn) / 2)`; 1.0 when there is nothing positive to
    /// find and nothing was flagged.
    pub fn f1(&self) -> Result<f64> {
        self.nonempty()?;
        if self.tp + self.fp + self.fn_ == 0 {
            return Ok(1.0);
        }
        Ok(self.tp as f64 / (self.tp as f64 + (self.fp + self.fn_) as f64 / 2.0))
    }

    fn nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::invalid("empty confusion matrix"));
        }
        Ok(())
    }
}

/// Majority vote over segment predictions; a tie goes to class 1.
pub fn vote(predictions: &[usize]) -> Result<usize> {
    if predictions.is_empty() {
        return Err(Error::invalid("cannot vote over zero predictions"));
    }
    let ones = predictions.iter().filter(|&&p| p == 1).count();
    Ok(usize::from(2 * ones >= predictions.len()))
}
