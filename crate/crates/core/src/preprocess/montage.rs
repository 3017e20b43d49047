//! Mirror-pair montages that fix the left-then-right row order.

use crate::error::{Error, Result};

/// `left[k]` and `right[k]` are anatomical mirrors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Montage {
    pub left: Vec<String>,
    pub right: Vec<String>,
}

const PRESETS: &[(&str, &str)] = &[("deap", include_str!("../../presets/deap.pairs"))];

impl Montage {
    /// Parses `left right` lines; `#` comments and blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut left = Vec::new();
        let mut right = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let names: Vec<&str> = line.split_whitespace().collect();
            let [l, r] = names.as_slice() else {
                return Err(Error::config(
                    format!("montage line {}", lineno + 1),
                    format!("expected `left right`, got {line:?}"),
                ));
            };
            left.push(l.to_string());
            right.push(r.to_string());
        }
        let m = Self { left, right };
        m.validate()?;
        Ok(m)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::config("montage", format!("unknown preset {name:?}")))?;
        Self::parse(text)
    }

    /// `L1..Lk` / `R1..Rk`, the names the synthetic generator emits.
    pub fn generic(pairs: usize) -> Self {
        Self {
            left: (1..=pairs).map(|i| format!("L{i}")).collect(),
            right: (1..=pairs).map(|i| format!("R{i}")).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.left.len() != self.right.len() {
            return Err(Error::config(
                "montage",
                format!("{} left vs {} right channels", self.left.len(), self.right.len()),
            ));
        }
        if self.left.is_empty() {
            return Err(Error::config("montage", "no channel pairs"));
        }
        let mut all: Vec<&String> = self.left.iter().chain(&self.right).collect();
        all.sort();
        if let Some(w) = all.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config("montage", format!("channel {} listed twice", w[0])));
        }
        Ok(())
    }

    /// Canonical row order: all left channels, then their mirrors.
    pub fn order(&self) -> impl Iterator<Item = &str> {
        self.left.iter().chain(&self.right).map(String::as_str)
    }

    pub fn num_channels(&self) -> usize {
        2 * self.left.len()
    }
}
