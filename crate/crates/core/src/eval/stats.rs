//! Two-tailed Wilcoxon signed-rank test.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest tie-free sample that uses the exact null distribution.
pub const EXACT_MAX_N: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wilcoxon {
    /// Sum of the ranks of positive differences `a - b`.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub exact: bool,
}

/// Ranks `1..=n` of `values`, averaged over ties, plus the tie-group sizes.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// `P(W = s)` for `s = 0..=n(n+1)/2` under random signs on ranks `1..=n`.
fn exact_distribution(n: usize) -> Vec<f64> {
    let max = n * (n + 1) / 2;
    let mut dist = vec![0.0; max + 1];
    dist[0] = 1.0;
    for r in 1..=n {
        for s in (0..=max).rev() {
            let with = if s >= r { dist[s - r] } else { 0.0 };
            dist[s] = 0.5 * (dist[s] + with);
        }
    }
    dist
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite paired difference".into()));
    }
    if diffs.is_empty() {
        return Err(Error::invalid("all paired differences are zero"));
    }
    let n = diffs.len();
    if n < 5 {
        return Err(Error::invalid(format!("only {n} nonzero differences; need at least 5")));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();

    if ties.is_empty() && n <= EXACT_MAX_N {
        let dist = exact_distribution(n);
        let w_int = w.round() as usize;
        let lower: f64 = dist[..=w_int].iter().sum();
        let upper: f64 = dist[w_int..].iter().sum();
        return Ok(Wilcoxon {
            statistic: w,
            p_value: (2.0 * lower.min(upper)).min(1.0),
            n,
            exact: true,
        });
    }

    Ok(Wilcoxon {
        statistic: w,
        p_value: normal_p(w, n, &ties),
        n,
        exact: false,
    })
}

/// Normal approximation with tie and continuity corrections.
fn normal_p(w: f64, n: usize, ties: &[usize]) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}
