//! Cross-subject aggregation and the report files.
//!
//! Standard deviations are sample (n − 1) deviations; a single subject
//! reports 0.

use std::fmt::Write as _;

use super::protocol::{Protocol, SubjectResult};
use super::stats::{wilcoxon_signed_rank, Wilcoxon};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubjectRow {
    pub subject_id: u32,
    pub accuracy: f64,
    pub f1: f64,
    pub folds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub protocol: Protocol,
    pub variant: String,
    /// Sorted by subject id.
    pub rows: Vec<SubjectRow>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn aggregate(results: &[SubjectResult]) -> Result<RunReport> {
    let first = results.first().ok_or_else(|| Error::invalid("no subject results to aggregate"))?;
    if results.iter().any(|r| r.protocol != first.protocol || r.variant != first.variant) {
        return Err(Error::invalid("cannot aggregate results of different protocols or variants"));
    }
    let mut rows: Vec<SubjectRow> = results
        .iter()
        .map(|r| SubjectRow {
            subject_id: r.subject_id,
            accuracy: r.accuracy,
            f1: r.f1,
            folds: r.folds.len(),
        })
        .collect();
    rows.sort_by_key(|r| r.subject_id);
    if rows.windows(2).any(|w| w[0].subject_id == w[1].subject_id) {
        return Err(Error::invalid("subject listed twice"));
    }
    let (mean_accuracy, std_accuracy) = mean_std(&rows.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let (mean_f1, std_f1) = mean_std(&rows.iter().map(|r| r.f1).collect::<Vec<_>>());
    Ok(RunReport {
        protocol: first.protocol,
        variant: first.variant.clone(),
        rows,
        mean_accuracy,
        std_accuracy,
        mean_f1,
        std_f1,
    })
}

/// Minimum number of subjects for subject-level pairing; below it the test
/// pairs individual folds.
pub const MIN_SUBJECT_PAIRS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    pub variant: String,
    /// `subject` or `fold`.
    pub unit: &'static str,
    pub pairs: usize,
    /// `Err` holds why the test could not run (e.g. all pairs equal).
    pub test: std::result::Result<Wilcoxon, String>,
}

/// Paired two-tailed Wilcoxon test of accuracies, `baseline` vs `other`.
pub fn compare(baseline: &[SubjectResult], other: &[SubjectResult]) -> Result<Comparison> {
    let (Some(b0), Some(o0)) = (baseline.first(), other.first()) else {
        return Err(Error::invalid("nothing to compare"));
    };
    let mut a = Vec::new();
    let mut b = Vec::new();
    let unit = if baseline.len() >= MIN_SUBJECT_PAIRS { "subject" } else { "fold" };
    for base in baseline {
        let var = other
            .iter()
            .find(|r| r.subject_id == base.subject_id)
            .ok_or_else(|| Error::invalid(format!("subject {} missing from {}", base.subject_id, o0.variant)))?;
        if unit == "subject" {
            a.push(base.accuracy);
            b.push(var.accuracy);
        } else {
            if base.folds.len() != var.folds.len() {
                return Err(Error::invalid("fold counts differ between variants"));
            }
            a.extend(base.folds.iter().map(|f| f.accuracy));
            b.extend(var.folds.iter().map(|f| f.accuracy));
        }
    }
    Ok(Comparison {
        baseline: b0.variant.clone(),
        variant: o0.variant.clone(),
        unit,
        pairs: a.len(),
        test: wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string()),
    })
}

/// Machine-readable report. Numbers use shortest round-trip formatting.
pub fn render_tsv(reports: &[RunReport], comparisons: &[Comparison]) -> String {
    let mut out = String::new();
    if let Some(r) = reports.first() {
        let _ = writeln!(out, "# protocol={}", r.protocol);
    }
    out.push_str("variant\tsubject\taccuracy\tf1\tfolds\n");
    for r in reports {
        for row in &r.rows {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", r.variant, row.subject_id, row.accuracy, row.f1, row.folds);
        }
        let _ = writeln!(out, "{}\tmean\t{}\t{}\t", r.variant, r.mean_accuracy, r.mean_f1);
        let _ = writeln!(out, "{}\tstd\t{}\t{}\t", r.variant, r.std_accuracy, r.std_f1);
    }
    if !comparisons.is_empty() {
        out.push_str("\nbaseline\tvariant\tunit\tpairs\tW\tp\n");
        for c in comparisons {
            let (w, p) = match &c.test {
                Ok(t) => (t.statistic.to_string(), t.p_value.to_string()),
                Err(_) => ("NA".into(), "NA".into()),
            };
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{w}\t{p}", c.baseline, c.variant, c.unit, c.pairs);
        }
    }
    out
}

/// Human-readable side-by-side table.
pub fn render_text(reports: &[RunReport], comparisons: &[Comparison]) -> String {
    let mut out = String::new();
    let Some(first) = reports.first() else { return out };
    let _ = writeln!(out, "protocol: {}", first.protocol);
    let _ = write!(out, "{:<10}", "subject");
    for r in reports {
        let _ = write!(out, "  {:>24}", r.variant);
    }
    out.push('\n');
    let _ = write!(out, "{:<10}", "");
    for _ in reports {
        let _ = write!(out, "  {:>11}  {:>11}", "acc", "f1");
    }
    out.push('\n');
    for (i, row) in first.rows.iter().enumerate() {
        let _ = write!(out, "{:<10}", row.subject_id);
        for r in reports {
            let _ = write!(out, "  {:>11.4}  {:>11.4}", r.rows[i].accuracy, r.rows[i].f1);
        }
        out.push('\n');
    }
    for (label, pick) in [("mean", 0), ("std", 1)] {
        let _ = write!(out, "{label:<10}");
        for r in reports {
            let (a, f) = if pick == 0 { (r.mean_accuracy, r.mean_f1) } else { (r.std_accuracy, r.std_f1) };
            let _ = write!(out, "  {a:>11.4}  {f:>11.4}");
        }
        out.push('\n');
    }
    for c in comparisons {
        match &c.test {
            Ok(t) => {
                let _ = writeln!(
                    out,
                    "wilcoxon {} vs {} ({} {} pairs): W = {}, p = {:.4}{}",
                    c.variant,
                    c.baseline,
                    c.pairs,
                    c.unit,
                    t.statistic,
                    t.p_value,
                    if t.exact { " (exact)" } else { "" }
                );
            }
            Err(why) => {
                let _ = writeln!(out, "wilcoxon {} vs {}: not computed ({why})", c.variant, c.baseline);
            }
        }
    }
    out
}

/// Per-fold scores and confusion counts of one subject, all variants.
pub fn fold_log_tsv(results: &[&SubjectResult]) -> String {
    let mut out = String::from("variant\tsubject\tfold\titems\taccuracy\tf1\ttp\ttn\tfp\tfn\n");
    for r in results {
        for f in &r.folds {
            let c = f.confusion;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.variant,
                r.subject_id,
                f.fold_index,
                c.total(),
                f.accuracy,
                f.f1,
                c.tp,
                c.tn,
                c.fp,
                c.fn_
            );
        }
    }
    out
}

/// Item-level predictions (segments for cv10, trials for LOTO).
pub fn predictions_tsv(results: &[&SubjectResult]) -> String {
    let mut out = String::from("variant\tsubject\tfold\ttrial\ttruth\tpredicted\n");
    for r in results {
        for f in &r.folds {
            for p in &f.predictions {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    r.variant, p.subject_id, f.fold_index, p.trial_id, p.truth, p.predicted
                );
            }
        }
    }
    out
}
