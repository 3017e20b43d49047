//! Cross-validation protocols, metrics, statistics and reports.

mod learner;
mod metrics;
mod protocol;
mod report;
mod stats;

pub use learner::NetLearner;
pub use metrics::{vote, Confusion};
pub use protocol::{
    check_disjoint, cv10_folds, cv10_trialwise, evaluate_subject, evaluate_subjects, loto, loto_folds,
    protocol_folds, split_fold, FoldContext, FoldResult, ItemPrediction, Learner, Protocol, SubjectResult,
    CV_FOLDS,
};
pub use report::{
    aggregate, compare, fold_log_tsv, predictions_tsv, render_text, render_tsv, Comparison, RunReport,
    SubjectRow, MIN_SUBJECT_PAIRS,
};
pub use stats::{wilcoxon_signed_rank, Wilcoxon, EXACT_MAX_N};
