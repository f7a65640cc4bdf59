//! Detection-map postprocessing, lesion matching and detection metrics.

mod candidates;
mod components;
mod matching;
mod metrics;
mod report;
mod stats;

pub use candidates::{extract_candidates, Candidate, ExtractConfig};
pub use components::{Connectivity, Grid};
pub use matching::{dice, match_lesions, CandidateMatch, Matches, DICE_THRESHOLD};
pub use metrics::{auroc, average_precision, patient_score, pr_curve, roc_curve, PrPoint, RocPoint};
pub use report::{evaluate_case, CaseRecord, EvalConfig, Metrics};
pub use stats::{holm_bonferroni, wilcoxon_signed_rank, Wilcoxon, EXACT_MAX_N};
