//! Ground-truth metrics and classifier training samples.

mod metrics;
mod samples;

pub use metrics::{evaluate, evaluate_with_max_gap, match_tracks, EvalReport};
pub use samples::{make_step1_samples, make_step2_samples, positive_fraction};
