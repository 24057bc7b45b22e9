//! The two-step tracker and the decoded-ID baseline.
//!
//! Step 1 links detections in consecutive frames into gap-free tracklets.
//! Step 2 merges tracklets across gaps of up to `max_gap_frames` into tracks.
//! Both steps sweep frames in increasing order and solve one assignment
//! problem per frame.

mod baseline;
mod step1;
mod step2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    step1_features_unchecked, step2_features_from_summaries, SequenceSummary,
    DEFAULT_GATE_RADIUS_PX, DEFAULT_MAX_GAP_FRAMES, STEP1_FEATURES, STEP2_FEATURES,
};
use crate::model::{canonical_order, Detection};
use crate::scoring::{predict_forest, ForestModel, LinearModel};

pub use baseline::track_baseline;
pub use step1::track_step1;
pub use step2::track_step2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub gate_radius_px: f64,
    pub accept_threshold: f64,
    pub max_gap_frames: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gate_radius_px: DEFAULT_GATE_RADIUS_PX,
            accept_threshold: 0.5,
            max_gap_frames: DEFAULT_MAX_GAP_FRAMES,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_radius_px > 0.0 && self.gate_radius_px.is_finite()) {
            return Err(Error::invalid(format!(
                "gate radius must be positive, got {}",
                self.gate_radius_px
            )));
        }
        if !(0.0..=1.0).contains(&self.accept_threshold) {
            return Err(Error::invalid(format!(
                "accept threshold {} outside [0, 1]",
                self.accept_threshold
            )));
        }
        Ok(())
    }
}

/// Probability that `next` (one frame later) continues the animal of `prev`.
pub trait LinkScorer: Sync {
    fn link_probability(&self, prev: &Detection, next: &Detection) -> Result<f64>;

    /// Checked once before tracking starts.
    fn check(&self) -> Result<()> {
        Ok(())
    }
}

impl LinkScorer for LinearModel {
    fn link_probability(&self, prev: &Detection, next: &Detection) -> Result<f64> {
        let f = step1_features_unchecked(prev, next).to_array();
        Ok(crate::scoring::sigmoid(self.decision_value(&f)))
    }

    fn check(&self) -> Result<()> {
        self.validate()?;
        if self.n_features() != STEP1_FEATURES {
            return Err(Error::invalid(format!(
                "step-1 model expects {} features, need {STEP1_FEATURES}",
                self.n_features()
            )));
        }
        Ok(())
    }
}

impl<F> LinkScorer for F
where
    F: Fn(&Detection, &Detection) -> f64 + Sync,
{
    fn link_probability(&self, prev: &Detection, next: &Detection) -> Result<f64> {
        Ok(self(prev, next))
    }
}

/// A frame-increasing detection sequence together with its cached summary.
#[derive(Debug, Clone, Copy)]
pub struct Sequence<'a> {
    pub detections: &'a [Detection],
    pub summary: &'a SequenceSummary,
}

/// Probability that `later` continues the animal of `earlier` after a gap.
pub trait MergeScorer: Sync {
    fn merge_probability(&self, earlier: Sequence<'_>, later: Sequence<'_>, max_gap: u32) -> Result<f64>;

    fn check(&self) -> Result<()> {
        Ok(())
    }
}

impl MergeScorer for ForestModel {
    fn merge_probability(&self, earlier: Sequence<'_>, later: Sequence<'_>, max_gap: u32) -> Result<f64> {
        let f = step2_features_from_summaries(earlier.summary, later.summary, max_gap)?;
        predict_forest(self, &f.to_array())
    }

    fn check(&self) -> Result<()> {
        self.validate()?;
        if self.n_features != STEP2_FEATURES {
            return Err(Error::invalid(format!(
                "step-2 model expects {} features, need {STEP2_FEATURES}",
                self.n_features
            )));
        }
        Ok(())
    }
}

impl<F> MergeScorer for F
where
    F: Fn(Sequence<'_>, Sequence<'_>) -> f64 + Sync,
{
    fn merge_probability(&self, earlier: Sequence<'_>, later: Sequence<'_>, _max_gap: u32) -> Result<f64> {
        Ok(self(earlier, later))
    }
}

/// Sorts detections canonically and rejects repeated detection ids.
pub(crate) fn sorted_unique(mut detections: Vec<Detection>) -> Result<Vec<Detection>> {
    detections.sort_by(canonical_order);
    let mut ids: Vec<u64> = detections.iter().map(|d| d.detection_id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate detection id {}", w[0])));
    }
    Ok(detections)
}

fn check_probability(p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::invalid(format!("scorer returned {p}, not a probability")))
    }
}
