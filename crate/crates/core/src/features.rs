//! Pairwise features for the two association steps.
//!
//! Step 1 compares a detection with a candidate in the next frame. Step 2
//! compares the end of one detection sequence with the start of a later one;
//! the sequences may contain gaps themselves (a partially merged track), in
//! which case motion vectors are normalized per frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{angular_difference, manhattan_bits, median_bits, Bits, Detection, Tracklet, N_BITS};

/// Default spatial gate for step-1 candidates, in pixels.
pub const DEFAULT_GATE_RADIUS_PX: f64 = 200.0;

/// Default largest gap, in frames, bridged by step 2.
pub const DEFAULT_MAX_GAP_FRAMES: u32 = 14;

pub const STEP1_FEATURES: usize = 3;
pub const STEP2_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step1Features {
    pub euclidean_px: f64,
    pub angle_diff_rad: f64,
    pub id_manhattan: f64,
}

impl Step1Features {
    pub fn to_array(self) -> [f64; STEP1_FEATURES] {
        [self.euclidean_px, self.angle_diff_rad, self.id_manhattan]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step2Features {
    pub id_manhattan_avg: f64,
    pub euclidean_px: f64,
    pub forward_error_px: f64,
    pub backward_error_px: f64,
    pub angle_diff_rad: f64,
    pub confidence_diff: f64,
}

impl Step2Features {
    pub fn to_array(self) -> [f64; STEP2_FEATURES] {
        [
            self.id_manhattan_avg,
            self.euclidean_px,
            self.forward_error_px,
            self.backward_error_px,
            self.angle_diff_rad,
            self.confidence_diff,
        ]
    }
}

/// Features of a candidate link between consecutive frames.
pub fn step1_features(a: &Detection, b: &Detection) -> Result<Step1Features> {
    if b.frame != a.frame + 1 {
        return Err(Error::invalid(format!(
            "step-1 pair must be in consecutive frames (got {} and {})",
            a.frame, b.frame
        )));
    }
    Ok(step1_features_unchecked(a, b))
}

pub(crate) fn step1_features_unchecked(a: &Detection, b: &Detection) -> Step1Features {
    Step1Features {
        euclidean_px: a.distance_to(b),
        angle_diff_rad: angular_difference(a.orientation, b.orientation),
        id_manhattan: manhattan_bits(&a.bits, &b.bits).expect("fixed-size bits"),
    }
}

/// Detections of `frame` within `radius_px` of `a` (inclusive).
pub fn gate_candidates<'a>(a: &Detection, frame: &'a [Detection], radius_px: f64) -> Vec<&'a Detection> {
    frame
        .iter()
        .filter(|b| a.distance_to(b) <= radius_px)
        .collect()
}

/// Confidence of a bit vector: distance of its least certain bit from 0.5.
pub fn bit_confidence(bits: &Bits) -> f64 {
    bits.iter()
        .map(|b| (b - 0.5).abs())
        .fold(f64::INFINITY, f64::min)
}

/// The parts of a detection sequence that step-2 features look at.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSummary {
    pub first: Detection,
    pub last: Detection,
    /// Per-frame motion entering the sequence (second minus first).
    pub first_motion: (f64, f64),
    /// Per-frame motion leaving the sequence (last minus second-to-last).
    pub last_motion: (f64, f64),
    pub median_bits: Bits,
}

fn per_frame_motion(from: &Detection, to: &Detection) -> (f64, f64) {
    let dt = f64::from(to.frame - from.frame);
    ((to.x - from.x) / dt, (to.y - from.y) / dt)
}

impl SequenceSummary {
    /// Summarizes a non-empty, frame-increasing detection sequence.
    pub fn of(detections: &[Detection]) -> Result<Self> {
        let n = detections.len();
        if n == 0 {
            return Err(Error::invalid("cannot summarize an empty sequence"));
        }
        if detections.windows(2).any(|w| w[1].frame <= w[0].frame) {
            return Err(Error::invalid("sequence frames must be strictly increasing"));
        }
        let (first_motion, last_motion) = if n >= 2 {
            (
                per_frame_motion(&detections[0], &detections[1]),
                per_frame_motion(&detections[n - 2], &detections[n - 1]),
            )
        } else {
            ((0.0, 0.0), (0.0, 0.0))
        };
        Ok(SequenceSummary {
            first: detections[0].clone(),
            last: detections[n - 1].clone(),
            first_motion,
            last_motion,
            median_bits: median_bits(detections).expect("non-empty"),
        })
    }

    pub fn start_frame(&self) -> u32 {
        self.first.frame
    }

    pub fn end_frame(&self) -> u32 {
        self.last.frame
    }
}

/// Summaries of every prefix `detections[..=i]`, computed incrementally.
pub(crate) fn prefix_summaries(detections: &[Detection]) -> Vec<SequenceSummary> {
    let mut columns: [Vec<f64>; N_BITS] = Default::default();
    let mut out = Vec::with_capacity(detections.len());
    for (i, d) in detections.iter().enumerate() {
        insert_bits(&mut columns, &d.bits);
        let first_motion = if i >= 1 {
            per_frame_motion(&detections[0], &detections[1])
        } else {
            (0.0, 0.0)
        };
        let last_motion = if i >= 1 {
            per_frame_motion(&detections[i - 1], d)
        } else {
            (0.0, 0.0)
        };
        out.push(SequenceSummary {
            first: detections[0].clone(),
            last: d.clone(),
            first_motion,
            last_motion,
            median_bits: sorted_medians(&columns),
        });
    }
    out
}

/// Summaries of every suffix `detections[i..]`, computed incrementally.
pub(crate) fn suffix_summaries(detections: &[Detection]) -> Vec<SequenceSummary> {
    let n = detections.len();
    let mut columns: [Vec<f64>; N_BITS] = Default::default();
    let mut out = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let d = &detections[i];
        insert_bits(&mut columns, &d.bits);
        let long = i + 1 < n;
        out.push(SequenceSummary {
            first: d.clone(),
            last: detections[n - 1].clone(),
            first_motion: if long { per_frame_motion(d, &detections[i + 1]) } else { (0.0, 0.0) },
            last_motion: if long {
                per_frame_motion(&detections[n - 2], &detections[n - 1])
            } else {
                (0.0, 0.0)
            },
            median_bits: sorted_medians(&columns),
        });
    }
    out.reverse();
    out
}

fn insert_bits(columns: &mut [Vec<f64>; N_BITS], bits: &Bits) {
    for (col, &b) in columns.iter_mut().zip(bits) {
        let at = col.partition_point(|v| v.total_cmp(&b).is_lt());
        col.insert(at, b);
    }
}

fn sorted_medians(columns: &[Vec<f64>; N_BITS]) -> Bits {
    let mut out = [0.0; N_BITS];
    for (o, col) in out.iter_mut().zip(columns) {
        let n = col.len();
        *o = if n % 2 == 1 {
            col[n / 2]
        } else {
            0.5 * (col[n / 2 - 1] + col[n / 2])
        };
    }
    out
}

/// Step-2 features for joining `t1` (earlier) with `t2` (later).
pub fn step2_features(t1: &Tracklet, t2: &Tracklet, max_gap: u32) -> Result<Step2Features> {
    let s1 = SequenceSummary::of(t1.detections())?;
    let s2 = SequenceSummary::of(t2.detections())?;
    step2_features_from_summaries(&s1, &s2, max_gap)
}

/// Step-2 features for arbitrary frame-increasing detection sequences.
pub fn step2_features_for_sequences(
    first: &[Detection],
    second: &[Detection],
    max_gap: u32,
) -> Result<Step2Features> {
    let s1 = SequenceSummary::of(first)?;
    let s2 = SequenceSummary::of(second)?;
    step2_features_from_summaries(&s1, &s2, max_gap)
}

pub fn step2_features_from_summaries(
    s1: &SequenceSummary,
    s2: &SequenceSummary,
    max_gap: u32,
) -> Result<Step2Features> {
    if s2.start_frame() <= s1.end_frame() {
        return Err(Error::invalid(format!(
            "second sequence starts at frame {} but first ends at {}",
            s2.start_frame(),
            s1.end_frame()
        )));
    }
    let gap = s2.start_frame() - s1.end_frame() - 1;
    if gap > max_gap {
        return Err(Error::invalid(format!("gap of {gap} frames exceeds {max_gap}")));
    }
    let steps = f64::from(gap + 1);

    let forward = (
        s1.last.x + s1.last_motion.0 * steps,
        s1.last.y + s1.last_motion.1 * steps,
    );
    let backward = (
        s2.first.x - s2.first_motion.0 * steps,
        s2.first.y - s2.first_motion.1 * steps,
    );

    Ok(Step2Features {
        id_manhattan_avg: manhattan_bits(&s1.median_bits, &s2.median_bits)?,
        euclidean_px: s1.last.distance_to(&s2.first),
        forward_error_px: (forward.0 - s2.first.x).hypot(forward.1 - s2.first.y),
        backward_error_px: (backward.0 - s1.last.x).hypot(backward.1 - s1.last.y),
        angle_diff_rad: angular_difference(s1.last.orientation, s2.first.orientation),
        confidence_diff: (bit_confidence(&s1.median_bits) - bit_confidence(&s2.median_bits)).abs(),
    })
}
