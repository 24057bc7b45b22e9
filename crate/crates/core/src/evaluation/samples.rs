use std::collections::BTreeMap;

use crate::features::{
    prefix_summaries, step1_features_unchecked, step2_features_from_summaries, SequenceSummary,
};
use crate::model::{Detection, GroundTruthTrack};
use crate::scoring::LabeledSample;

/// Every gated pair of truth detections in consecutive frames.
///
/// Samples are ordered by frame, then by the earlier detection's track and
/// position, then by the later one's. The label says whether both detections
/// belong to the same truth track.
pub fn make_step1_samples(truth: &[GroundTruthTrack], radius_px: f64) -> Vec<LabeledSample> {
    let mut by_frame: BTreeMap<u32, Vec<(usize, &Detection)>> = BTreeMap::new();
    for (ti, t) in truth.iter().enumerate() {
        for d in t.detections() {
            by_frame.entry(d.frame).or_default().push((ti, d));
        }
    }
    let mut out = Vec::new();
    for (frame, prev) in &by_frame {
        let Some(next) = by_frame.get(&(frame + 1)) else { continue };
        for &(ta, a) in prev {
            for &(tb, b) in next {
                if a.distance_to(b) <= radius_px {
                    let f = step1_features_unchecked(a, b).to_array();
                    out.push(LabeledSample::new(f.to_vec(), ta == tb));
                }
            }
        }
    }
    out
}

/// Step-2 training pairs built from ground truth.
///
/// For every ordered pair of truth tracks `(a, b)`, including `a == b`, and
/// every split time `s`, the earlier part is `a` before `s` and the later part
/// is `b` from `s` on. Each distinct pair of non-empty parts whose gap is at
/// most `max_gap` frames is one sample, positive iff `a == b`. In addition,
/// every contiguous run of 2 or 3 detections of a truth track is split at each
/// position into further positive samples.
pub fn make_step2_samples(truth: &[GroundTruthTrack], max_gap: u32) -> Vec<LabeledSample> {
    let tracks: Vec<&[Detection]> = truth
        .iter()
        .map(GroundTruthTrack::detections)
        .filter(|d| !d.is_empty())
        .collect();
    let prefixes: Vec<Vec<SequenceSummary>> = tracks.iter().map(|d| prefix_summaries(d)).collect();
    let suffixes: Vec<Vec<SequenceSummary>> = tracks
        .iter()
        .map(|d| crate::features::suffix_summaries(d))
        .collect();

    let mut out = Vec::new();
    for (ia, a) in tracks.iter().enumerate() {
        for (ib, b) in tracks.iter().enumerate() {
            let (a_start, a_end) = (a[0].frame, a[a.len() - 1].frame);
            let (b_start, b_end) = (b[0].frame, b[b.len() - 1].frame);
            if b_end <= a_start || b_start > a_end.saturating_add(max_gap + 1) {
                continue;
            }
            for (i, k) in split_points(a, b) {
                let gap = b[k].frame - a[i - 1].frame - 1;
                if gap > max_gap {
                    continue;
                }
                let f = step2_features_from_summaries(&prefixes[ia][i - 1], &suffixes[ib][k], max_gap)
                    .expect("parts are ordered and within the gap limit");
                out.push(LabeledSample::new(f.to_array().to_vec(), ia == ib));
            }
        }
    }

    for t in &tracks {
        for len in 2..=3 {
            for run in t.windows(len) {
                for cut in 1..len {
                    let (first, second) = run.split_at(cut);
                    let gap = second[0].frame - first[cut - 1].frame - 1;
                    if gap > max_gap {
                        continue;
                    }
                    let s1 = SequenceSummary::of(first).expect("non-empty");
                    let s2 = SequenceSummary::of(second).expect("non-empty");
                    let f = step2_features_from_summaries(&s1, &s2, max_gap).expect("within the gap limit");
                    out.push(LabeledSample::new(f.to_array().to_vec(), true));
                }
            }
        }
    }
    out
}

/// Distinct `(i, k)` with `a[..i]` before the split and `b[k..]` after it,
/// both non-empty, over all split times.
///
/// The split times yielding one `(i, k)` form an interval that starts just
/// after a detection of `a` or of `b`, so those times cover every pair.
fn split_points(a: &[Detection], b: &[Detection]) -> Vec<(usize, usize)> {
    let mut times: Vec<u32> = a.iter().chain(b).map(|d| d.frame + 1).collect();
    times.sort_unstable();
    times.dedup();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for s in times {
        let i = a.partition_point(|d| d.frame < s);
        let k = b.partition_point(|d| d.frame < s);
        if i == 0 || k == b.len() {
            continue;
        }
        if out.last() != Some(&(i, k)) {
            out.push((i, k));
        }
    }
    out
}

/// Fraction of positive samples; 0 for an empty set.
pub fn positive_fraction(samples: &[LabeledSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| s.label).count() as f64 / samples.len() as f64
}
