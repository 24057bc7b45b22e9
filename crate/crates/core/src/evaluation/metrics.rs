use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::DEFAULT_MAX_GAP_FRAMES;
use crate::model::{assign_track_id, GroundTruthTrack, Track};

/// Tracking quality of a predicted partition against ground truth.
///
/// Percentages are in `[0, 100]`. Track lengths are durations in frames
/// (last frame minus first frame plus one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_truth_tracks: usize,
    pub n_predicted_tracks: usize,
    pub n_truth_detections: usize,
    pub pct_incorrect_detection_ids: f64,
    pub pct_incorrect_track_ids: f64,
    pub pct_complete_tracks: f64,
    /// Complete tracks among truth tracks whose gaps are all bridgeable.
    pub pct_complete_tracks_short_gaps: f64,
    pub pct_detections_deleted: f64,
    pub pct_tracks_with_deletion: f64,
    pub n_complete_tracks: usize,
    pub n_deletions: usize,
    pub n_insertions: usize,
    pub n_mismatches: usize,
    pub mean_track_length: f64,
    /// Mean length of the track containing a randomly chosen detection.
    pub detection_weighted_track_length: f64,
    pub track_length_histogram: BTreeMap<u32, usize>,
    pub gap_histogram: BTreeMap<u32, usize>,
}

/// Maps each truth track (by index) to the predicted track (by index)
/// holding the plurality of its detections.
///
/// Ties go to the predicted track starting first, then to the lower index.
/// Truth tracks none of whose detections were predicted map to `None`.
pub fn match_tracks(predicted: &[Track], truth: &[GroundTruthTrack]) -> Vec<Option<usize>> {
    let owner = predicted_owner(predicted);
    truth
        .iter()
        .map(|t| plurality(t.detections().iter().filter_map(|d| owner.get(&d.detection_id).copied()), |p| {
            (predicted[p].start_frame(), p)
        }))
        .collect()
}

fn predicted_owner(predicted: &[Track]) -> HashMap<u64, usize> {
    predicted
        .iter()
        .enumerate()
        .flat_map(|(i, t)| t.detections().map(move |d| (d.detection_id, i)))
        .collect()
}

/// Most frequent item; ties broken by the smallest `key`.
fn plurality<K: Ord>(items: impl Iterator<Item = usize>, key: impl Fn(usize) -> K) -> Option<usize> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for i in items {
        *counts.entry(i).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| key(b.0).cmp(&key(a.0))))
        .map(|(i, _)| i)
}

/// Evaluates with the default bridgeable gap for the short-gap completeness.
pub fn evaluate(predicted: &[Track], truth: &[GroundTruthTrack]) -> Result<EvalReport> {
    evaluate_with_max_gap(predicted, truth, DEFAULT_MAX_GAP_FRAMES)
}

pub fn evaluate_with_max_gap(predicted: &[Track], truth: &[GroundTruthTrack], max_gap: u32) -> Result<EvalReport> {
    if truth.is_empty() || truth.iter().all(|t| t.detections().is_empty()) {
        return Err(Error::invalid("ground truth has no detections"));
    }
    let pred_of = predicted_owner(predicted);
    let truth_of: HashMap<u64, usize> = truth
        .iter()
        .enumerate()
        .flat_map(|(i, t)| t.detections().iter().map(move |d| (d.detection_id, i)))
        .collect();
    let matched = match_tracks(predicted, truth);
    let assigned: Vec<u16> = predicted
        .iter()
        .map(|t| t.assigned_id.unwrap_or_else(|| assign_track_id(t).expect("tracks are non-empty")))
        .collect();

    // Owner truth of each predicted track: the plurality among the truth
    // tracks matched to it, or among all truth tracks it touches.
    let mut matched_by: Vec<Vec<usize>> = vec![Vec::new(); predicted.len()];
    for (ti, m) in matched.iter().enumerate() {
        if let Some(p) = m {
            matched_by[*p].push(ti);
        }
    }
    let truth_key = |ti: usize| (truth[ti].start_frame(), ti);
    let owner: Vec<Option<usize>> = predicted
        .iter()
        .enumerate()
        .map(|(pi, p)| {
            let members = p.detections().filter_map(|d| truth_of.get(&d.detection_id).copied());
            if matched_by[pi].is_empty() {
                plurality(members, truth_key)
            } else {
                let allowed: HashSet<usize> = matched_by[pi].iter().copied().collect();
                plurality(members.filter(|t| allowed.contains(t)), truth_key)
            }
        })
        .collect();

    let n_truth_detections: usize = truth.iter().map(|t| t.detections().len()).sum();
    let mut n_deletions = 0;
    let mut tracks_with_deletion = 0;
    let mut n_complete = 0;
    let mut n_short_gap = 0;
    let mut n_complete_short_gap = 0;
    let mut wrong_det_ids = 0;
    let mut predicted_truth_dets = 0;
    for (ti, t) in truth.iter().enumerate() {
        let m = matched[ti];
        let deleted = t
            .detections()
            .iter()
            .filter(|d| pred_of.get(&d.detection_id).copied() != m || m.is_none())
            .count();
        n_deletions += deleted;
        tracks_with_deletion += usize::from(deleted > 0);
        let complete = match m {
            Some(p) => deleted == 0 && predicted[p].len() == t.detections().len(),
            None => false,
        };
        n_complete += usize::from(complete);
        if t.max_gap() <= max_gap {
            n_short_gap += 1;
            n_complete_short_gap += usize::from(complete);
        }
        for d in t.detections() {
            if let Some(&p) = pred_of.get(&d.detection_id) {
                predicted_truth_dets += 1;
                wrong_det_ids += usize::from(assigned[p] != t.true_id);
            }
        }
    }

    let mut n_insertions = 0;
    let mut n_mismatches = 0;
    let mut owned_tracks = 0;
    let mut wrong_track_ids = 0;
    for (pi, p) in predicted.iter().enumerate() {
        let Some(o) = owner[pi] else { continue };
        owned_tracks += 1;
        wrong_track_ids += usize::from(assigned[pi] != truth[o].true_id);
        if matched_by[pi].is_empty() {
            continue;
        }
        let owner_frames: HashSet<u32> = truth[o].detections().iter().map(|d| d.frame).collect();
        for d in p.detections() {
            if truth_of.get(&d.detection_id) != Some(&o) {
                n_insertions += 1;
                n_mismatches += usize::from(owner_frames.contains(&d.frame));
            }
        }
    }

    let mut track_length_histogram = BTreeMap::new();
    let (mut dur_sum, mut weighted_sum, mut det_sum) = (0.0, 0.0, 0.0);
    for p in predicted {
        let dur = p.end_frame() - p.start_frame() + 1;
        *track_length_histogram.entry(dur).or_default() += 1;
        dur_sum += f64::from(dur);
        weighted_sum += f64::from(dur) * p.len() as f64;
        det_sum += p.len() as f64;
    }
    let mut gap_histogram = BTreeMap::new();
    for t in truth {
        for w in t.detections().windows(2) {
            *gap_histogram.entry(w[1].frame - w[0].frame - 1).or_default() += 1;
        }
    }

    Ok(EvalReport {
        n_truth_tracks: truth.len(),
        n_predicted_tracks: predicted.len(),
        n_truth_detections,
        pct_incorrect_detection_ids: pct(wrong_det_ids, predicted_truth_dets),
        pct_incorrect_track_ids: pct(wrong_track_ids, owned_tracks),
        pct_complete_tracks: pct(n_complete, truth.len()),
        pct_complete_tracks_short_gaps: pct(n_complete_short_gap, n_short_gap),
        pct_detections_deleted: pct(n_deletions, n_truth_detections),
        pct_tracks_with_deletion: pct(tracks_with_deletion, truth.len()),
        n_complete_tracks: n_complete,
        n_deletions,
        n_insertions,
        n_mismatches,
        mean_track_length: ratio(dur_sum, predicted.len() as f64),
        detection_weighted_track_length: ratio(weighted_sum, det_sum),
        track_length_histogram,
        gap_histogram,
    })
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, String); 13] = [
            ("truth tracks", self.n_truth_tracks.to_string()),
            ("predicted tracks", self.n_predicted_tracks.to_string()),
            ("incorrect detection IDs", format!("{:.2}%", self.pct_incorrect_detection_ids)),
            ("incorrect track IDs", format!("{:.2}%", self.pct_incorrect_track_ids)),
            ("complete tracks", format!("{:.2}%", self.pct_complete_tracks)),
            ("complete tracks (bridgeable gaps)", format!("{:.2}%", self.pct_complete_tracks_short_gaps)),
            ("detections deleted", format!("{:.2}%", self.pct_detections_deleted)),
            ("tracks with deletions", format!("{:.2}%", self.pct_tracks_with_deletion)),
            ("insertions", self.n_insertions.to_string()),
            ("mismatches", self.n_mismatches.to_string()),
            ("mean track length (frames)", format!("{:.1}", self.mean_track_length)),
            ("detection-weighted length (frames)", format!("{:.1}", self.detection_weighted_track_length)),
            ("deletions", self.n_deletions.to_string()),
        ];
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        for (name, value) in rows {
            writeln!(f, "{name:<width$}  {value:>10}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::det_bits;
    use crate::model::{id_to_bits, Detection};

    fn dets(animal: u16, frames: impl IntoIterator<Item = u32>) -> Vec<Detection> {
        frames
            .into_iter()
            .map(|f| det_bits(u64::from(animal) * 1000 + u64::from(f), f, 0.0, 0.0, id_to_bits(animal)))
            .collect()
    }

    fn truth(animal: u16, frames: impl IntoIterator<Item = u32>) -> GroundTruthTrack {
        GroundTruthTrack::new(animal, dets(animal, frames)).unwrap()
    }

    fn track(id: u64, d: Vec<Detection>) -> Track {
        Track::from_detections(id, d).unwrap()
    }

    #[test]
    fn identical_partition() {
        let t = vec![truth(1, 0..10), truth(2, 3..8)];
        let p: Vec<Track> = t.iter().enumerate().map(|(i, g)| track(i as u64, g.detections().to_vec())).collect();
        assert_eq!(match_tracks(&p, &t), vec![Some(0), Some(1)]);
        let r = evaluate(&p, &t).unwrap();
        assert_eq!(r.pct_incorrect_detection_ids, 0.0);
        assert_eq!(r.pct_incorrect_track_ids, 0.0);
        assert_eq!(r.pct_complete_tracks, 100.0);
        assert_eq!((r.n_deletions, r.n_insertions, r.n_mismatches), (0, 0, 0));
        assert_eq!(r.gap_histogram, BTreeMap::from([(0, 13)]));
    }

    #[test]
    fn plurality_and_many_to_one() {
        let t = vec![truth(1, 0..10)];
        let all = t[0].detections().to_vec();
        let p = vec![track(0, all[7..].to_vec()), track(1, all[..7].to_vec())];
        assert_eq!(match_tracks(&p, &t), vec![Some(1)]);

        let t = vec![truth(1, 0..5), truth(2, 5..10)];
        let mut both = t[0].detections().to_vec();
        both.extend_from_slice(t[1].detections());
        let p = vec![track(0, both)];
        assert_eq!(match_tracks(&p, &t), vec![Some(0), Some(0)]);
    }

    #[test]
    fn ties_go_to_earliest_start() {
        let t = vec![truth(1, 0..4)];
        let d = t[0].detections().to_vec();
        let p = vec![track(0, d[2..].to_vec()), track(1, d[..2].to_vec())];
        assert_eq!(match_tracks(&p, &t), vec![Some(1)]);
    }

    #[test]
    fn one_missing_detection_is_ten_percent() {
        let t = vec![truth(1, 0..10)];
        let mut d = t[0].detections().to_vec();
        let lost = d.remove(4);
        let p = vec![track(0, d), track(1, vec![lost])];
        let r = evaluate(&p, &t).unwrap();
        assert_eq!(r.pct_detections_deleted, 10.0);
        assert_eq!(r.pct_complete_tracks, 0.0);
        assert_eq!(r.pct_tracks_with_deletion, 100.0);
        assert_eq!((r.n_deletions, r.n_insertions, r.n_mismatches), (1, 0, 0));
    }

    #[test]
    fn empty_truth_is_an_error() {
        assert!(evaluate(&[], &[]).is_err());
    }

    #[test]
    fn display_lists_every_row() {
        let t = vec![truth(1, 0..3)];
        let p = vec![track(0, t[0].detections().to_vec())];
        let text = evaluate(&p, &t).unwrap().to_string();
        assert!(text.contains("incorrect detection IDs"));
        assert_eq!(text.lines().count(), 13);
    }
}
