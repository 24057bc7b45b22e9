use std::collections::HashSet;

use super::{check_probability, MergeScorer, Sequence, TrackerConfig};
use crate::assignment::{solve_assignment, ScoreMatrix};
use crate::error::{Error, Result};
use crate::features::SequenceSummary;
use crate::model::{Detection, Track, Tracklet};

struct Building {
    tracklets: Vec<Tracklet>,
    detections: Vec<Detection>,
    summary: SequenceSummary,
}

impl Building {
    fn new(t: Tracklet) -> Self {
        let detections = t.detections().to_vec();
        let summary = SequenceSummary::of(&detections).expect("tracklets are non-empty");
        Building {
            tracklets: vec![t],
            detections,
            summary,
        }
    }

    fn end_frame(&self) -> u32 {
        self.summary.end_frame()
    }

    fn push(&mut self, t: Tracklet) {
        self.detections.extend_from_slice(t.detections());
        self.tracklets.push(t);
        self.summary = SequenceSummary::of(&self.detections).expect("non-empty");
    }

    fn view(&self) -> Sequence<'_> {
        Sequence {
            detections: &self.detections,
            summary: &self.summary,
        }
    }
}

/// Merges tracklets across gaps into tracks.
///
/// Tracklets are visited by start frame. At frame `t` the candidates are the
/// tracklets starting at `t` and the open tracks are those whose last frame
/// `f` satisfies `0 <= t - f - 1 <= max_gap_frames`. Accepted pairs append the
/// candidate to the track; the remaining candidates open new tracks. Tracks
/// are numbered from 0 in order of their first detection.
pub fn track_step2<S>(mut tracklets: Vec<Tracklet>, scorer: &S, cfg: &TrackerConfig) -> Result<Vec<Track>>
where
    S: MergeScorer + ?Sized,
{
    cfg.validate()?;
    scorer.check()?;
    let mut seen = HashSet::new();
    for d in tracklets.iter().flat_map(|t| t.detections()) {
        if !seen.insert(d.detection_id) {
            return Err(Error::invalid(format!(
                "detection {} appears in more than one tracklet",
                d.detection_id
            )));
        }
    }
    drop(seen);
    tracklets.sort_by_key(|t| (t.start_frame(), t.first().detection_id));

    let mut tracks: Vec<Building> = Vec::new();
    // Tracks that may still become open; pruned as frames advance.
    let mut active: Vec<usize> = Vec::new();
    let mut pending = tracklets.into_iter().peekable();

    while let Some(first) = pending.next() {
        let t = first.start_frame();
        let mut candidates = vec![first];
        while let Some(next) = pending.next_if(|n| n.start_frame() == t) {
            candidates.push(next);
        }

        let horizon = t.saturating_sub(cfg.max_gap_frames + 1);
        active.retain(|&i| tracks[i].end_frame() >= horizon);
        let open: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| tracks[i].end_frame() < t)
            .collect();

        let mut taken = vec![false; candidates.len()];
        if !open.is_empty() {
            let cand: Vec<Building> = candidates.iter().cloned().map(Building::new).collect();
            let mut probs = Vec::with_capacity(open.len() * cand.len());
            for &i in &open {
                for c in &cand {
                    let p = scorer.merge_probability(tracks[i].view(), c.view(), cfg.max_gap_frames)?;
                    probs.push(check_probability(p)?);
                }
            }
            let m = ScoreMatrix::new(open.len(), cand.len(), probs)?;
            let pairs = solve_assignment(&m, cfg.accept_threshold)?;
            for &(r, c) in &pairs {
                taken[c] = true;
                tracks[open[r]].push(candidates[c].clone());
            }
        }
        for (c, tl) in candidates.into_iter().enumerate() {
            if !taken[c] {
                active.push(tracks.len());
                tracks.push(Building::new(tl));
            }
        }
    }

    Ok(tracks
        .into_iter()
        .enumerate()
        .map(|(i, b)| Track::new(i as u64, b.tracklets).expect("merged tracklets do not overlap"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::id_to_bits;
    use crate::model::test_support::det_bits;
    use crate::scoring::{ForestModel, DecisionTree};
    use proptest::prelude::*;

    fn tracklet(id: u64, animal: u64, frames: std::ops::Range<u32>) -> Tracklet {
        let dets = frames
            .map(|f| det_bits(animal * 1000 + u64::from(f), f, 5.0 * f64::from(f), 50.0, id_to_bits(animal as u16)))
            .collect();
        Tracklet::new(id, dets).unwrap()
    }

    fn oracle(a: Sequence<'_>, b: Sequence<'_>) -> f64 {
        let animal = |s: Sequence<'_>| s.detections[0].detection_id / 1000;
        f64::from(u8::from(animal(a) == animal(b)))
    }

    #[test]
    fn bridges_a_one_frame_gap() {
        let input = vec![tracklet(0, 42, 0..4), tracklet(1, 42, 5..7)];
        let out = track_step2(input, &oracle, &TrackerConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tracklets().len(), 2);
        assert_eq!((out[0].start_frame(), out[0].end_frame(), out[0].max_gap()), (0, 6, 1));
    }

    #[test]
    fn forest_model_merges_consistent_tracklets() {
        // A one-leaf forest that always says yes.
        let m = ForestModel {
            trees: vec![DecisionTree::leaf(0.8)],
            n_features: 6,
            n_trees: 1,
            seed: 0,
        };
        let input = vec![tracklet(0, 42, 0..4), tracklet(1, 42, 5..7)];
        let out = track_step2(input, &m, &TrackerConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn consecutive_tracklets_may_merge() {
        let input = vec![tracklet(0, 7, 0..4), tracklet(1, 7, 4..9)];
        let out = track_step2(input, &oracle, &TrackerConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 9);
    }

    #[test]
    fn gap_beyond_limit_is_never_merged() {
        let input = vec![tracklet(0, 7, 0..4), tracklet(1, 7, 19..25)];
        let always = |_: Sequence<'_>, _: Sequence<'_>| 1.0;
        let out = track_step2(input, &always, &TrackerConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        // 14 missing frames is still allowed.
        let input = vec![tracklet(0, 7, 0..4), tracklet(1, 7, 18..25)];
        assert_eq!(track_step2(input, &always, &TrackerConfig::default()).unwrap().len(), 1);
    }

    #[test]
    fn single_tracklet_is_identity() {
        let t = tracklet(9, 3, 10..20);
        let out = track_step2(vec![t.clone()], &oracle, &TrackerConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tracklets(), &[t]);
        assert_eq!(out[0].track_id, 0);
    }

    #[test]
    fn overlapping_tracks_are_not_open() {
        // Animal 1 covers 0..10; animal 2's second tracklet starts at 6 while
        // animal 1 is still going, and the scorer would accept either.
        let input = vec![tracklet(0, 1, 0..10), tracklet(1, 2, 0..3), tracklet(2, 2, 6..8)];
        let always = |_: Sequence<'_>, _: Sequence<'_>| 0.9;
        let out = track_step2(input, &always, &TrackerConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].len(), 10);
        assert_eq!(out[1].len(), 5);
    }

    #[test]
    fn repeated_detection_is_rejected() {
        let input = vec![tracklet(0, 1, 0..3), tracklet(1, 1, 2..4)];
        assert!(track_step2(input, &oracle, &TrackerConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn partition_gaps_and_no_overlap(
            spans in prop::collection::vec((0u64..4, 0u32..60, 1u32..8), 1..20),
            thr in 0.0f64..1.0,
        ) {
            let mut input = Vec::new();
            for (i, (animal, start, len)) in spans.into_iter().enumerate() {
                // Distinct detection ids per tracklet.
                let dets: Vec<_> = (start..start + len)
                    .map(|f| det_bits(i as u64 * 1000 + u64::from(f), f, 0.0, 0.0, id_to_bits(animal as u16)))
                    .collect();
                input.push(Tracklet::new(i as u64, dets).unwrap());
            }
            let p = |a: Sequence<'_>, b: Sequence<'_>| {
                ((a.detections.len() * 31 + b.detections[0].frame as usize * 17) % 100) as f64 / 100.0
            };
            let cfg = TrackerConfig { accept_threshold: thr, ..Default::default() };
            let out = track_step2(input.clone(), &p, &cfg).unwrap();
            let mut got: Vec<u64> = out.iter().flat_map(|t| t.tracklets().iter().map(|x| x.tracklet_id)).collect();
            got.sort_unstable();
            prop_assert_eq!(got, (0..input.len() as u64).collect::<Vec<_>>());
            for t in &out {
                prop_assert!(t.max_gap() <= cfg.max_gap_frames);
                let frames: Vec<u32> = t.detections().map(|d| d.frame).collect();
                prop_assert!(frames.windows(2).all(|w| w[0] < w[1]));
            }
            let again = track_step2(input, &p, &cfg).unwrap();
            prop_assert_eq!(out, again);
        }
    }
}
