use super::{check_probability, sorted_unique, LinkScorer, TrackerConfig};
use crate::assignment::{solve_assignment, ScoreMatrix};
use crate::error::Result;
use crate::model::{Detection, Tracklet};

/// Links detections frame by frame into gap-free tracklets.
///
/// Every detection of frame `t - 1` ends exactly one open tracklet, so the
/// assignment at frame `t` is between those detections and the detections of
/// frame `t`. Pairs farther apart than the gate radius are never linked. The
/// gated bipartite graph is split into connected components and each is
/// solved separately. Tracklets are numbered from 0 in order of their first
/// detection.
pub fn track_step1<S>(detections: Vec<Detection>, scorer: &S, cfg: &TrackerConfig) -> Result<Vec<Tracklet>>
where
    S: LinkScorer + ?Sized,
{
    cfg.validate()?;
    scorer.check()?;
    let detections = sorted_unique(detections)?;

    let mut runs: Vec<Vec<Detection>> = Vec::new();
    // Run index of each detection in the previous frame, aligned with `prev`.
    let mut prev: Vec<Detection> = Vec::new();
    let mut prev_runs: Vec<usize> = Vec::new();

    for frame in detections.chunk_by(|a, b| a.frame == b.frame) {
        let t = frame[0].frame;
        let contiguous = prev.first().is_some_and(|p| p.frame + 1 == t);
        let mut run_of_col = vec![usize::MAX; frame.len()];
        if contiguous {
            for (r, c) in link_frame(&prev, frame, scorer, cfg)? {
                run_of_col[c] = prev_runs[r];
            }
        }
        for (c, d) in frame.iter().enumerate() {
            if run_of_col[c] == usize::MAX {
                run_of_col[c] = runs.len();
                runs.push(Vec::new());
            }
            runs[run_of_col[c]].push(d.clone());
        }
        prev = frame.to_vec();
        prev_runs = run_of_col;
    }

    runs.sort_by_key(|r| (r[0].frame, r[0].detection_id));
    Ok(runs
        .into_iter()
        .enumerate()
        .map(|(i, r)| Tracklet::new(i as u64, r).expect("runs are gap-free"))
        .collect())
}

/// Accepted `(prev index, next index)` links between two consecutive frames.
fn link_frame<S>(prev: &[Detection], next: &[Detection], scorer: &S, cfg: &TrackerConfig) -> Result<Vec<(usize, usize)>>
where
    S: LinkScorer + ?Sized,
{
    let (nr, nc) = (prev.len(), next.len());
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (r, a) in prev.iter().enumerate() {
        for (c, b) in next.iter().enumerate() {
            if a.distance_to(b) <= cfg.gate_radius_px {
                edges.push((r, c));
            }
        }
    }
    if edges.is_empty() {
        return Ok(Vec::new());
    }

    // Union-find over rows `0..nr` and columns `nr..nr + nc`.
    let mut parent: Vec<usize> = (0..nr + nc).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(r, c) in &edges {
        let (a, b) = (find(&mut parent, r), find(&mut parent, nr + c));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }

    let mut by_root: Vec<(usize, usize, usize)> = edges
        .iter()
        .map(|&(r, c)| (find(&mut parent, r), r, c))
        .collect();
    by_root.sort_unstable();

    let mut links = Vec::new();
    for comp in by_root.chunk_by(|a, b| a.0 == b.0) {
        let mut rows: Vec<usize> = comp.iter().map(|e| e.1).collect();
        let mut cols: Vec<usize> = comp.iter().map(|e| e.2).collect();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        let mut probs = vec![0.0; rows.len() * cols.len()];
        let mut gated = vec![false; rows.len() * cols.len()];
        for &(_, r, c) in comp {
            let i = rows.binary_search(&r).expect("row in component");
            let j = cols.binary_search(&c).expect("column in component");
            let k = i * cols.len() + j;
            probs[k] = check_probability(scorer.link_probability(&prev[r], &next[c])?)?;
            gated[k] = true;
        }
        let m = ScoreMatrix::new(rows.len(), cols.len(), probs)?;
        for (i, j) in solve_assignment(&m, cfg.accept_threshold)? {
            if gated[i * cols.len() + j] {
                links.push((rows[i], cols[j]));
            }
        }
    }
    Ok(links)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::{det, det_bits};
    use crate::model::id_to_bits;
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Scores 1 for detections of the same animal, encoded as `id / 1000`.
    fn oracle(a: &Detection, b: &Detection) -> f64 {
        f64::from(u8::from(a.detection_id / 1000 == b.detection_id / 1000))
    }

    fn bee(animal: u64, frames: impl IntoIterator<Item = u32>, x0: f64) -> Vec<Detection> {
        frames
            .into_iter()
            .map(|f| det_bits(animal * 1000 + u64::from(f), f, x0 + 3.0 * f64::from(f), 100.0, id_to_bits(animal as u16)))
            .collect()
    }

    fn ids(t: &Tracklet) -> Vec<u64> {
        t.detections().iter().map(|d| d.detection_id).collect()
    }

    #[test]
    fn stationary_bee_gives_one_tracklet() {
        let dets: Vec<_> = (0..50).map(|f| det(f as u64, f, 10.0, 10.0)).collect();
        let always = |_: &Detection, _: &Detection| 0.9;
        let out = track_step1(dets, &always, &TrackerConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 50);
    }

    #[test]
    fn far_apart_bees_never_cross() {
        let mut dets = bee(1, 0..30, 0.0);
        dets.extend(bee(2, 0..30, 1000.0));
        // A scorer that would happily link anything.
        let always = |_: &Detection, _: &Detection| 1.0;
        let out = track_step1(dets, &always, &TrackerConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        for t in &out {
            let animal = t.first().detection_id / 1000;
            assert!(t.detections().iter().all(|d| d.detection_id / 1000 == animal));
            assert_eq!(t.len(), 30);
        }
    }

    #[test]
    fn gap_splits_into_two_tracklets() {
        // Visible t-2..t+1, missing t+2, back at t+3 (t = 2).
        let dets = bee(42, [0, 1, 2, 3, 5, 6], 0.0);
        let out = track_step1(dets, &oracle, &TrackerConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(ids(&out[0]), vec![42000, 42001, 42002, 42003]);
        assert_eq!(ids(&out[1]), vec![42005, 42006]);
        assert_eq!((out[0].tracklet_id, out[1].tracklet_id), (0, 1));
    }

    #[test]
    fn threshold_zero_does_not_link_outside_gate() {
        let dets = vec![det(1, 0, 0.0, 0.0), det(2, 1, 500.0, 0.0)];
        let cfg = TrackerConfig { accept_threshold: 0.0, ..Default::default() };
        let never = |_: &Detection, _: &Detection| 0.0;
        assert_eq!(track_step1(dets, &never, &cfg).unwrap().len(), 2);
    }

    #[test]
    fn rejects_duplicates_and_bad_scores() {
        let dets = vec![det(1, 0, 0.0, 0.0), det(1, 1, 0.0, 0.0)];
        assert!(track_step1(dets, &oracle, &TrackerConfig::default()).is_err());
        let dets = vec![det(1, 0, 0.0, 0.0), det(2, 1, 0.0, 0.0)];
        let bad = |_: &Detection, _: &Detection| 1.5;
        assert!(track_step1(dets, &bad, &TrackerConfig::default()).is_err());
    }

    #[test]
    fn unsorted_input_is_sorted() {
        let mut dets = bee(3, 0..10, 0.0);
        dets.reverse();
        let out = track_step1(dets, &oracle, &TrackerConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn linear_model_as_scorer() {
        use crate::scoring::LinearModel;
        // Closer is more likely; logit = 2 - distance / 10.
        let m = LinearModel {
            weights: vec![-0.1, 0.0, 0.0],
            bias: 2.0,
            feature_means: vec![0.0; 3],
            feature_stds: vec![1.0; 3],
        };
        let dets = vec![det(1, 0, 0.0, 0.0), det(2, 1, 5.0, 0.0), det(3, 1, 60.0, 0.0)];
        let out = track_step1(dets, &m, &TrackerConfig::default()).unwrap();
        assert_eq!(ids(&out[0]), vec![1, 2]);
        assert_eq!(ids(&out[1]), vec![3]);

        let wrong = LinearModel { weights: vec![0.0; 6], feature_means: vec![0.0; 6], feature_stds: vec![1.0; 6], bias: 0.0 };
        assert!(track_step1(Vec::new(), &wrong, &TrackerConfig::default()).is_err());
    }

    fn random_scene() -> impl Strategy<Value = (Vec<Detection>, Vec<f64>)> {
        (1usize..5, 2u32..12).prop_flat_map(|(n, frames)| {
            let count = n * frames as usize;
            (
                prop::collection::vec((0.0f64..300.0, 0.0f64..300.0, any::<bool>()), count),
                prop::collection::vec(0.0f64..1.0, 64),
            )
                .prop_map(move |(pts, table)| {
                    let dets = pts
                        .into_iter()
                        .enumerate()
                        .filter(|(_, p)| p.2)
                        .map(|(i, p)| det(i as u64, (i / n) as u32, p.0, p.1))
                        .collect();
                    (dets, table)
                })
        })
    }

    fn table_scorer(table: &[f64]) -> impl Fn(&Detection, &Detection) -> f64 + Sync + '_ {
        move |a, b| table[((a.detection_id * 7 + b.detection_id * 13) % 64) as usize]
    }

    proptest! {
        #[test]
        fn partition_and_gap_free((dets, table) in random_scene(), thr in 0.0f64..1.0) {
            let cfg = TrackerConfig { accept_threshold: thr, gate_radius_px: 150.0, ..Default::default() };
            let out = track_step1(dets.clone(), &table_scorer(&table), &cfg).unwrap();
            let mut seen: Vec<u64> = out.iter().flat_map(|t| t.detections().iter().map(|d| d.detection_id)).collect();
            seen.sort_unstable();
            let mut all: Vec<u64> = dets.iter().map(|d| d.detection_id).collect();
            all.sort_unstable();
            prop_assert_eq!(seen, all);
            for t in &out {
                for w in t.detections().windows(2) {
                    prop_assert_eq!(w[1].frame, w[0].frame + 1);
                    prop_assert!(w[0].distance_to(&w[1]) <= 150.0);
                    prop_assert!(table_scorer(&table)(&w[0], &w[1]) >= thr);
                }
            }
        }

        #[test]
        fn raising_threshold_only_fragments((dets, table) in random_scene(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = (a.min(b), a.max(b));
            let run = |thr| {
                let cfg = TrackerConfig { accept_threshold: thr, gate_radius_px: 150.0, ..Default::default() };
                track_step1(dets.clone(), &table_scorer(&table), &cfg).unwrap()
            };
            let (loose, strict) = (run(lo), run(hi));
            let owner: HashMap<u64, u64> = loose
                .iter()
                .flat_map(|t| t.detections().iter().map(move |d| (d.detection_id, t.tracklet_id)))
                .collect();
            // Every strict tracklet lies inside one loose tracklet.
            for t in &strict {
                let o = owner[&t.first().detection_id];
                prop_assert!(t.detections().iter().all(|d| owner[&d.detection_id] == o));
            }
            prop_assert!(strict.len() >= loose.len());
        }

        #[test]
        fn deterministic((dets, table) in random_scene()) {
            let cfg = TrackerConfig::default();
            let mut shuffled = dets.clone();
            shuffled.reverse();
            let a = track_step1(dets, &table_scorer(&table), &cfg).unwrap();
            let b = track_step1(shuffled, &table_scorer(&table), &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
