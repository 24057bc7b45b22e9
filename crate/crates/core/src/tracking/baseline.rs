use std::collections::BTreeMap;

use super::{sorted_unique, TrackerConfig};
use crate::error::Result;
use crate::model::{Detection, Track};

/// Chains detections by their hard-decoded ID alone.
///
/// Within one ID, each detection continues the nearest open track of that ID
/// whose last frame is at most `max_gap_frames + 1` frames earlier. When one
/// frame holds several detections of the same ID, pairs are taken closest
/// first and the leftovers start new tracks.
pub fn track_baseline(detections: Vec<Detection>, cfg: &TrackerConfig) -> Result<Vec<Track>> {
    cfg.validate()?;
    let detections = sorted_unique(detections)?;

    let mut chains: Vec<Vec<Detection>> = Vec::new();
    let mut open_by_id: BTreeMap<u16, Vec<usize>> = BTreeMap::new();

    for frame in detections.chunk_by(|a, b| a.frame == b.frame) {
        let t = frame[0].frame;
        let mut by_id: BTreeMap<u16, Vec<&Detection>> = BTreeMap::new();
        for d in frame {
            by_id.entry(d.decoded_id()).or_default().push(d);
        }
        for (id, dets) in by_id {
            let open = open_by_id.entry(id).or_default();
            open.retain(|&c| t - chains[c].last().expect("non-empty").frame - 1 <= cfg.max_gap_frames);

            let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
            for (oi, &c) in open.iter().enumerate() {
                let last = chains[c].last().expect("non-empty");
                for (di, d) in dets.iter().enumerate() {
                    pairs.push((last.distance_to(d), oi, di));
                }
            }
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut used_open = vec![false; open.len()];
            let mut used_det = vec![false; dets.len()];
            for (_, oi, di) in pairs {
                if !used_open[oi] && !used_det[di] {
                    used_open[oi] = true;
                    used_det[di] = true;
                    chains[open[oi]].push(dets[di].clone());
                }
            }
            for (di, d) in dets.iter().enumerate() {
                if !used_det[di] {
                    open.push(chains.len());
                    chains.push(vec![(*d).clone()]);
                }
            }
        }
    }

    chains.sort_by_key(|c| (c[0].frame, c[0].detection_id));
    Ok(chains
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let id = c[0].decoded_id();
            let mut t = Track::from_detections(i as u64, c).expect("one detection per frame");
            t.assigned_id = Some(id);
            t
        })
        .collect())
}
