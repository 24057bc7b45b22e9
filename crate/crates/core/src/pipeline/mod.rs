//! Chunked, parallel tracking runs and the file formats they read and write.
//!
//! A recording is cut into fixed-length frame intervals. Each interval is
//! tracked independently (step 1, step 2, ID vote) and the per-interval tracks
//! are then joined across each boundary by their assigned ID.

pub mod io;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Detection, Track, Tracklet};
use crate::scoring::{load_forest, load_linear};
use crate::tracking::{track_step1, track_step2, LinkScorer, MergeScorer, TrackerConfig};

/// One hour at three frames per second.
pub const DEFAULT_CHUNK_LENGTH_FRAMES: u32 = 10_800;

/// Contiguous half-open frame intervals `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub chunk_length_frames: u32,
    pub chunks: Vec<(u32, u32)>,
}

impl ChunkPlan {
    /// Intervals of `chunk_length_frames` starting at `first_frame`, covering
    /// frames up to (excluding) `end_frame`.
    pub fn new(first_frame: u32, end_frame: u32, chunk_length_frames: u32) -> Result<Self> {
        if chunk_length_frames == 0 {
            return Err(Error::invalid("chunk length must be positive"));
        }
        let mut chunks = Vec::new();
        let mut start = first_frame;
        while start < end_frame {
            let end = start.saturating_add(chunk_length_frames).min(end_frame);
            chunks.push((start, end));
            start = end;
        }
        Ok(ChunkPlan {
            chunk_length_frames,
            chunks,
        })
    }

    /// Chunks aligned to multiples of the chunk length, covering all frames of
    /// `detections`.
    pub fn for_detections(detections: &[Detection], chunk_length_frames: u32) -> Result<Self> {
        if chunk_length_frames == 0 {
            return Err(Error::invalid("chunk length must be positive"));
        }
        let Some(lo) = detections.iter().map(|d| d.frame).min() else {
            return ChunkPlan::new(0, 0, chunk_length_frames);
        };
        let hi = detections.iter().map(|d| d.frame).max().expect("non-empty");
        let first = lo - lo % chunk_length_frames;
        ChunkPlan::new(first, hi + 1, chunk_length_frames)
    }

    /// Index of the chunk holding `frame`.
    pub fn chunk_of(&self, frame: u32) -> Option<usize> {
        let i = self.chunks.partition_point(|c| c.1 <= frame);
        (i < self.chunks.len() && self.chunks[i].0 <= frame).then_some(i)
    }
}

/// Tracks one interval: step 1, step 2, then the median ID vote.
pub fn track_chunk<S1, S2>(detections: Vec<Detection>, step1: &S1, step2: &S2, cfg: &TrackerConfig) -> Result<Vec<Track>>
where
    S1: LinkScorer + ?Sized,
    S2: MergeScorer + ?Sized,
{
    let tracklets = track_step1(detections, step1, cfg)?;
    let mut tracks = track_step2(tracklets, step2, cfg)?;
    for t in &mut tracks {
        t.assign_id();
    }
    Ok(tracks)
}

/// Step-1 tracklets as single-tracklet tracks with their voted IDs.
pub fn tracklets_as_tracks(tracklets: Vec<Tracklet>) -> Vec<Track> {
    tracklets
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut tr = Track::from_tracklet(i as u64, t);
            tr.assign_id();
            tr
        })
        .collect()
}

/// Tracks every chunk of `plan` on a pool of `workers` threads and joins the
/// results. The output does not depend on `workers`.
pub fn track_chunked<S1, S2>(
    detections: Vec<Detection>,
    step1: &S1,
    step2: &S2,
    cfg: &TrackerConfig,
    plan: &ChunkPlan,
    merge_gap_frames: Option<u32>,
    workers: usize,
) -> Result<Vec<Track>>
where
    S1: LinkScorer + ?Sized,
    S2: MergeScorer + ?Sized,
{
    let mut parts: Vec<Vec<Detection>> = vec![Vec::new(); plan.chunks.len()];
    for d in detections {
        let c = plan
            .chunk_of(d.frame)
            .ok_or_else(|| Error::invalid(format!("frame {} is outside the chunk plan", d.frame)))?;
        parts[c].push(d);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let per_chunk: Vec<Vec<Track>> = pool.install(|| {
        parts
            .into_par_iter()
            .map(|p| track_chunk(p, step1, step2, cfg))
            .collect::<Result<_>>()
    })?;
    Ok(merge_chunks(per_chunk, merge_gap_frames))
}

/// Joins time-ordered per-chunk tracks by assigned ID.
///
/// At each boundary between consecutive chunks, a track whose last detection
/// lies in the earlier chunk and a track of the later chunk are concatenated
/// iff their assigned IDs agree and the gap between them is at most
/// `merge_gap_frames` (unlimited when `None`). Per ID only the pair with the
/// smallest gap is joined. Joined tracks get a fresh ID vote. The result is
/// numbered from 0 in order of first detection.
pub fn merge_chunks(per_chunk: Vec<Vec<Track>>, merge_gap_frames: Option<u32>) -> Vec<Track> {
    let mut done: Vec<Track> = Vec::new();
    let mut ending: Vec<Track> = Vec::new();
    for mut next in per_chunk {
        for t in next.iter_mut().chain(ending.iter_mut()) {
            if t.assigned_id.is_none() {
                t.assign_id();
            }
        }
        // Best (gap, ending index, next index) per ID.
        let mut best: std::collections::BTreeMap<u16, (u32, usize, usize)> = Default::default();
        for (ei, e) in ending.iter().enumerate() {
            for (ni, n) in next.iter().enumerate() {
                if e.assigned_id != n.assigned_id || n.start_frame() <= e.end_frame() {
                    continue;
                }
                let gap = n.start_frame() - e.end_frame() - 1;
                if merge_gap_frames.is_some_and(|m| gap > m) {
                    continue;
                }
                let id = e.assigned_id.expect("assigned above");
                let cand = (gap, ei, ni);
                best.entry(id).and_modify(|b| *b = (*b).min(cand)).or_insert(cand);
            }
        }
        let mut joined: Vec<Option<usize>> = vec![None; next.len()];
        for &(_, ei, ni) in best.values() {
            joined[ni] = Some(ei);
        }
        let mut prev: Vec<Option<Track>> = ending.into_iter().map(Some).collect();
        let mut carried = Vec::with_capacity(next.len());
        for (ni, n) in next.into_iter().enumerate() {
            match joined[ni] {
                Some(ei) => {
                    let mut t = prev[ei].take().expect("each ending track joins once");
                    t.extend(n);
                    t.assign_id();
                    carried.push(t);
                }
                None => carried.push(n),
            }
        }
        done.extend(prev.into_iter().flatten());
        ending = carried;
    }
    done.extend(ending);
    done.sort_by_key(|t| (t.start_frame(), t.detections().next().expect("non-empty").detection_id));
    for (i, t) in done.iter_mut().enumerate() {
        t.track_id = i as u64;
    }
    done
}

/// Inputs and settings of a file-to-file tracking run.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub detections: PathBuf,
    pub step1_model: PathBuf,
    pub step2_model: PathBuf,
    pub out: PathBuf,
    pub tracker: TrackerConfig,
    pub chunk_length_frames: u32,
    pub merge_gap_frames: Option<u32>,
    pub workers: usize,
}

/// Reads detections and models, tracks in chunks and writes the tracks file.
/// Returns the tracks that were written.
pub fn run_pipeline(opts: &PipelineOptions) -> Result<Vec<Track>> {
    let step1 = load_linear(&opts.step1_model)?;
    let step2 = load_forest(&opts.step2_model)?;
    let detections = io::read_detections(&opts.detections)?;
    let plan = ChunkPlan::for_detections(&detections, opts.chunk_length_frames)?;
    log::info!(
        "tracking {} detections in {} chunk(s) with {} worker(s)",
        detections.len(),
        plan.chunks.len(),
        opts.workers
    );
    let tracks = track_chunked(
        detections,
        &step1,
        &step2,
        &opts.tracker,
        &plan,
        opts.merge_gap_frames,
        opts.workers,
    )?;
    io::write_tracks(&opts.out, &tracks)?;
    Ok(tracks)
}
