//! JSON Lines readers and writers.
//!
//! Detections: `{"detection_id", "frame", "ts", "cam", "x", "y", "theta", "bits"}`.
//! Ground truth: `{"true_id", "detection_ids"}`.
//! Tracks: `{"track_id", "assigned_id", "detection_ids", "start_frame", "end_frame"}`.
//! Blank lines are skipped. Errors carry the file and 1-based line number.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{assign_track_id, Detection, GroundTruthTrack, Track};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub detection_id: u64,
    pub frame: u32,
    pub ts: f64,
    pub cam: u8,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub bits: Vec<f64>,
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        DetectionRecord {
            detection_id: d.detection_id,
            frame: d.frame,
            ts: d.timestamp,
            cam: d.cam_id,
            x: d.x,
            y: d.y,
            theta: d.orientation,
            bits: d.bits.to_vec(),
        }
    }
}

impl DetectionRecord {
    pub fn into_detection(self) -> Result<Detection> {
        Detection::new(self.detection_id, self.frame, self.ts, self.cam, self.x, self.y, self.theta, &self.bits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub true_id: u16,
    pub detection_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track_id: u64,
    pub assigned_id: u16,
    pub detection_ids: Vec<u64>,
    pub start_frame: u32,
    pub end_frame: u32,
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| record_error(path, i + 1, e.to_string()))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn record_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Record {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn write_records<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads detections, rejecting invalid values and repeated ids.
pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let mut seen = HashMap::new();
    read_records::<DetectionRecord>(path)?
        .into_iter()
        .map(|(line, rec)| {
            let d = rec.into_detection().map_err(|e| record_error(path, line, e.to_string()))?;
            if let Some(first) = seen.insert(d.detection_id, line) {
                return Err(record_error(
                    path,
                    line,
                    format!("detection id {} already used on line {first}", d.detection_id),
                ));
            }
            Ok(d)
        })
        .collect()
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    write_records(path, detections.iter().map(DetectionRecord::from))
}

fn index(detections: &[Detection]) -> HashMap<u64, &Detection> {
    detections.iter().map(|d| (d.detection_id, d)).collect()
}

fn resolve(
    path: &Path,
    line: usize,
    ids: &[u64],
    by_id: &HashMap<u64, &Detection>,
    used: &mut HashMap<u64, usize>,
) -> Result<Vec<Detection>> {
    ids.iter()
        .map(|id| {
            let d = by_id
                .get(id)
                .ok_or_else(|| record_error(path, line, format!("unknown detection id {id}")))?;
            if let Some(other) = used.insert(*id, line) {
                return Err(record_error(path, line, format!("detection {id} also listed on line {other}")));
            }
            Ok((*d).clone())
        })
        .collect()
}

/// Reads ground-truth tracks, resolving ids against `detections`.
pub fn read_truth(path: &Path, detections: &[Detection]) -> Result<Vec<GroundTruthTrack>> {
    let by_id = index(detections);
    let mut used = HashMap::new();
    read_records::<TruthRecord>(path)?
        .into_iter()
        .map(|(line, rec)| {
            let mut dets = resolve(path, line, &rec.detection_ids, &by_id, &mut used)?;
            dets.sort_by_key(|d| d.frame);
            GroundTruthTrack::new(rec.true_id, dets).map_err(|e| record_error(path, line, e.to_string()))
        })
        .collect()
}

pub fn write_truth(path: &Path, truth: &[GroundTruthTrack]) -> Result<()> {
    write_records(
        path,
        truth.iter().map(|t| TruthRecord {
            true_id: t.true_id,
            detection_ids: t.detections().iter().map(|d| d.detection_id).collect(),
        }),
    )
}

/// Reads tracks, resolving ids against `detections`.
pub fn read_tracks(path: &Path, detections: &[Detection]) -> Result<Vec<Track>> {
    let by_id = index(detections);
    let mut used = HashMap::new();
    read_records::<TrackRecord>(path)?
        .into_iter()
        .map(|(line, rec)| {
            let dets = resolve(path, line, &rec.detection_ids, &by_id, &mut used)?;
            let mut t = Track::from_detections(rec.track_id, dets).map_err(|e| record_error(path, line, e.to_string()))?;
            t.assigned_id = Some(rec.assigned_id);
            Ok(t)
        })
        .collect()
}

pub fn track_record(t: &Track) -> TrackRecord {
    TrackRecord {
        track_id: t.track_id,
        assigned_id: t
            .assigned_id
            .unwrap_or_else(|| assign_track_id(t).expect("tracks are non-empty")),
        detection_ids: t.detections().map(|d| d.detection_id).collect(),
        start_frame: t.start_frame(),
        end_frame: t.end_frame(),
    }
}

pub fn write_tracks(path: &Path, tracks: &[Track]) -> Result<()> {
    write_records(path, tracks.iter().map(track_record))
}
