//! Domain types shared by the tracker: detections, tracklets, tracks and
//! ground truth, plus the bit utilities used for ID voting.
//!
//! Marker IDs are 12-bit integers. `bits[0]` is the most significant bit, so
//! a detection whose first bit probability is 1.0 and all others 0.0 decodes
//! to 2048.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of coding bits on a marker.
pub const N_BITS: usize = 12;

/// Largest representable marker ID.
pub const MAX_ID: u16 = (1 << N_BITS) - 1;

/// Per-bit probabilities that the bit is set.
pub type Bits = [f64; N_BITS];

/// Maps any angle onto `[-π, π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// One decoded marker observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub detection_id: u64,
    pub frame: u32,
    pub timestamp: f64,
    pub cam_id: u8,
    pub x: f64,
    pub y: f64,
    pub orientation: f64,
    pub bits: Bits,
}

impl Detection {
    /// Builds a detection, normalizing the orientation and validating the bits.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        detection_id: u64,
        frame: u32,
        timestamp: f64,
        cam_id: u8,
        x: f64,
        y: f64,
        orientation: f64,
        bits: &[f64],
    ) -> Result<Self> {
        let bits = validate_bits(bits)?;
        if !x.is_finite() || !y.is_finite() || !orientation.is_finite() {
            return Err(Error::invalid(format!(
                "detection {detection_id}: non-finite position or orientation"
            )));
        }
        Ok(Detection {
            detection_id,
            frame,
            timestamp,
            cam_id,
            x,
            y,
            orientation: normalize_angle(orientation),
            bits,
        })
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn distance_to(&self, other: &Detection) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Hard-decoded ID of this single detection.
    pub fn decoded_id(&self) -> u16 {
        binarize(&self.bits)
    }
}

/// Canonical detection order: by frame, then by id.
pub fn canonical_order(a: &Detection, b: &Detection) -> Ordering {
    a.frame
        .cmp(&b.frame)
        .then(a.detection_id.cmp(&b.detection_id))
}

fn validate_bits(bits: &[f64]) -> Result<Bits> {
    let bits: Bits = bits.try_into().map_err(|_| {
        Error::invalid(format!("expected {N_BITS} bit probabilities, got {}", bits.len()))
    })?;
    if let Some(b) = bits.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::invalid(format!(
            "bit probability {b} outside [0, 1]"
        )));
    }
    Ok(bits)
}

/// A gap-free run of detections, one per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub tracklet_id: u64,
    detections: Vec<Detection>,
}

impl Tracklet {
    pub fn new(tracklet_id: u64, detections: Vec<Detection>) -> Result<Self> {
        if detections.is_empty() {
            return Err(Error::invalid(format!("tracklet {tracklet_id} is empty")));
        }
        if let Some(w) = detections.windows(2).find(|w| w[1].frame != w[0].frame + 1) {
            return Err(Error::invalid(format!(
                "tracklet {tracklet_id} is not gap-free: frame {} followed by {}",
                w[0].frame, w[1].frame
            )));
        }
        Ok(Tracklet {
            tracklet_id,
            detections,
        })
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn first(&self) -> &Detection {
        &self.detections[0]
    }

    pub fn last(&self) -> &Detection {
        &self.detections[self.detections.len() - 1]
    }

    pub fn start_frame(&self) -> u32 {
        self.first().frame
    }

    pub fn end_frame(&self) -> u32 {
        self.last().frame
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_detections(self) -> Vec<Detection> {
        self.detections
    }
}

/// Splits a frame-sorted detection sequence into maximal gap-free runs.
pub fn split_into_tracklets(detections: Vec<Detection>, first_id: u64) -> Vec<Tracklet> {
    let mut out: Vec<Tracklet> = Vec::new();
    let mut run: Vec<Detection> = Vec::new();
    for d in detections {
        if let Some(prev) = run.last() {
            if d.frame != prev.frame + 1 {
                let id = first_id + out.len() as u64;
                out.push(Tracklet::new(id, std::mem::take(&mut run)).expect("gap-free run"));
            }
        }
        run.push(d);
    }
    if !run.is_empty() {
        let id = first_id + out.len() as u64;
        out.push(Tracklet::new(id, run).expect("gap-free run"));
    }
    out
}

/// A chain of non-overlapping tracklets, possibly with gaps, carrying one ID.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    tracklets: Vec<Tracklet>,
    pub assigned_id: Option<u16>,
}

impl Track {
    pub fn new(track_id: u64, tracklets: Vec<Tracklet>) -> Result<Self> {
        if tracklets.is_empty() {
            return Err(Error::invalid(format!("track {track_id} has no tracklets")));
        }
        if let Some(w) = tracklets
            .windows(2)
            .find(|w| w[1].start_frame() <= w[0].end_frame())
        {
            return Err(Error::invalid(format!(
                "track {track_id}: tracklet {} overlaps or precedes tracklet {}",
                w[1].tracklet_id, w[0].tracklet_id
            )));
        }
        Ok(Track {
            track_id,
            tracklets,
            assigned_id: None,
        })
    }

    pub fn from_tracklet(track_id: u64, tracklet: Tracklet) -> Self {
        Track {
            track_id,
            tracklets: vec![tracklet],
            assigned_id: None,
        }
    }

    /// Builds a track from frame-sorted detections, splitting at gaps.
    pub fn from_detections(track_id: u64, mut detections: Vec<Detection>) -> Result<Self> {
        detections.sort_by(canonical_order);
        if let Some(w) = detections.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(Error::invalid(format!(
                "track {track_id}: two detections in frame {}",
                w[0].frame
            )));
        }
        Track::new(track_id, split_into_tracklets(detections, 0))
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    pub fn detections(&self) -> impl DoubleEndedIterator<Item = &Detection> + Clone {
        self.tracklets.iter().flat_map(|t| t.detections().iter())
    }

    pub fn start_frame(&self) -> u32 {
        self.tracklets[0].start_frame()
    }

    pub fn end_frame(&self) -> u32 {
        self.tracklets[self.tracklets.len() - 1].end_frame()
    }

    pub fn last_detection(&self) -> &Detection {
        self.tracklets[self.tracklets.len() - 1].last()
    }

    pub fn len(&self) -> usize {
        self.tracklets.iter().map(Tracklet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest number of missing frames between consecutive tracklets.
    pub fn max_gap(&self) -> u32 {
        self.tracklets
            .windows(2)
            .map(|w| w[1].start_frame() - w[0].end_frame() - 1)
            .max()
            .unwrap_or(0)
    }

    pub(crate) fn append(&mut self, tracklet: Tracklet) {
        debug_assert!(tracklet.start_frame() > self.end_frame());
        self.tracklets.push(tracklet);
    }

    pub(crate) fn extend(&mut self, other: Track) {
        for t in other.tracklets {
            self.append(t);
        }
    }

    /// Computes and stores the median-vote ID.
    pub fn assign_id(&mut self) -> u16 {
        let id = assign_track_id(self).expect("tracks are non-empty");
        self.assigned_id = Some(id);
        id
    }
}

/// A manually labelled trajectory of one animal.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrack {
    pub true_id: u16,
    detections: Vec<Detection>,
}

impl GroundTruthTrack {
    pub fn new(true_id: u16, detections: Vec<Detection>) -> Result<Self> {
        if true_id > MAX_ID {
            return Err(Error::invalid(format!("true id {true_id} exceeds {MAX_ID}")));
        }
        if let Some(w) = detections.windows(2).find(|w| w[1].frame <= w[0].frame) {
            return Err(Error::invalid(format!(
                "ground truth {true_id}: frames not strictly increasing ({} then {})",
                w[0].frame, w[1].frame
            )));
        }
        Ok(GroundTruthTrack {
            true_id,
            detections,
        })
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn start_frame(&self) -> Option<u32> {
        self.detections.first().map(|d| d.frame)
    }

    /// Largest gap between consecutive detections.
    pub fn max_gap(&self) -> u32 {
        self.detections
            .windows(2)
            .map(|w| w[1].frame - w[0].frame - 1)
            .max()
            .unwrap_or(0)
    }
}

fn binarize(bits: &Bits) -> u16 {
    bits.iter()
        .fold(0u16, |acc, &b| (acc << 1) | u16::from(b >= 0.5))
}

/// Hard-decodes bit probabilities, bit 0 being the most significant.
pub fn binarize_bits(bits: &[f64]) -> Result<u16> {
    Ok(binarize(&validate_bits(bits)?))
}

/// Bits of an integer ID in the same MSB-first convention.
pub fn id_to_bits(id: u16) -> Bits {
    let mut bits = [0.0; N_BITS];
    for (i, b) in bits.iter_mut().enumerate() {
        *b = f64::from((id >> (N_BITS - 1 - i)) & 1);
    }
    bits
}

fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-bit median over any non-empty collection of detections.
pub fn median_bits<'a, I>(detections: I) -> Option<Bits>
where
    I: IntoIterator<Item = &'a Detection>,
{
    let mut columns: [Vec<f64>; N_BITS] = Default::default();
    for d in detections {
        for (col, &b) in columns.iter_mut().zip(d.bits.iter()) {
            col.push(b);
        }
    }
    if columns[0].is_empty() {
        return None;
    }
    let mut out = [0.0; N_BITS];
    for (o, col) in out.iter_mut().zip(columns.iter_mut()) {
        *o = median_in_place(col);
    }
    Some(out)
}

/// Per-bit median of the detections' bit probabilities.
pub fn bitwise_median(detections: &[Detection]) -> Result<Bits> {
    median_bits(detections).ok_or_else(|| Error::invalid("median of an empty detection list"))
}

/// The median-vote ID of a track.
pub fn assign_track_id(track: &Track) -> Result<u16> {
    median_bits(track.detections())
        .map(|m| binarize(&m))
        .ok_or_else(|| Error::invalid(format!("track {} is empty", track.track_id)))
}

/// Smallest absolute angle between two orientations, in `[0, π]`.
pub fn angular_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d).clamp(0.0, PI)
}

/// L1 distance between two bit-probability vectors.
pub fn manhattan_bits(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != N_BITS || b.len() != N_BITS {
        return Err(Error::invalid(format!(
            "bit vectors must have length {N_BITS} (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize_bits(&[0.0; 12]).unwrap(), 0);
        assert_eq!(binarize_bits(&[1.0; 12]).unwrap(), 4095);
        let mut b = [0.0; 12];
        b[0] = 1.0;
        assert_eq!(binarize_bits(&b).unwrap(), 2048);
        // threshold is inclusive
        assert_eq!(binarize_bits(&[0.5; 12]).unwrap(), 4095);
        assert!(binarize_bits(&[0.0; 11]).is_err());
        assert!(binarize_bits(&[1.5; 12]).is_err());
    }

    #[test]
    fn id_bits_round_trip() {
        for id in [0u16, 1, 2048, 42, 4095] {
            assert_eq!(binarize_bits(&id_to_bits(id)).unwrap(), id);
        }
    }

    #[test]
    fn median_examples() {
        let mk = |b0: f64| {
            let mut b = [0.3; 12];
            b[0] = b0;
            det_bits(0, 0, 0.0, 0.0, b)
        };
        let one = mk(0.7);
        assert_eq!(bitwise_median(std::slice::from_ref(&one)).unwrap(), one.bits);

        let three = [mk(0.9), mk(0.8), mk(0.1)];
        assert!((bitwise_median(&three).unwrap()[0] - 0.8).abs() < 1e-12);

        let two = [mk(0.2), mk(0.6)];
        assert!((bitwise_median(&two).unwrap()[0] - 0.4).abs() < 1e-12);

        assert!(bitwise_median(&[]).is_err());
    }

    #[test]
    fn track_id_examples() {
        let t = Track::from_detections(0, vec![det_bits(0, 0, 0.0, 0.0, [1.0; 12])]).unwrap();
        assert_eq!(assign_track_id(&t).unwrap(), 4095);

        let mut hi = [0.0; 12];
        hi[0] = 1.0;
        let t = Track::from_detections(
            0,
            vec![
                det_bits(0, 0, 0.0, 0.0, hi),
                det_bits(1, 1, 0.0, 0.0, hi),
                det_bits(2, 2, 0.0, 0.0, [0.0; 12]),
            ],
        )
        .unwrap();
        assert_eq!(assign_track_id(&t).unwrap(), 2048);
    }

    #[test]
    fn angle_examples() {
        assert_eq!(angular_difference(1.3, 1.3), 0.0);
        assert!((angular_difference(0.0, PI) - PI).abs() < 1e-12);
        assert!((angular_difference(-3.0, 3.0) - (2.0 * PI - 6.0)).abs() < 1e-12);
    }

    #[test]
    fn manhattan_examples() {
        assert_eq!(manhattan_bits(&[0.3; 12], &[0.3; 12]).unwrap(), 0.0);
        assert_eq!(manhattan_bits(&[1.0; 12], &[0.0; 12]).unwrap(), 12.0);
        let mut a = [0.5; 12];
        let mut b = [0.5; 12];
        a[0] = 0.9;
        a[1] = 0.1;
        b[0] = 0.1;
        b[1] = 0.9;
        assert!((manhattan_bits(&a, &b).unwrap() - 1.6).abs() < 1e-12);
        assert!(manhattan_bits(&a, &b[..11]).is_err());
    }

    #[test]
    fn orientation_is_normalized() {
        let d = Detection::new(0, 0, 0.0, 0, 0.0, 0.0, PI, &[0.0; 12]).unwrap();
        assert!((d.orientation + PI).abs() < 1e-12);
        assert!(normalize_angle(-1e-18) < PI);
        assert!(normalize_angle(7.0 * PI) >= -PI);
    }

    #[test]
    fn tracklet_rejects_gaps() {
        assert!(Tracklet::new(0, vec![det(0, 0, 0.0, 0.0), det(1, 2, 0.0, 0.0)]).is_err());
        assert!(Tracklet::new(0, vec![]).is_err());
        assert!(Tracklet::new(0, vec![det(0, 5, 0.0, 0.0)]).is_ok());
    }

    #[test]
    fn split_runs() {
        let ds: Vec<_> = [0, 1, 2, 5, 6, 9].iter().map(|&f| det(f as u64, f, 0.0, 0.0)).collect();
        let ts = split_into_tracklets(ds, 10);
        let lens: Vec<_> = ts.iter().map(Tracklet::len).collect();
        assert_eq!(lens, vec![3, 2, 1]);
        assert_eq!(ts[2].tracklet_id, 12);
        let tr = Track::new(0, ts).unwrap();
        assert_eq!(tr.max_gap(), 2);
    }

    fn bits_strategy() -> impl Strategy<Value = Bits> {
        prop::array::uniform12(0.0f64..=1.0)
    }

    proptest! {
        #[test]
        fn single_detection_median_matches_binarize(bits in bits_strategy()) {
            let d = det_bits(0, 0, 0.0, 0.0, bits);
            let m = bitwise_median(std::slice::from_ref(&d)).unwrap();
            prop_assert_eq!(binarize_bits(&m).unwrap(), binarize_bits(&bits).unwrap());
        }

        #[test]
        fn median_is_permutation_invariant(
            all in prop::collection::vec(bits_strategy(), 1..9),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let dets: Vec<_> = all.iter().enumerate()
                .map(|(i, b)| det_bits(i as u64, i as u32, 0.0, 0.0, *b)).collect();
            let mut shuffled = dets.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(bitwise_median(&dets).unwrap(), bitwise_median(&shuffled).unwrap());
        }

        #[test]
        fn angular_difference_properties(a in -10.0f64..10.0, b in -10.0f64..10.0, k in -3i32..3) {
            let d = angular_difference(a, b);
            prop_assert!((0.0..=PI).contains(&d));
            prop_assert!((d - angular_difference(b, a)).abs() < 1e-12);
            let shifted = angular_difference(a + 2.0 * PI * f64::from(k), b);
            prop_assert!((d - shifted).abs() < 1e-9);
        }

        #[test]
        fn manhattan_is_a_metric(a in bits_strategy(), b in bits_strategy(), c in bits_strategy()) {
            let ab = manhattan_bits(&a, &b).unwrap();
            prop_assert!((ab - manhattan_bits(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert_eq!(manhattan_bits(&a, &a).unwrap(), 0.0);
            if a != b { prop_assert!(ab > 0.0); }
            let ac = manhattan_bits(&a, &c).unwrap();
            let cb = manhattan_bits(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
            prop_assert!((0.0..=12.0).contains(&ab));
        }

        #[test]
        fn track_id_ignores_storage_order(all in prop::collection::vec(bits_strategy(), 1..9)) {
            let dets: Vec<_> = all.iter().enumerate()
                .map(|(i, b)| det_bits(i as u64, i as u32, 0.0, 0.0, *b)).collect();
            let forward = median_bits(dets.iter()).unwrap();
            let backward = median_bits(dets.iter().rev()).unwrap();
            prop_assert_eq!(binarize_bits(&forward).unwrap(), binarize_bits(&backward).unwrap());
        }
    }
}
