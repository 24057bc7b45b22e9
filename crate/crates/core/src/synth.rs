//! Synthetic hive recordings with ground truth.
//!
//! Each bee walks a correlated random walk inside the comb rectangle and
//! alternates between present and absent intervals (a two-state Markov
//! chain). While present it is detected independently in each frame. Every
//! detection carries the bee's code corrupted by per-bit flips and additive
//! Gaussian noise. A ground-truth track is one uninterrupted presence interval
//! of one bee; it may contain short gaps from missed detections.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::error::{Error, Result};
use crate::model::{id_to_bits, normalize_angle, Bits, Detection, GroundTruthTrack, MAX_ID, N_BITS};

/// Noise on the marker orientation relative to the walking direction.
const ORIENTATION_NOISE_SD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    /// Mean step length per frame.
    pub speed_mean_px: f64,
    /// Standard deviation of the heading change per frame.
    pub turn_sd_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_bees: usize,
    pub width_px: f64,
    pub height_px: f64,
    pub fps: f64,
    pub duration_s: f64,
    pub detect_prob: f64,
    /// Per-frame probability that a present bee leaves.
    pub long_gap_rate: f64,
    pub absence_mean_frames: f64,
    pub bit_flip_prob: f64,
    pub bit_noise_sd: f64,
    /// Expected fraction of all detections that are spurious.
    pub false_positive_rate: f64,
    pub motion: MotionConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// 100 bees for two minutes; about 13% of detections decode wrongly.
    fn default() -> Self {
        SynthConfig {
            n_bees: 100,
            width_px: 4000.0,
            height_px: 3000.0,
            fps: 3.0,
            duration_s: 120.0,
            detect_prob: 0.975,
            long_gap_rate: 0.005,
            absence_mean_frames: 150.0,
            bit_flip_prob: 0.011,
            bit_noise_sd: 0.15,
            false_positive_rate: 0.0123,
            motion: MotionConfig {
                speed_mean_px: 15.0,
                turn_sd_rad: 0.5,
            },
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_frames(&self) -> u32 {
        (self.duration_s * self.fps).round() as u32
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bees == 0 {
            return Err(Error::invalid("need at least one bee"));
        }
        if self.n_bees > usize::from(MAX_ID) + 1 {
            return Err(Error::invalid(format!("at most {} distinct bee ids", MAX_ID as usize + 1)));
        }
        if !(self.duration_s > 0.0 && self.fps > 0.0) || self.n_frames() == 0 {
            return Err(Error::invalid("duration and frame rate must give at least one frame"));
        }
        if !(self.width_px > 0.0 && self.height_px > 0.0) {
            return Err(Error::invalid("comb dimensions must be positive"));
        }
        for (name, p) in [
            ("detect_prob", self.detect_prob),
            ("long_gap_rate", self.long_gap_rate),
            ("bit_flip_prob", self.bit_flip_prob),
            ("false_positive_rate", self.false_positive_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is not a probability")));
            }
        }
        if self.false_positive_rate >= 1.0 {
            return Err(Error::invalid("false_positive_rate must be below 1"));
        }
        if !(self.absence_mean_frames >= 1.0) {
            return Err(Error::invalid("absence_mean_frames must be at least 1"));
        }
        if !(self.bit_noise_sd >= 0.0 && self.motion.speed_mean_px >= 0.0 && self.motion.turn_sd_rad >= 0.0) {
            return Err(Error::invalid("noise, speed and turn parameters must be non-negative"));
        }
        Ok(())
    }
}

/// A generated recording: truth tracks and all detections (including false
/// positives) in canonical order, with detection ids `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub truth: Vec<GroundTruthTrack>,
    pub detections: Vec<Detection>,
}

/// Flips each bit with `flip_prob`, adds Gaussian noise, clips to `[0, 1]`.
pub fn corrupt_bits<R: Rng + ?Sized>(bits: &Bits, flip_prob: f64, noise_sd: f64, rng: &mut R) -> Bits {
    let mut out = *bits;
    for b in &mut out {
        if flip_prob > 0.0 && rng.gen_bool(flip_prob) {
            *b = 1.0 - *b;
        }
        if noise_sd > 0.0 {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            *b += noise_sd * z;
        }
        *b = b.clamp(0.0, 1.0);
    }
    out
}

/// Probability that a binary code corrupted by [`corrupt_bits`] hard-decodes
/// to a different ID.
pub fn expected_decode_error(flip_prob: f64, noise_sd: f64) -> f64 {
    let cross = if noise_sd > 0.0 {
        NormalDist::new(0.0, noise_sd).expect("positive sd").sf(0.5)
    } else {
        0.0
    };
    let bit_error = flip_prob * (1.0 - cross) + (1.0 - flip_prob) * cross;
    1.0 - (1.0 - bit_error).powi(N_BITS as i32)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Sighting {
    frame: u32,
    x: f64,
    y: f64,
    orientation: f64,
    bits: Bits,
}

/// Presence intervals of one bee, each a list of sightings.
fn simulate_bee(cfg: &SynthConfig, code: u16, rng: &mut ChaCha8Rng) -> Vec<Vec<Sighting>> {
    let (w, h) = (cfg.width_px, cfg.height_px);
    let true_bits = id_to_bits(code);
    let turn = Normal::new(0.0, cfg.motion.turn_sd_rad).expect("valid sd");
    let speed = Normal::new(cfg.motion.speed_mean_px, 0.3 * cfg.motion.speed_mean_px).expect("valid sd");
    let orient = Normal::new(0.0, ORIENTATION_NOISE_SD).expect("valid sd");

    let come_back = 1.0 / cfg.absence_mean_frames;
    let p_present = if cfg.long_gap_rate == 0.0 {
        1.0
    } else {
        come_back / (come_back + cfg.long_gap_rate)
    };
    let mut present = rng.gen_bool(p_present);
    let mut x = rng.gen_range(0.0..=w);
    let mut y = rng.gen_range(0.0..=h);
    let mut heading = rng.gen_range(-PI..PI);

    let mut visits: Vec<Vec<Sighting>> = Vec::new();
    let mut current: Vec<Sighting> = Vec::new();
    for frame in 0..cfg.n_frames() {
        if frame > 0 {
            if present {
                if cfg.long_gap_rate > 0.0 && rng.gen_bool(cfg.long_gap_rate) {
                    present = false;
                }
            } else if rng.gen_bool(come_back) {
                present = true;
                x = rng.gen_range(0.0..=w);
                y = rng.gen_range(0.0..=h);
                heading = rng.gen_range(-PI..PI);
            }
            if present {
                heading += turn.sample(rng);
                let step = speed.sample(rng).max(0.0);
                x += step * heading.cos();
                y += step * heading.sin();
                if x < 0.0 || x > w {
                    x = reflect(x, w);
                    heading = PI - heading;
                }
                if y < 0.0 || y > h {
                    y = reflect(y, h);
                    heading = -heading;
                }
                heading = normalize_angle(heading);
            }
        }
        if !present {
            if !current.is_empty() {
                visits.push(std::mem::take(&mut current));
            }
            continue;
        }
        if rng.gen_bool(cfg.detect_prob) {
            current.push(Sighting {
                frame,
                x,
                y,
                orientation: normalize_angle(heading + orient.sample(rng)),
                bits: corrupt_bits(&true_bits, cfg.bit_flip_prob, cfg.bit_noise_sd, rng),
            });
        }
    }
    if !current.is_empty() {
        visits.push(current);
    }
    visits
}

fn reflect(v: f64, max: f64) -> f64 {
    let period = 2.0 * max;
    let m = v.rem_euclid(period);
    if m > max {
        period - m
    } else {
        m
    }
}

/// Generates a recording. Identical configs give identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut id_rng = stream_rng(cfg.seed, 0);
    let codes: Vec<u16> = sample(&mut id_rng, usize::from(MAX_ID) + 1, cfg.n_bees)
        .into_iter()
        .map(|c| c as u16)
        .collect();

    let per_bee: Vec<Vec<Vec<Sighting>>> = codes
        .par_iter()
        .enumerate()
        .map(|(i, &code)| simulate_bee(cfg, code, &mut stream_rng(cfg.seed, 2 + i as u64)))
        .collect();

    // (frame, source, sequence) orders real detections by bee index and puts
    // false positives last in each frame.
    let mut keyed: Vec<((u32, usize, usize), Sighting, Option<usize>)> = Vec::new();
    let mut visit_owner: Vec<u16> = Vec::new();
    let mut per_frame = vec![0u32; cfg.n_frames() as usize];
    for (bee, visits) in per_bee.into_iter().enumerate() {
        for visit in visits {
            let v = visit_owner.len();
            visit_owner.push(codes[bee]);
            for (k, s) in visit.into_iter().enumerate() {
                per_frame[s.frame as usize] += 1;
                keyed.push(((s.frame, bee, k), s, Some(v)));
            }
        }
    }

    let mut fp_rng = stream_rng(cfg.seed, 1);
    let spawn = (cfg.false_positive_rate / (1.0 - cfg.false_positive_rate)).min(1.0);
    for (frame, &n) in per_frame.iter().enumerate() {
        let mut k = 0;
        for _ in 0..n {
            if spawn > 0.0 && fp_rng.gen_bool(spawn) {
                let mut bits = [0.0; N_BITS];
                for b in &mut bits {
                    *b = fp_rng.gen();
                }
                let s = Sighting {
                    frame: frame as u32,
                    x: fp_rng.gen_range(0.0..=cfg.width_px),
                    y: fp_rng.gen_range(0.0..=cfg.height_px),
                    orientation: fp_rng.gen_range(-PI..PI),
                    bits,
                };
                keyed.push(((frame as u32, cfg.n_bees, k), s, None));
                k += 1;
            }
        }
    }
    keyed.sort_by_key(|e| e.0);

    let mut visit_dets: Vec<Vec<Detection>> = vec![Vec::new(); visit_owner.len()];
    let mut detections = Vec::with_capacity(keyed.len());
    for (id, (_, s, visit)) in keyed.into_iter().enumerate() {
        let d = Detection::new(
            id as u64,
            s.frame,
            f64::from(s.frame) / cfg.fps,
            0,
            s.x,
            s.y,
            s.orientation,
            &s.bits,
        )?;
        if let Some(v) = visit {
            visit_dets[v].push(d.clone());
        }
        detections.push(d);
    }

    let mut truth: Vec<GroundTruthTrack> = visit_owner
        .into_iter()
        .zip(visit_dets)
        .map(|(code, dets)| GroundTruthTrack::new(code, dets))
        .collect::<Result<_>>()?;
    truth.sort_by_key(|t| (t.start_frame(), t.detections()[0].detection_id));
    Ok(SynthData { truth, detections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::binarize_bits;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn small() -> SynthConfig {
        SynthConfig {
            n_bees: 20,
            duration_s: 60.0,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_detections_decode_exactly() {
        let cfg = SynthConfig {
            bit_flip_prob: 0.0,
            bit_noise_sd: 0.0,
            detect_prob: 1.0,
            false_positive_rate: 0.0,
            ..small()
        };
        let data = generate(&cfg).unwrap();
        for t in &data.truth {
            for d in t.detections() {
                assert_eq!(d.decoded_id(), t.true_id);
            }
        }
    }

    #[test]
    fn corrupt_identity_and_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = id_to_bits(0b1010_0101_1100);
        assert_eq!(corrupt_bits(&b, 0.0, 0.0, &mut rng), b);
        assert_eq!(corrupt_bits(&[1.0; N_BITS], 1.0, 0.0, &mut rng), [0.0; N_BITS]);
    }

    #[test]
    fn default_decode_error_is_near_thirteen_percent() {
        let data = generate(&SynthConfig::default()).unwrap();
        let real: Vec<_> = data.truth.iter().flat_map(|t| t.detections().iter().map(move |d| (d, t.true_id))).collect();
        let wrong = real.iter().filter(|(d, id)| d.decoded_id() != *id).count();
        let rate = wrong as f64 / real.len() as f64;
        assert!((0.11..=0.16).contains(&rate), "decode error {rate}");
        let expected = expected_decode_error(0.011, 0.15);
        assert!((expected - 0.13).abs() < 0.01, "{expected}");
    }

    #[test]
    fn decode_error_matches_analytic_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (flip, sd) in [(0.011, 0.15), (0.03, 0.0), (0.0, 0.25), (0.02, 0.2)] {
            let code = id_to_bits(0b0110_1001_0011);
            let n = 100_000;
            let wrong = (0..n)
                .filter(|_| binarize_bits(&corrupt_bits(&code, flip, sd, &mut rng)).unwrap() != 0b0110_1001_0011)
                .count();
            let measured = wrong as f64 / n as f64;
            assert!((measured - expected_decode_error(flip, sd)).abs() < 0.015, "{flip} {sd}: {measured}");
        }
    }

    #[test]
    fn mostly_gap_free() {
        let cfg = SynthConfig { detect_prob: 0.98, long_gap_rate: 0.001, ..small() };
        let data = generate(&cfg).unwrap();
        let gaps: Vec<u32> = data
            .truth
            .iter()
            .flat_map(|t| t.detections().windows(2).map(|w| w[1].frame - w[0].frame - 1).collect::<Vec<_>>())
            .collect();
        let zero = gaps.iter().filter(|&&g| g == 0).count() as f64 / gaps.len() as f64;
        assert!(zero >= 0.95, "{zero}");
    }

    #[test]
    fn truth_partitions_real_detections() {
        let data = generate(&small()).unwrap();
        let mut ids: Vec<u64> = data.truth.iter().flat_map(|t| t.detections().iter().map(|d| d.detection_id)).collect();
        let n_truth = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n_truth);
        let fp = data.detections.len() - n_truth;
        assert!(fp > 0);
        let frac = fp as f64 / data.detections.len() as f64;
        assert!((0.005..0.025).contains(&frac), "{frac}");
        let codes: HashSet<u16> = data.truth.iter().map(|t| t.true_id).collect();
        assert!(codes.len() <= 20);
        for (i, d) in data.detections.iter().enumerate() {
            assert_eq!(d.detection_id, i as u64);
            assert!((0.0..=4000.0).contains(&d.x) && (0.0..=3000.0).contains(&d.y));
            assert!((-PI..PI).contains(&d.orientation));
        }
    }

    #[test]
    fn deterministic_and_rejects_bad_configs() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        assert_ne!(generate(&small()).unwrap(), generate(&SynthConfig { seed: 1, ..small() }).unwrap());
        assert!(generate(&SynthConfig { n_bees: 0, ..small() }).is_err());
        assert!(generate(&SynthConfig { duration_s: 0.0, ..small() }).is_err());
        assert!(generate(&SynthConfig { detect_prob: 1.5, ..small() }).is_err());
    }

    proptest! {
        #[test]
        fn reflect_stays_inside(v in -1e4f64..1e4, max in 1.0f64..5000.0) {
            let r = reflect(v, max);
            prop_assert!((0.0..=max).contains(&r));
        }
    }
}
