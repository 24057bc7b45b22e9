use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hivetrack::evaluation::{evaluate_with_max_gap, make_step1_samples, make_step2_samples, positive_fraction};
use hivetrack::features::{DEFAULT_GATE_RADIUS_PX, DEFAULT_MAX_GAP_FRAMES};
use hivetrack::model::{Detection, Track};
use hivetrack::pipeline::io::{read_detections, read_tracks, read_truth, write_detections, write_tracks, write_truth};
use hivetrack::pipeline::{run_pipeline, PipelineOptions, DEFAULT_CHUNK_LENGTH_FRAMES};
use hivetrack::scoring::{
    save_model, train_forest_with_oob, train_linear, ForestConfig, LinearConfig, MaxFeatures, Model,
};
use hivetrack::synth::{generate, MotionConfig, SynthConfig};
use hivetrack::tracking::{track_baseline, TrackerConfig};
use hivetrack::Error;

#[derive(Parser)]
#[command(name = "hivetrack", version, about = "Track marked bees across frames from decoded marker detections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic recording and its ground truth
    Synth(SynthArgs),
    /// Train the frame-to-frame link classifier
    TrainStep1(TrainStep1Args),
    /// Train the tracklet merge classifier
    TrainStep2(TrainStep2Args),
    /// Track detections with two trained models
    Track(TrackArgs),
    /// Link detections by decoded ID only
    Baseline(BaselineArgs),
    /// Compare tracks with ground truth
    Eval(EvalArgs),
    /// Gap and track-length histograms
    Stats(StatsArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_bees: usize,
    #[arg(long, default_value_t = 4000.0)]
    width_px: f64,
    #[arg(long, default_value_t = 3000.0)]
    height_px: f64,
    #[arg(long, default_value_t = 3.0)]
    fps: f64,
    #[arg(long, default_value_t = 120.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 0.975)]
    detect_prob: f64,
    #[arg(long, default_value_t = 0.005)]
    long_gap_rate: f64,
    #[arg(long, default_value_t = 150.0)]
    absence_mean_frames: f64,
    #[arg(long, default_value_t = 0.011)]
    bit_flip_prob: f64,
    #[arg(long, default_value_t = 0.15)]
    bit_noise_sd: f64,
    #[arg(long, default_value_t = 0.0123)]
    false_positive_rate: f64,
    #[arg(long, default_value_t = 15.0)]
    speed_mean_px: f64,
    #[arg(long, default_value_t = 0.5)]
    turn_sd_rad: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Labelled {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Model file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainStep1Args {
    #[command(flatten)]
    io: Labelled,
    #[arg(long, default_value_t = DEFAULT_GATE_RADIUS_PX)]
    gate_radius_px: f64,
    #[arg(long, default_value_t = 1e-3)]
    l2: f64,
    #[arg(long, default_value_t = 3000)]
    epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    learning_rate: f64,
    #[arg(long)]
    balance_classes: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureRule {
    Sqrt,
    All,
}

#[derive(Args)]
struct TrainStep2Args {
    #[command(flatten)]
    io: Labelled,
    #[arg(long, default_value_t = DEFAULT_MAX_GAP_FRAMES)]
    max_gap_frames: u32,
    #[arg(long, default_value_t = 100)]
    n_trees: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_leaf: usize,
    /// Features tried per split; overrides --feature-rule
    #[arg(long)]
    features_per_split: Option<usize>,
    #[arg(long, value_enum, default_value_t = FeatureRule::Sqrt)]
    feature_rule: FeatureRule,
    #[arg(long)]
    balance_classes: bool,
    /// Threads used to grow trees (0 = all cores)
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrackerArgs {
    #[arg(long, default_value_t = DEFAULT_GATE_RADIUS_PX)]
    gate_radius_px: f64,
    #[arg(long, default_value_t = 0.5)]
    accept_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_GAP_FRAMES)]
    max_gap_frames: u32,
}

impl TrackerArgs {
    fn config(&self) -> TrackerConfig {
        TrackerConfig {
            gate_radius_px: self.gate_radius_px,
            accept_threshold: self.accept_threshold,
            max_gap_frames: self.max_gap_frames,
        }
    }
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    step1_model: PathBuf,
    #[arg(long)]
    step2_model: PathBuf,
    /// Tracks file to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tracker: TrackerArgs,
    #[arg(long, default_value_t = DEFAULT_CHUNK_LENGTH_FRAMES)]
    chunk_length_frames: u32,
    /// Largest gap bridged when joining chunks (default: unlimited)
    #[arg(long)]
    merge_gap_frames: Option<u32>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_GAP_FRAMES)]
    max_gap_frames: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Gap limit for the bridgeable-gap completeness row
    #[arg(long, default_value_t = DEFAULT_MAX_GAP_FRAMES)]
    max_gap_frames: u32,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    detections: PathBuf,
    /// Ground truth for the gap histogram
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Tracks for the track-length histogram
    #[arg(long)]
    tracks: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Data(Error),
    Invariant(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = Result<(), Failure>;

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?,
        None => {
            let mut stdout = std::io::stdout().lock();
            // A closed pipe is not worth a failure.
            let _ = stdout.write_all(text.as_bytes());
        }
    }
    Ok(())
}

/// Output tracks must partition the input detections with one detection per
/// frame per track.
fn check_partition(detections: &[Detection], tracks: &[Track], max_gap: Option<u32>) -> Outcome {
    let mut count: HashMap<u64, usize> = HashMap::new();
    for t in tracks {
        let frames: Vec<u32> = t.detections().map(|d| d.frame).collect();
        if frames.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Failure::Invariant(format!("track {} repeats a frame", t.track_id)));
        }
        if let Some(m) = max_gap {
            if t.max_gap() > m {
                return Err(Failure::Invariant(format!("track {} has a gap above {m}", t.track_id)));
            }
        }
        for d in t.detections() {
            *count.entry(d.detection_id).or_default() += 1;
        }
    }
    if count.len() != detections.len() || count.values().any(|&c| c != 1) {
        return Err(Failure::Invariant("tracks do not partition the detections".into()));
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let cfg = SynthConfig {
        n_bees: a.n_bees,
        width_px: a.width_px,
        height_px: a.height_px,
        fps: a.fps,
        duration_s: a.duration_s,
        detect_prob: a.detect_prob,
        long_gap_rate: a.long_gap_rate,
        absence_mean_frames: a.absence_mean_frames,
        bit_flip_prob: a.bit_flip_prob,
        bit_noise_sd: a.bit_noise_sd,
        false_positive_rate: a.false_positive_rate,
        motion: MotionConfig {
            speed_mean_px: a.speed_mean_px,
            turn_sd_rad: a.turn_sd_rad,
        },
        seed: a.seed,
    };
    let data = generate(&cfg)?;
    write_detections(&a.detections, &data.detections)?;
    write_truth(&a.truth, &data.truth)?;
    log::info!("wrote {} detections, {} truth tracks", data.detections.len(), data.truth.len());
    Ok(())
}

fn read_labelled(io: &Labelled) -> Result<Vec<hivetrack::model::GroundTruthTrack>, Error> {
    let detections = read_detections(&io.detections)?;
    read_truth(&io.truth, &detections)
}

fn train_step1(a: TrainStep1Args) -> Outcome {
    let truth = read_labelled(&a.io)?;
    let samples = make_step1_samples(&truth, a.gate_radius_px);
    log::info!("{} step-1 samples, {:.1}% positive", samples.len(), 100.0 * positive_fraction(&samples));
    let cfg = LinearConfig {
        l2: a.l2,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        seed: a.seed,
        balance_classes: a.balance_classes,
    };
    let model = train_linear(&samples, &cfg)?;
    save_model(&a.io.out, &Model::Linear(model))?;
    Ok(())
}

fn train_step2(a: TrainStep2Args) -> Outcome {
    let truth = read_labelled(&a.io)?;
    let samples = make_step2_samples(&truth, a.max_gap_frames);
    log::info!("{} step-2 samples, {:.1}% positive", samples.len(), 100.0 * positive_fraction(&samples));
    let cfg = ForestConfig {
        n_trees: a.n_trees,
        max_depth: a.max_depth,
        min_leaf: a.min_leaf,
        features_per_split: match (a.features_per_split, a.feature_rule) {
            (Some(k), _) => MaxFeatures::Fixed(k),
            (None, FeatureRule::Sqrt) => MaxFeatures::Sqrt,
            (None, FeatureRule::All) => MaxFeatures::All,
        },
        seed: a.seed,
        balance_classes: a.balance_classes,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let (model, oob) = pool.install(|| train_forest_with_oob(&samples, &cfg))?;
    if let Some(acc) = oob {
        log::info!("out-of-bag accuracy {:.4}", acc);
    }
    save_model(&a.io.out, &Model::Forest(model))?;
    Ok(())
}

fn track(a: TrackArgs) -> Outcome {
    let cfg = a.tracker.config();
    let opts = PipelineOptions {
        detections: a.detections,
        step1_model: a.step1_model,
        step2_model: a.step2_model,
        out: a.out,
        tracker: cfg,
        chunk_length_frames: a.chunk_length_frames,
        merge_gap_frames: a.merge_gap_frames,
        workers: a.workers,
    };
    let tracks = run_pipeline(&opts)?;
    let detections = read_detections(&opts.detections)?;
    check_partition(&detections, &tracks, None)
}

fn baseline(a: BaselineArgs) -> Outcome {
    let detections = read_detections(&a.detections)?;
    let cfg = TrackerConfig {
        max_gap_frames: a.max_gap_frames,
        ..TrackerConfig::default()
    };
    let tracks = track_baseline(detections.clone(), &cfg)?;
    check_partition(&detections, &tracks, Some(a.max_gap_frames))?;
    write_tracks(&a.out, &tracks)?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn eval(a: EvalArgs) -> Outcome {
    let detections = read_detections(&a.detections)?;
    let truth = read_truth(&a.truth, &detections)?;
    let tracks = read_tracks(&a.tracks, &detections)?;
    let report = evaluate_with_max_gap(&tracks, &truth, a.max_gap_frames)?;
    let text = match a.format {
        Format::Text => report.to_string(),
        Format::Json => to_json(&report),
    };
    emit(a.out.as_deref(), &text)
}

#[derive(Serialize)]
struct Stats {
    n_detections: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_histogram: Option<BTreeMap<u32, usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    track_length_histogram: Option<BTreeMap<u32, usize>>,
}

fn stats(a: StatsArgs) -> Outcome {
    let detections = read_detections(&a.detections)?;
    let gap_histogram = match &a.truth {
        Some(p) => {
            let mut h = BTreeMap::new();
            for t in read_truth(p, &detections)? {
                for w in t.detections().windows(2) {
                    *h.entry(w[1].frame - w[0].frame - 1).or_default() += 1;
                }
            }
            Some(h)
        }
        None => None,
    };
    let track_length_histogram = match &a.tracks {
        Some(p) => {
            let mut h = BTreeMap::new();
            for t in read_tracks(p, &detections)? {
                *h.entry(t.end_frame() - t.start_frame() + 1).or_default() += 1;
            }
            Some(h)
        }
        None => None,
    };
    let s = Stats {
        n_detections: detections.len(),
        gap_histogram,
        track_length_histogram,
    };
    let text = match a.format {
        Format::Json => to_json(&s),
        Format::Text => {
            let mut out = format!("detections {}\n", s.n_detections);
            for (name, h) in [("gap", &s.gap_histogram), ("track length", &s.track_length_histogram)] {
                if let Some(h) = h {
                    out.push_str(&format!("{name} histogram\n"));
                    for (k, v) in h {
                        out.push_str(&format!("{k:>8} {v:>8}\n"));
                    }
                }
            }
            out
        }
    };
    emit(a.out.as_deref(), &text)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = std::panic::catch_unwind(|| match cli.command {
        Command::Synth(a) => synth(a),
        Command::TrainStep1(a) => train_step1(a),
        Command::TrainStep2(a) => train_step2(a),
        Command::Track(a) => track(a),
        Command::Baseline(a) => baseline(a),
        Command::Eval(a) => eval(a),
        Command::Stats(a) => stats(a),
    });
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Data(e))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Ok(Err(Failure::Invariant(msg))) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
        Err(_) => ExitCode::from(3),
    }
}
