use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use slamfrontkit::evaluation::{
    ate_rmse, format_trajectory_tum, read_trajectory_kitti, read_trajectory_tum, AteOptions, AteReport, EvalError, Trajectory,
};
use slamfrontkit::features::{load_all_features, save_features, BuiltinDetector, FeatureError, FeatureSet};
use slamfrontkit::fsutil::write_atomic;
use slamfrontkit::matcher::MatcherWeights;
use slamfrontkit::parallel::WorkerPool;
use slamfrontkit::pipeline::{run_frames, FrameInput, FrameReport, Frontend, PipelineConfig, PipelineError, RunFailure};
use slamfrontkit::pyramid::{build_pyramid, detect_multiscale, PyramidError};
use slamfrontkit::synthetic::{OrbitConfig, SyntheticScene};
use slamfrontkit::tracking::TrackingError;

use crate::config::{ConfigError, DatasetKind, FeatureSource, RunConfig, WeightsSource};
use crate::dataset::{load_dataset, Dataset, DatasetError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("features: {0}")]
    Features(#[from] FeatureError),
    #[error("matcher weights: {0}")]
    Weights(String),
    #[error("{0}")]
    Pipeline(PipelineError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for tracking failures during a run, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Pipeline(PipelineError::Tracking(
                TrackingError::TrackingLost { .. }
                | TrackingError::Diverged { .. }
                | TrackingError::DegenerateGeometry
                | TrackingError::InsufficientCorrespondences { .. },
            )) => 2,
            _ => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(format!("cannot create {}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(io_err(format!("cannot write {}", path.display())))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub frames_tracked: usize,
    pub keyframes: usize,
    pub mean_ms_total: f64,
    pub median_ms_total: f64,
    pub lost_frame: Option<usize>,
    pub error: Option<String>,
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Nearest-rank percentile, `p` in [0, 100].
fn percentile(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

pub const DIAGNOSTICS_HEADER: &str =
    "frame_index,timestamp,features,with_depth,tracked,inliers,visible,keyframe,new_landmarks,ms_extract,ms_stereo,ms_match,ms_optimize,ms_total";

pub fn format_diagnostics(reports: &[FrameReport], timestamps: &[f64]) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for r in reports {
        let d = &r.diagnostics;
        let t = &r.timing;
        let ts = timestamps.get(d.frame_index).copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3}",
            d.frame_index,
            ts,
            r.features,
            r.with_depth,
            d.tracked,
            d.inliers,
            d.visible,
            d.keyframe as u8,
            d.new_landmarks,
            t.ms_extract,
            t.ms_stereo,
            t.ms_match,
            t.ms_optimize,
            t.ms_total
        );
    }
    out
}

fn load_weights(cfg: &RunConfig) -> Result<Option<MatcherWeights>, CliError> {
    match &cfg.matcher_weights {
        WeightsSource::Identity => Ok(None),
        WeightsSource::File(p) => MatcherWeights::load(p).map(Some).map_err(|e| CliError::Weights(format!("{}: {e}", p.display()))),
    }
}

fn load_feature_file(cfg: &RunConfig, frames: usize) -> Result<Option<Vec<FeatureSet>>, CliError> {
    let FeatureSource::File(p) = &cfg.feature_source else { return Ok(None) };
    let sets = load_all_features(p)?;
    if sets.len() < frames {
        return Err(CliError::Usage(format!("{} holds {} frames but the dataset has {frames}", p.display(), sets.len())));
    }
    Ok(Some(sets))
}

/// Frames with optional precomputed features, read lazily.
fn frame_stream<'a>(
    ds: &'a Dataset,
    features: Option<Vec<FeatureSet>>,
) -> impl Iterator<Item = Result<FrameInput, PipelineError>> + Send + 'a {
    let mut features = features.map(|v| v.into_iter());
    (0..ds.len()).map(move |i| {
        let frame = ds.load_frame(i).map_err(|e| PipelineError::Input { frame: i, message: e.to_string() })?;
        Ok(match features.as_mut().and_then(|it| it.next()) {
            Some(f) => frame.with_features(f),
            None => frame,
        })
    })
}

fn frontend(cfg: &RunConfig, ds: &Dataset) -> Result<Frontend, CliError> {
    Frontend::new(cfg.pipeline(), ds.intrinsics, ds.baseline, load_weights(cfg)?, Box::new(BuiltinDetector::default()))
        .map_err(CliError::Pipeline)
}

/// Runs the pipeline and writes `trajectory.txt`, `diagnostics.csv` and
/// `summary.json` to the output directory, also when tracking is lost.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let features = load_feature_file(cfg, ds.len())?;
    let mut fe = frontend(cfg, &ds)?;
    ensure_dir(&cfg.output_dir)?;
    let timestamps: Vec<f64> = ds.frames.iter().map(|f| f.timestamp).collect();
    let pool = WorkerPool::new(cfg.threads);
    let result = pool.install(|| run_frames(&mut fe, frame_stream(&ds, features)));
    let (poses, reports, failure) = match result {
        Ok(out) => (out.trajectory.entries().to_vec(), out.reports, None),
        Err(RunFailure { error, poses, reports }) => (poses, reports, Some(error)),
    };
    if let Ok(traj) = Trajectory::new(poses.clone()) {
        write_file(&cfg.output_dir.join("trajectory.txt"), format_trajectory_tum(&traj).as_bytes())?;
    }
    write_file(&cfg.output_dir.join("diagnostics.csv"), format_diagnostics(&reports, &timestamps).as_bytes())?;
    let totals: Vec<f64> = reports.iter().map(|r| r.timing.ms_total).collect();
    let lost_frame = match &failure {
        Some(PipelineError::Tracking(TrackingError::TrackingLost { frame, .. })) => Some(*frame),
        Some(PipelineError::Tracking(_)) => Some(poses.len()),
        _ => None,
    };
    let summary = RunSummary {
        frames: ds.len(),
        frames_tracked: poses.len(),
        keyframes: reports.iter().filter(|r| r.diagnostics.keyframe).count(),
        mean_ms_total: mean(&totals),
        median_ms_total: median(&totals),
        lost_frame,
        error: failure.as_ref().map(|e| e.to_string()),
    };
    let json = serde_json::to_string_pretty(&summary).expect("plain struct serializes");
    write_file(&cfg.output_dir.join("summary.json"), json.as_bytes())?;
    match failure {
        Some(e) => Err(CliError::Pipeline(e)),
        None => Ok(summary),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Tum,
    Kitti,
}

pub fn read_trajectory(path: &Path, format: TrajectoryFormat) -> Result<Trajectory, CliError> {
    let r = match format {
        TrajectoryFormat::Tum => read_trajectory_tum(path),
        TrajectoryFormat::Kitti => read_trajectory_kitti(path),
    };
    r.map_err(|e| match e {
        EvalError::Parse { line, message } => {
            EvalError::Parse { line, message: format!("{}: {message}", path.display()) }
        }
        other => other,
    })
    .map_err(CliError::Eval)
}

/// Guesses the format from the first data line: 8 columns is TUM, 12 is
/// KITTI.
pub fn detect_format(path: &Path) -> Result<TrajectoryFormat, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(format!("cannot read {}", path.display())))?;
    let parse_err = |line: usize, message: String| CliError::Eval(EvalError::Parse { line, message });
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        return match line.split_whitespace().count() {
            8 => Ok(TrajectoryFormat::Tum),
            12 => Ok(TrajectoryFormat::Kitti),
            n => Err(parse_err(i + 1, format!("{}: {n} columns is neither TUM (8) nor KITTI (12)", path.display()))),
        };
    }
    Err(CliError::Eval(EvalError::Empty))
}

/// Without an explicit `format` both files must be detected as the same
/// format.
pub fn evaluate(est: &Path, reference: &Path, format: Option<TrajectoryFormat>, opts: &AteOptions) -> Result<AteReport, CliError> {
    let format = match format {
        Some(f) => f,
        None => {
            let a = detect_format(est)?;
            let b = detect_format(reference)?;
            if a != b {
                return Err(CliError::Eval(EvalError::Parse {
                    line: 1,
                    message: format!("{} looks like {a:?} but {} looks like {b:?}; pass --format", est.display(), reference.display()),
                }));
            }
            a
        }
    };
    let est = read_trajectory(est, format)?;
    let reference = read_trajectory(reference, format)?;
    Ok(ate_rmse(&est, &reference, opts)?)
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct StageStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
}

impl StageStats {
    fn of(v: &[f64]) -> Self {
        Self {
            mean: mean(v),
            median: median(v),
            p95: percentile(v, 95.0),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BenchReport {
    pub frames: usize,
    pub warmup: usize,
    pub measured: usize,
    pub threads: usize,
    pub width: usize,
    pub height: usize,
    pub stages: BTreeMap<String, StageStats>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,mean_ms,median_ms,p95_ms,min_ms,max_ms\n");
        for (name, s) in &self.stages {
            let _ = writeln!(out, "{name},{:.3},{:.3},{:.3},{:.3},{:.3}", s.mean, s.median, s.p95, s.min, s.max);
        }
        out
    }
}

/// Where `bench` takes its frames from.
#[derive(Debug, Clone)]
pub enum BenchSource {
    Dataset(RunConfig),
    Synthetic { scene: OrbitConfig, config: RunConfig },
}

fn bench_report(reports: &[FrameReport], frames: usize, warmup: usize, threads: usize, size: (usize, usize)) -> BenchReport {
    let measured = &reports[warmup.min(reports.len())..];
    let stage = |f: fn(&FrameReport) -> f64| StageStats::of(&measured.iter().map(f).collect::<Vec<_>>());
    let mut stages = BTreeMap::new();
    stages.insert("extract".to_string(), stage(|r| r.timing.ms_extract));
    stages.insert("stereo".to_string(), stage(|r| r.timing.ms_stereo));
    stages.insert("match".to_string(), stage(|r| r.timing.ms_match));
    stages.insert("optimize".to_string(), stage(|r| r.timing.ms_optimize));
    stages.insert("total".to_string(), stage(|r| r.timing.ms_total));
    BenchReport { frames, warmup, measured: measured.len(), threads, width: size.0, height: size.1, stages }
}

/// Per-stage timing statistics over all frames after `warmup`. Writes
/// `bench.json` and `bench.csv` to the configured output directory.
pub fn bench(source: &BenchSource, warmup: usize) -> Result<BenchReport, CliError> {
    let (cfg, reports, frames, size) = match source {
        BenchSource::Dataset(cfg) => {
            cfg.validate()?;
            let ds = load_dataset(cfg)?;
            if warmup >= ds.len() {
                return Err(CliError::Usage(format!("warmup {warmup} leaves nothing to measure in {} frames", ds.len())));
            }
            let features = load_feature_file(cfg, ds.len())?;
            let size = ds.load_frame(0).map(|f| (f.width, f.height))?;
            let mut fe = frontend(cfg, &ds)?;
            let pool = WorkerPool::new(cfg.threads);
            let out = pool.install(|| run_frames(&mut fe, frame_stream(&ds, features))).map_err(|f| CliError::Pipeline(f.error))?;
            (cfg, out.reports, ds.len(), size)
        }
        BenchSource::Synthetic { scene, config } => {
            if config.threads == 0 {
                return Err(ConfigError::Invalid("threads must be at least 1".into()).into());
            }
            if warmup >= scene.frames {
                return Err(CliError::Usage(format!("warmup {warmup} leaves nothing to measure in {} frames", scene.frames)));
            }
            let s = SyntheticScene::generate(scene.clone());
            let mut fe = Frontend::new(config.pipeline(), s.intrinsics(), Some(scene.baseline), load_weights(config)?, Box::new(BuiltinDetector::default()))
                .map_err(CliError::Pipeline)?;
            let pool = WorkerPool::new(config.threads);
            let frames = (0..s.frame_count()).map(|i| {
                let (l, r) = s.render_stereo(i);
                Ok(FrameInput::stereo(s.timestamp(i), l, r))
            });
            let out = pool.install(|| run_frames(&mut fe, frames)).map_err(|f| CliError::Pipeline(f.error))?;
            (config, out.reports, s.frame_count(), (scene.width, scene.height))
        }
    };
    let report = bench_report(&reports, frames, warmup, cfg.threads, size);
    ensure_dir(&cfg.output_dir)?;
    let json = serde_json::to_string_pretty(&report).expect("plain struct serializes");
    write_file(&cfg.output_dir.join("bench.json"), json.as_bytes())?;
    write_file(&cfg.output_dir.join("bench.csv"), report.to_csv().as_bytes())?;
    Ok(report)
}

/// Runs the builtin multi-scale detector over every left image and writes
/// one `.lsft` file.
pub fn extract(cfg: &RunConfig, output: &Path) -> Result<usize, CliError> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let detector = BuiltinDetector::default();
    let pool = WorkerPool::new(cfg.threads);
    let sets = pool.install(|| {
        (0..ds.len())
            .map(|i| {
                let img = crate::dataset::read_gray(&ds.frames[i].left)?;
                let pyr = build_pyramid(&img, &cfg.pyramid).map_err(pyr_err(i))?;
                detect_multiscale(&pyr, &cfg.pyramid, &detector).map_err(pyr_err(i))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_features(output, &sets)?;
    Ok(sets.len())
}

fn pyr_err(frame: usize) -> impl Fn(PyramidError) -> CliError {
    move |e| CliError::Pipeline(PipelineError::Input { frame, message: e.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthLayout {
    /// `left/`, `right/`, `calib.json`, `times.txt`.
    Folder,
    /// `left/`, `depth/` (16-bit PNG, 5000 per metre), `calib.json`, `times.txt`.
    FolderDepth,
    /// `sequences/00/{image_0,image_1,calib.txt,times.txt}`.
    Kitti,
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub scene: OrbitConfig,
    pub layout: SynthLayout,
    /// Also write exact projected features to `features.lsft`.
    pub features: bool,
    /// Replace descriptors with fresh random ones from this frame on.
    pub corrupt_from: Option<usize>,
}

/// Writes a synthetic sequence and its ground truth (`groundtruth.txt`,
/// TUM format) to `dir`.
pub fn synth(dir: &Path, opts: &SynthOptions) -> Result<PathBuf, CliError> {
    let s = SyntheticScene::generate(opts.scene.clone());
    let data_dir = match opts.layout {
        SynthLayout::Kitti => dir.join("sequences").join("00"),
        _ => dir.to_path_buf(),
    };
    let (left_dir, second_dir) = match opts.layout {
        SynthLayout::Folder => (data_dir.join("left"), data_dir.join("right")),
        SynthLayout::FolderDepth => (data_dir.join("left"), data_dir.join("depth")),
        SynthLayout::Kitti => (data_dir.join("image_0"), data_dir.join("image_1")),
    };
    ensure_dir(&left_dir)?;
    ensure_dir(&second_dir)?;
    let c = s.config();
    let mut times = String::new();
    for i in 0..s.frame_count() {
        let name = format!("{i:06}.png");
        crate::dataset::write_gray_png(&left_dir.join(&name), &s.render(i, false))?;
        match opts.layout {
            SynthLayout::FolderDepth => crate::dataset::write_depth_png(&second_dir.join(&name), &s.render_depth(i, false), 5000.0)?,
            _ => crate::dataset::write_gray_png(&second_dir.join(&name), &s.render(i, true))?,
        }
        let _ = writeln!(times, "{:.6}", s.timestamp(i));
    }
    write_file(&data_dir.join("times.txt"), times.as_bytes())?;
    match opts.layout {
        SynthLayout::Kitti => {
            let row = |name: &str, tx: f64| {
                format!("{name}: {} 0 {} {} 0 {} {} 0 0 0 1 0\n", c.fx, c.cx, tx, c.fy, c.cy)
            };
            let calib = row("P0", 0.0) + &row("P1", -c.fx * c.baseline);
            write_file(&data_dir.join("calib.txt"), calib.as_bytes())?;
        }
        layout => {
            let calib = crate::dataset::FolderCalibration {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                baseline: (layout == SynthLayout::Folder).then_some(c.baseline),
                depth_factor: (layout == SynthLayout::FolderDepth).then_some(5000.0),
                frame_rate: c.frame_rate,
            };
            write_file(&data_dir.join("calib.json"), serde_json::to_string_pretty(&calib).expect("serializes").as_bytes())?;
        }
    }
    write_file(&dir.join("groundtruth.txt"), format_trajectory_tum(&s.ground_truth()).as_bytes())?;
    let mut run = RunConfig {
        dataset_kind: match opts.layout {
            SynthLayout::Kitti => DatasetKind::KittiOdometry,
            _ => DatasetKind::ImageFolder,
        },
        dataset_root: PathBuf::from("."),
        sequence_id: if opts.layout == SynthLayout::Kitti { "00".into() } else { String::new() },
        ..RunConfig::default()
    };
    let tuned = synth_pipeline(c);
    (run.pyramid, run.sgm, run.tracker) = (tuned.pyramid, tuned.sgm, tuned.tracker);
    let json = serde_json::to_string_pretty(&run).expect("plain struct serializes");
    write_file(&dir.join("config.json"), json.as_bytes())?;
    if opts.features {
        let sets: Vec<FeatureSet> = (0..s.frame_count())
            .map(|i| {
                let (f, _) = s.exact_features(i, 4.0);
                match opts.corrupt_from {
                    Some(k) if i >= k => scramble(&f, i as u64),
                    _ => f,
                }
            })
            .collect();
        save_features(dir.join("features.lsft"), &sets)?;
    }
    Ok(data_dir)
}

/// Settings for running on a synthetic orbit: the disparity range covers
/// the nearest possible point.
pub fn synth_pipeline(scene: &OrbitConfig) -> PipelineConfig {
    let z_min = (scene.orbit_radius - scene.cloud_radius - scene.sprite_size).max(0.1);
    let d_needed = (scene.fx * scene.baseline / z_min).ceil() as usize + 4;
    let mut cfg = PipelineConfig::default();
    cfg.sgm.d_max = d_needed.next_power_of_two().max(16) - 1;
    // Sprites are flat-textured, so coarse levels add jittery keypoints
    // and weak smoothing penalties keep the sprite edges sharp.
    cfg.pyramid.levels = 2;
    cfg.sgm.p1 = 4.0 * 25.0;
    cfg.sgm.p2 = 64.0 * 25.0;
    cfg.tracker.huber_delta = 1.0;
    cfg
}

/// Same keypoints, unrelated unit descriptors.
fn scramble(set: &FeatureSet, seed: u64) -> FeatureSet {
    let dim = set.descriptor_dim();
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut desc = Vec::with_capacity(set.len() * dim);
    for _ in 0..set.len() {
        let row: Vec<f64> = (0..dim).map(|_| next()).collect();
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r32: Vec<f32> = row.iter().map(|v| (v / n) as f32).collect();
        let n32 = r32.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        r32.iter_mut().for_each(|v| *v = (*v as f64 / n32) as f32);
        desc.extend(r32);
    }
    FeatureSet::new(set.keypoints().to_vec(), desc, dim).expect("unit rows")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(mean(&v), 2.5);
        assert_eq!(median(&v), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        let w: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&w, 95.0), 95.0);
        assert_eq!(percentile(&w, 100.0), 100.0);
        assert_eq!(percentile(&[7.0], 95.0), 7.0);
        let s = StageStats::of(&[1.0, 3.0]);
        assert_eq!((s.min, s.max, s.mean), (1.0, 3.0, 2.0));
    }

    #[test]
    fn exit_codes() {
        let lost = CliError::Pipeline(PipelineError::Tracking(TrackingError::TrackingLost { frame: 3, tracked: 0, inliers: 0 }));
        assert_eq!(lost.exit_code(), 2);
        assert_eq!(CliError::Pipeline(PipelineError::Tracking(TrackingError::Diverged { iterations: 5 })).exit_code(), 2);
        assert_eq!(CliError::Pipeline(PipelineError::Tracking(TrackingError::TooFewFrames(1))).exit_code(), 1);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Eval(EvalError::NoOverlap).exit_code(), 1);
    }

    #[test]
    fn scramble_keeps_geometry() {
        let s = SyntheticScene::generate(OrbitConfig { points: 30, frames: 1, ..OrbitConfig::default() });
        let (f, _) = s.exact_features(0, 4.0);
        let g = scramble(&f, 9);
        assert_eq!(f.keypoints(), g.keypoints());
        assert_ne!(f.descriptors(), g.descriptors());
    }
}
