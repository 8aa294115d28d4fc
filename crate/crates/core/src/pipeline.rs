//! Frame-by-frame frontend: feature extraction, depth, tracking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Stopwatch;
use crate::evaluation::Trajectory;
use crate::features::{BuiltinDetector, FeatureDetector, FeatureSet};
use crate::geometry::{CameraIntrinsics, PoseSE3, StereoRig};
use crate::image::GrayImage;
use crate::matcher::MatcherWeights;
use crate::pyramid::{build_pyramid, detect_multiscale, PyramidConfig, PyramidError};
use crate::stereo::{compute_depth, keypoint_depths, DepthMap, SgmConfig, StereoError};
use crate::tracking::{FrameDiagnostics, TrackInput, Tracker, TrackerConfig, TrackingError};

/// Similarity gain and matchability bias of the default matcher weights.
pub const DEFAULT_MATCH_GAIN: f64 = 20.0;
pub const DEFAULT_MATCHABILITY_BIAS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("feature extraction: {0}")]
    Pyramid(#[from] PyramidError),
    #[error("stereo: {0}")]
    Stereo(#[from] StereoError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error("frame {frame}: {message}")]
    Input { frame: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub pyramid: PyramidConfig,
    pub sgm: SgmConfig,
    pub tracker: TrackerConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.pyramid.validate()?;
        self.sgm.validate()?;
        self.tracker.validate()?;
        Ok(())
    }
}

/// One input frame. Features and keypoint depths override extraction and
/// depth estimation when present.
#[derive(Debug, Clone, Default)]
pub struct FrameInput {
    pub timestamp: f64,
    pub width: usize,
    pub height: usize,
    pub left: Option<GrayImage>,
    pub right: Option<GrayImage>,
    pub depth: Option<DepthMap>,
    pub features: Option<FeatureSet>,
    pub keypoint_depths: Option<Vec<Option<f64>>>,
}

impl FrameInput {
    pub fn stereo(timestamp: f64, left: GrayImage, right: GrayImage) -> Self {
        Self { timestamp, width: left.width(), height: left.height(), left: Some(left), right: Some(right), ..Self::default() }
    }

    pub fn rgbd(timestamp: f64, image: GrayImage, depth: DepthMap) -> Self {
        Self { timestamp, width: image.width(), height: image.height(), left: Some(image), depth: Some(depth), ..Self::default() }
    }

    pub fn precomputed(timestamp: f64, width: usize, height: usize, features: FeatureSet, depths: Vec<Option<f64>>) -> Self {
        Self { timestamp, width, height, features: Some(features), keypoint_depths: Some(depths), ..Self::default() }
    }

    pub fn with_features(mut self, features: FeatureSet) -> Self {
        self.features = Some(features);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameTiming {
    pub frame_index: usize,
    pub ms_extract: f64,
    pub ms_stereo: f64,
    pub ms_match: f64,
    pub ms_optimize: f64,
    pub ms_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub diagnostics: FrameDiagnostics,
    pub timing: FrameTiming,
    pub features: usize,
    pub with_depth: usize,
}

pub struct Frontend {
    cfg: PipelineConfig,
    rig: Option<StereoRig>,
    detector: Box<dyn FeatureDetector>,
    k: CameraIntrinsics,
    weights: Option<MatcherWeights>,
    tracker: Option<Tracker>,
    frame_index: usize,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend").field("cfg", &self.cfg).field("rig", &self.rig).field("frame_index", &self.frame_index).finish()
    }
}

impl Frontend {
    /// `baseline` is required for stereo input. `weights` defaults to the
    /// scaled identity for the descriptor dimension of the first frame.
    pub fn new(
        cfg: PipelineConfig,
        k: CameraIntrinsics,
        baseline: Option<f64>,
        weights: Option<MatcherWeights>,
        detector: Box<dyn FeatureDetector>,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let rig = match baseline {
            Some(b) => Some(StereoRig::new(k, b).map_err(|e| PipelineError::Input { frame: 0, message: e.to_string() })?),
            None => None,
        };
        let tracker = match &weights {
            Some(w) => Some(Tracker::new(k, cfg.tracker, w.clone())?),
            None => None,
        };
        Ok(Self { cfg, rig, detector, k, weights, tracker, frame_index: 0 })
    }

    pub fn with_builtin(cfg: PipelineConfig, k: CameraIntrinsics, baseline: Option<f64>) -> Result<Self, PipelineError> {
        Self::new(cfg, k, baseline, None, Box::new(BuiltinDetector::default()))
    }

    pub fn tracker(&self) -> Option<&Tracker> {
        self.tracker.as_ref()
    }

    pub fn poses(&self) -> &[(f64, PoseSE3)] {
        self.tracker.as_ref().map(|t| t.poses()).unwrap_or(&[])
    }

    pub fn process(&mut self, input: FrameInput) -> Result<FrameReport, PipelineError> {
        let frame = self.frame_index;
        let bad = |message: &str| PipelineError::Input { frame, message: message.to_string() };
        let total = Stopwatch::start();

        let clock = Stopwatch::start();
        let features = match input.features {
            Some(f) => f,
            None => {
                let img = input.left.as_ref().ok_or_else(|| bad("no image and no precomputed features"))?;
                let pyr = build_pyramid(img, &self.cfg.pyramid)?;
                detect_multiscale(&pyr, &self.cfg.pyramid, self.detector.as_ref())?
            }
        };
        let ms_extract = clock.elapsed_ms();

        let clock = Stopwatch::start();
        let depths = match (input.keypoint_depths, &input.depth, &input.right) {
            (Some(d), _, _) => d,
            (None, Some(map), _) => keypoint_depths(features.keypoints(), map),
            (None, None, Some(right)) => {
                let left = input.left.as_ref().ok_or_else(|| bad("right image without left image"))?;
                let rig = self.rig.as_ref().ok_or_else(|| bad("stereo input needs a baseline"))?;
                let out = compute_depth(left, right, &self.cfg.sgm, rig)?;
                keypoint_depths(features.keypoints(), &out.depth)
            }
            (None, None, None) => return Err(bad("no depth source")),
        };
        let ms_stereo = clock.elapsed_ms();
        if depths.len() != features.len() {
            return Err(bad(&format!("{} depths for {} keypoints", depths.len(), features.len())));
        }

        let n_features = features.len();
        let with_depth = depths.iter().filter(|d| d.is_some()).count();
        if self.tracker.is_none() {
            let w = self.weights.clone().unwrap_or_else(|| default_weights(features.descriptor_dim()));
            self.tracker = Some(Tracker::new(self.k, self.cfg.tracker, w)?);
        }
        let tracker = self.tracker.as_mut().expect("tracker initialised");
        let diagnostics = tracker.process(TrackInput {
            timestamp: input.timestamp,
            width: input.width,
            height: input.height,
            features,
            keypoint_depths: depths,
        })?;
        self.frame_index += 1;
        let timing = FrameTiming {
            frame_index: frame,
            ms_extract,
            ms_stereo,
            ms_match: diagnostics.ms_match,
            ms_optimize: diagnostics.ms_optimize,
            ms_total: total.elapsed_ms(),
        };
        Ok(FrameReport { diagnostics, timing, features: n_features, with_depth })
    }
}

pub fn default_weights(dim: usize) -> MatcherWeights {
    MatcherWeights::scaled_identity(dim, DEFAULT_MATCH_GAIN, DEFAULT_MATCHABILITY_BIAS)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub reports: Vec<FrameReport>,
}

#[derive(Debug, Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: PipelineError,
    pub poses: Vec<(f64, PoseSE3)>,
    pub reports: Vec<FrameReport>,
}

/// Feeds every frame through `frontend`, stopping at the first error.
pub fn run_frames(frontend: &mut Frontend, frames: impl IntoIterator<Item = Result<FrameInput, PipelineError>>) -> Result<RunOutput, RunFailure> {
    let mut reports = Vec::new();
    for frame in frames {
        let result = frame.and_then(|f| frontend.process(f));
        match result {
            Ok(r) => {
                log::debug!(
                    "frame {}: {} features, {} tracked, {} inliers{}",
                    r.timing.frame_index,
                    r.features,
                    r.diagnostics.tracked,
                    r.diagnostics.inliers,
                    if r.diagnostics.keyframe { ", keyframe" } else { "" }
                );
                reports.push(r);
            }
            Err(error) => return Err(RunFailure { error, poses: frontend.poses().to_vec(), reports }),
        }
    }
    let poses = frontend.poses().to_vec();
    if poses.len() < 2 {
        return Err(RunFailure { error: TrackingError::TooFewFrames(poses.len()).into(), poses, reports });
    }
    match Trajectory::new(poses.clone()) {
        Ok(trajectory) => Ok(RunOutput { trajectory, reports }),
        Err(e) => Err(RunFailure { error: PipelineError::Input { frame: poses.len(), message: e.to_string() }, poses, reports }),
    }
}
