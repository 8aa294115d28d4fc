//! Frame-to-map tracking: constant-velocity prediction, descriptor
//! association against landmarks, motion-only pose refinement, keyframe
//! decision and landmark creation from stereo depth.

mod map;
mod pose;

pub use map::{associate, count_visible, spawn_landmarks, Landmark, LocalMap};
pub use pose::{apply_twist, predict_pose, refine_pose, reprojection_jacobian, RefineResult, ReprojectionJacobian};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Stopwatch;
use crate::evaluation::Trajectory;
use crate::features::FeatureSet;
use crate::geometry::{CameraIntrinsics, PoseSE3};
use crate::matcher::{MatcherWeights, DEFAULT_MATCH_THRESHOLD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("need at least 4 correspondences, found {found}")]
    InsufficientCorrespondences { found: usize },
    #[error("pose refinement diverged after {iterations} iterations")]
    Diverged { iterations: usize },
    #[error("pose refinement normal equations are singular")]
    DegenerateGeometry,
    #[error("tracking lost at frame {frame}: {tracked} associations, {inliers} inliers")]
    TrackingLost { frame: usize, tracked: usize, inliers: usize },
    #[error("matcher: {0}")]
    Matcher(String),
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Fewer inliers than this loses tracking.
    pub min_tracked_matches: usize,
    pub keyframe_min_interval: usize,
    pub keyframe_tracked_ratio: f64,
    pub gn_max_iters: usize,
    /// Stop once the twist update norm drops below this.
    pub gn_tol: f64,
    /// Pixels.
    pub huber_delta: f64,
    /// Pixels around each projected landmark.
    pub search_radius: f64,
    pub match_threshold: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            min_tracked_matches: 15,
            keyframe_min_interval: 5,
            keyframe_tracked_ratio: 0.9,
            gn_max_iters: 20,
            gn_tol: 1e-9,
            huber_delta: 2.0,
            search_radius: 15.0,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        let bad = |m: &str| Err(TrackingError::InvalidConfig(m.to_string()));
        if self.min_tracked_matches == 0 || self.keyframe_min_interval == 0 || self.gn_max_iters == 0 {
            return bad("counts must be positive");
        }
        if !(self.keyframe_tracked_ratio > 0.0 && self.keyframe_tracked_ratio < 1.0) {
            return bad("keyframe_tracked_ratio must lie in (0, 1)");
        }
        if !(self.gn_tol > 0.0 && self.huber_delta > 0.0 && self.search_radius > 0.0) {
            return bad("gn_tol, huber_delta and search_radius must be positive");
        }
        if !(0.0..=1.0).contains(&self.match_threshold) {
            return bad("match_threshold must lie in [0, 1]");
        }
        Ok(())
    }

    /// Frames a landmark stays in the local map without being observed.
    pub fn local_window(&self) -> usize {
        self.keyframe_min_interval * 4
    }
}

/// Per-frame tracking state. `landmark_ids[i]` is the landmark keypoint `i`
/// was associated with as an inlier.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    pub frame_index: usize,
    pub timestamp: f64,
    /// World-from-camera.
    pub pose: PoseSE3,
    pub features: FeatureSet,
    pub keypoint_depths: Vec<Option<f64>>,
    pub landmark_ids: Vec<Option<usize>>,
}

pub fn keyframe_decision(tracked: usize, total_visible: usize, frames_since_kf: usize, cfg: &TrackerConfig) -> bool {
    frames_since_kf >= cfg.keyframe_min_interval && (tracked as f64) < cfg.keyframe_tracked_ratio * total_visible as f64
}

/// What the tracker consumes per frame.
#[derive(Debug, Clone)]
pub struct TrackInput {
    pub timestamp: f64,
    pub width: usize,
    pub height: usize,
    pub features: FeatureSet,
    pub keypoint_depths: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameDiagnostics {
    pub frame_index: usize,
    pub tracked: usize,
    pub inliers: usize,
    /// Map landmarks inside the frustum of the refined pose.
    pub visible: usize,
    pub keyframe: bool,
    pub new_landmarks: usize,
    pub ms_match: f64,
    pub ms_optimize: f64,
}

/// Incremental tracker; frames must be fed in order.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    k: CameraIntrinsics,
    weights: MatcherWeights,
    map: LocalMap,
    poses: Vec<(f64, PoseSE3)>,
    last_keyframe: usize,
}

impl Tracker {
    pub fn new(k: CameraIntrinsics, cfg: TrackerConfig, weights: MatcherWeights) -> Result<Self, TrackingError> {
        cfg.validate()?;
        weights.validate().map_err(|e| TrackingError::Matcher(e.to_string()))?;
        Ok(Self { cfg, k, weights, map: LocalMap::new(), poses: Vec::new(), last_keyframe: 0 })
    }

    pub fn map(&self) -> &LocalMap {
        &self.map
    }

    pub fn poses(&self) -> &[(f64, PoseSE3)] {
        &self.poses
    }

    pub fn trajectory(&self) -> Option<Trajectory> {
        Trajectory::new(self.poses.clone()).ok()
    }

    pub fn process(&mut self, input: TrackInput) -> Result<FrameDiagnostics, TrackingError> {
        let frame_index = self.poses.len();
        let n = input.features.len();
        let input_size = (input.width, input.height);
        let mut frame = FrameState {
            frame_index,
            timestamp: input.timestamp,
            pose: PoseSE3::identity(),
            features: input.features,
            keypoint_depths: input.keypoint_depths,
            landmark_ids: vec![None; n],
        };
        if frame_index == 0 {
            let added = spawn_landmarks(&frame, &mut self.map, &self.k);
            self.map.add_keyframe(0, frame.pose.clone());
            self.poses.push((frame.timestamp, frame.pose));
            self.last_keyframe = 0;
            return Ok(FrameDiagnostics { frame_index, tracked: 0, inliers: 0, visible: 0, keyframe: true, new_landmarks: added, ms_match: 0.0, ms_optimize: 0.0 });
        }
        let predicted = if frame_index == 1 {
            self.poses[0].1.clone()
        } else {
            predict_pose(&self.poses[frame_index - 1].1, &self.poses[frame_index - 2].1)
        };

        let clock = Stopwatch::start();
        let pairs = associate(&frame, &self.map, &predicted, &self.weights, self.cfg.search_radius, self.cfg.match_threshold, &self.k)?;
        let ms_match = clock.elapsed_ms();
        let tracked = pairs.len();
        let lost = |inliers| TrackingError::TrackingLost { frame: frame_index, tracked, inliers };
        if tracked < self.cfg.min_tracked_matches.max(4) {
            return Err(lost(0));
        }

        let clock = Stopwatch::start();
        let kps = frame.features.keypoints();
        let corr: Vec<_> = pairs
            .iter()
            .map(|&(id, ki)| (self.map.landmarks()[&id].position, Vector2::new(kps[ki].x as f64, kps[ki].y as f64)))
            .collect();
        let refined = refine_pose(&predicted, &corr, &self.k, &self.cfg)?;
        let ms_optimize = clock.elapsed_ms();
        let inliers = refined.inliers.iter().filter(|&&b| b).count();
        if inliers < self.cfg.min_tracked_matches {
            return Err(lost(inliers));
        }

        frame.pose = refined.pose;
        for (&(id, ki), &ok) in pairs.iter().zip(&refined.inliers) {
            if ok {
                frame.landmark_ids[ki] = Some(id);
                self.map.mark_seen(id, frame_index);
            }
        }
        let visible = count_visible(&self.map, &frame.pose, &self.k, input_size.0, input_size.1).max(inliers);
        let keyframe = keyframe_decision(inliers, visible, frame_index - self.last_keyframe, &self.cfg);
        let mut new_landmarks = 0;
        if keyframe {
            new_landmarks = spawn_landmarks(&frame, &mut self.map, &self.k);
            self.map.add_keyframe(frame_index, frame.pose.clone());
            self.last_keyframe = frame_index;
        }
        self.map.prune(frame_index, self.cfg.local_window());
        self.poses.push((frame.timestamp, frame.pose));
        Ok(FrameDiagnostics { frame_index, tracked, inliers, visible, keyframe, new_landmarks, ms_match, ms_optimize })
    }
}

#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub trajectory: Trajectory,
    pub diagnostics: Vec<FrameDiagnostics>,
}

/// Failure plus everything tracked before it.
#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct TrackFailure {
    pub error: TrackingError,
    pub poses: Vec<(f64, PoseSE3)>,
    pub diagnostics: Vec<FrameDiagnostics>,
}

/// Runs the tracker over a whole sequence.
pub fn track_sequence(
    frames: impl IntoIterator<Item = TrackInput>,
    k: &CameraIntrinsics,
    cfg: &TrackerConfig,
    weights: &MatcherWeights,
) -> Result<TrackOutput, TrackFailure> {
    let fail = |error, tracker: Option<&Tracker>, diagnostics: Vec<FrameDiagnostics>| TrackFailure {
        error,
        poses: tracker.map(|t| t.poses.clone()).unwrap_or_default(),
        diagnostics,
    };
    let mut tracker = Tracker::new(*k, *cfg, weights.clone()).map_err(|e| fail(e, None, Vec::new()))?;
    let mut diagnostics = Vec::new();
    for input in frames {
        match tracker.process(input) {
            Ok(d) => diagnostics.push(d),
            Err(e) => return Err(fail(e, Some(&tracker), diagnostics)),
        }
    }
    if tracker.poses.len() < 2 {
        return Err(fail(TrackingError::TooFewFrames(tracker.poses.len()), Some(&tracker), diagnostics));
    }
    let trajectory = tracker.trajectory().ok_or_else(|| {
        fail(TrackingError::InvalidConfig("timestamps must strictly increase".into()), Some(&tracker), diagnostics.clone())
    })?;
    Ok(TrackOutput { trajectory, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{ate_rmse, AteOptions};
    use crate::features::Keypoint;
    use crate::geometry::project;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn keyframe_rule() {
        let cfg = TrackerConfig::default();
        assert!(!keyframe_decision(100, 100, 10, &cfg));
        assert!(keyframe_decision(0, 100, 5, &cfg));
        assert!(!keyframe_decision(0, 100, 0, &cfg));
        assert!(!keyframe_decision(90, 100, 7, &cfg));
        assert!(keyframe_decision(89, 100, 7, &cfg));
    }

    #[test]
    fn config_validation() {
        assert!(TrackerConfig::default().validate().is_ok());
        assert!(TrackerConfig { keyframe_tracked_ratio: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrackerConfig { huber_delta: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrackerConfig { min_tracked_matches: 0, ..Default::default() }.validate().is_err());
    }

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0).unwrap()
    }

    struct Cloud {
        points: Vec<Vector3<f64>>,
        descriptors: Vec<Vec<f32>>,
    }

    fn cloud(seed: u64, n: usize) -> Cloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(4.0..8.0)))
            .collect();
        let descriptors = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| (x / norm) as f32).collect()
            })
            .collect();
        Cloud { points, descriptors }
    }

    fn observe(c: &Cloud, pose: &PoseSE3, t: f64) -> TrackInput {
        let t_cw = pose.inverse();
        let (mut kps, mut desc, mut depth) = (Vec::new(), Vec::new(), Vec::new());
        for (p, d) in c.points.iter().zip(&c.descriptors) {
            let pc = t_cw.transform_point(p);
            let Ok(uv) = project(&pc, &k()) else { continue };
            if uv.x < 0.0 || uv.y < 0.0 || uv.x > 319.0 || uv.y > 239.0 {
                continue;
            }
            kps.push(Keypoint { x: uv.x as f32, y: uv.y as f32, level: 0, response: 1.0 });
            desc.extend_from_slice(d);
            depth.push(Some(pc.z));
        }
        TrackInput { timestamp: t, width: 320, height: 240, features: FeatureSet::new(kps, desc, 64).unwrap(), keypoint_depths: depth }
    }

    fn weights() -> MatcherWeights {
        MatcherWeights::scaled_identity(64, 20.0, 3.0)
    }

    #[test]
    fn static_camera_stays_at_identity() {
        let c = cloud(1, 200);
        let frames: Vec<_> = (0..5).map(|i| observe(&c, &PoseSE3::identity(), i as f64 * 0.1)).collect();
        let out = track_sequence(frames, &k(), &TrackerConfig::default(), &weights()).unwrap();
        for (_, p) in out.trajectory.entries() {
            assert!(p.max_abs_diff(&PoseSE3::identity()) < 1e-12);
        }
    }

    #[test]
    fn smooth_motion_tracked_exactly() {
        let c = cloud(2, 400);
        let truth: Vec<PoseSE3> = (0..30)
            .map(|i| {
                let s = i as f64;
                PoseSE3::from_axis_angle(Vector3::new(0.0, 0.004 * s, 0.001 * s), Vector3::new(0.02 * s, 0.005 * s, 0.01 * s))
            })
            .collect();
        let frames: Vec<_> = truth.iter().enumerate().map(|(i, p)| observe(&c, p, i as f64 * 0.1)).collect();
        let out = track_sequence(frames, &k(), &TrackerConfig::default(), &weights()).unwrap();
        assert_eq!(out.trajectory.entries()[0].1, PoseSE3::identity());
        let reference = Trajectory::new(truth.iter().enumerate().map(|(i, p)| (i as f64 * 0.1, p.clone())).collect()).unwrap();
        let ate = ate_rmse(&out.trajectory, &reference, &AteOptions { align: false, ..AteOptions::default() }).unwrap();
        assert!(ate.rmse < 1e-6, "{}", ate.rmse);
        assert!(out.diagnostics.iter().skip(1).all(|d| d.inliers >= 15));
    }

    #[test]
    fn scrambled_descriptors_lose_tracking() {
        let c = cloud(3, 300);
        let mut frames: Vec<_> = (0..8)
            .map(|i| observe(&c, &PoseSE3::from_axis_angle(Vector3::zeros(), Vector3::new(0.01 * i as f64, 0.0, 0.0)), i as f64))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let kps = frames[5].features.keypoints().to_vec();
        let desc: Vec<f32> = (0..kps.len())
            .flat_map(|_| {
                let v: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(move |x| (x / norm) as f32)
            })
            .collect();
        frames[5].features = FeatureSet::new(kps, desc, 64).unwrap();
        let err = track_sequence(frames, &k(), &TrackerConfig::default(), &weights()).unwrap_err();
        assert!(matches!(err.error, TrackingError::TrackingLost { frame: 5, .. }), "{err}");
        assert_eq!(err.poses.len(), 5);
    }

    #[test]
    fn single_frame_rejected() {
        let c = cloud(4, 50);
        let err = track_sequence(vec![observe(&c, &PoseSE3::identity(), 0.0)], &k(), &TrackerConfig::default(), &weights()).unwrap_err();
        assert_eq!(err.error, TrackingError::TooFewFrames(1));
    }

    #[test]
    fn deterministic() {
        let c = cloud(5, 300);
        let frames: Vec<_> = (0..10)
            .map(|i| observe(&c, &PoseSE3::from_axis_angle(Vector3::new(0.0, 0.003 * i as f64, 0.0), Vector3::new(0.03 * i as f64, 0.0, 0.0)), i as f64))
            .collect();
        let a = track_sequence(frames.clone(), &k(), &TrackerConfig::default(), &weights()).unwrap();
        let b = track_sequence(frames, &k(), &TrackerConfig::default(), &weights()).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
    }
}
