use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slamfrontkit::features::{BuiltinDetector, FeatureSet, Keypoint};
use slamfrontkit::image::GrayImage;
use slamfrontkit::matcher::{match_feature_sets, MatcherWeights};
use slamfrontkit::pyramid::{build_pyramid, detect_multiscale, PyramidConfig};
use slamfrontkit::stereo::{aggregate_costs, gradient_magnitude, matching_cost, select_disparity, SgmConfig};
use slamfrontkit::synthetic::{OrbitConfig, SyntheticScene};

pub const FRAME_WIDTH: usize = 320;
pub const FRAME_HEIGHT: usize = 240;

fn scene() -> &'static SyntheticScene {
    static SCENE: OnceLock<SyntheticScene> = OnceLock::new();
    SCENE.get_or_init(|| SyntheticScene::generate(OrbitConfig { width: FRAME_WIDTH, height: FRAME_HEIGHT, ..OrbitConfig::default() }))
}

pub fn orbit_frame(frame: usize, right: bool) -> Vec<u8> {
    let s = scene();
    let img = s.render(frame % s.frame_count(), right);
    img.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()
}

fn gray(width: usize, height: usize, pixels: &[u8]) -> Result<GrayImage, String> {
    GrayImage::from_u8(width, height, pixels).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy)]
pub struct DetectParams {
    pub levels: usize,
    pub scale_factor: f64,
    pub total_features: usize,
    pub nms_radius: f64,
}

pub fn detect(width: usize, height: usize, pixels: &[u8], p: &DetectParams) -> Result<Vec<f32>, String> {
    let img = gray(width, height, pixels)?;
    let cfg = PyramidConfig { scale_factor: p.scale_factor, levels: p.levels, total_features: p.total_features, nms_radius: p.nms_radius };
    let pyr = build_pyramid(&img, &cfg).map_err(|e| e.to_string())?;
    let set = detect_multiscale(&pyr, &cfg, &BuiltinDetector::default()).map_err(|e| e.to_string())?;
    Ok(set.keypoints().iter().flat_map(|k| [k.x, k.y, k.level as f32, k.response]).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct SgmParams {
    pub d_max: usize,
    pub window_radius: usize,
    pub directions: usize,
}

pub fn disparity(width: usize, height: usize, left: &[u8], right: &[u8], p: &SgmParams) -> Result<Vec<i16>, String> {
    let l = gray(width, height, left)?;
    let r = gray(width, height, right)?;
    let cfg = SgmConfig { d_max: p.d_max, directions: p.directions, ..SgmConfig::with_window(p.window_radius) };
    cfg.validate().map_err(|e| e.to_string())?;
    let gl = gradient_magnitude(&l).map_err(|e| e.to_string())?;
    let gr = gradient_magnitude(&r).map_err(|e| e.to_string())?;
    let vol = matching_cost(&gl, &gr, &cfg).map_err(|e| e.to_string())?;
    let d = select_disparity(&aggregate_costs(&vol, &cfg), &cfg);
    Ok(d.values().iter().map(|v| v.map_or(-1, |d| d as i16)).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct AssignmentParams {
    pub m: usize,
    pub n: usize,
    pub dim: usize,
    /// Standard deviation of the per-component noise added before
    /// renormalising.
    pub noise: f64,
    /// Similarity scale; 1 is the plain identity projection.
    pub gain: f64,
    pub threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentDemo {
    pub rows: usize,
    pub cols: usize,
    pub p: Vec<f64>,
    pub matches: Vec<i32>,
    pub truth: Vec<i32>,
}

fn unit(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn set(rows: &[Vec<f32>], dim: usize) -> Result<FeatureSet, String> {
    let kps = (0..rows.len()).map(|i| Keypoint { x: i as f32, y: 0.0, level: 0, response: 1.0 }).collect();
    FeatureSet::new(kps, rows.concat(), dim).map_err(|e| e.to_string())
}

pub fn assignment(p: &AssignmentParams) -> Result<AssignmentDemo, String> {
    if p.m == 0 || p.n == 0 || p.n > p.m || p.m > 64 || p.dim < 2 {
        return Err(format!("need 1 <= n <= m <= 64 and dim >= 2, got m={} n={} dim={}", p.m, p.n, p.dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let a: Vec<Vec<f32>> = (0..p.m).map(|_| unit((0..p.dim).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
    let mut order: Vec<usize> = (0..p.m).collect();
    for i in (1..p.m).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order.truncate(p.n);
    let b: Vec<Vec<f32>> = order
        .iter()
        .map(|&i| {
            let noisy = a[i].iter().map(|&v| v as f64 + p.noise * (rng.random::<f64>() - 0.5) * 3.46).collect();
            unit(noisy)
        })
        .collect();
    let w = MatcherWeights::scaled_identity(p.dim, p.gain, 0.0);
    let r = match_feature_sets(&set(&a, p.dim)?, &set(&b, p.dim)?, &w, p.threshold).map_err(|e| e.to_string())?;
    let mut matches = vec![-1; p.m];
    for m in &r.matches {
        matches[m.i] = m.j as i32;
    }
    let mut truth = vec![-1; p.m];
    for (j, &i) in order.iter().enumerate() {
        truth[i] = j as i32;
    }
    let p_flat = (0..p.m).flat_map(|i| (0..p.n).map(move |j| (i, j))).map(|(i, j)| r.p[(i, j)]).collect();
    Ok(AssignmentDemo { rows: p.m, cols: p.n, p: p_flat, matches, truth })
}
