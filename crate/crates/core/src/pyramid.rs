//! Scale pyramid, per-level keypoint budgets and cross-level suppression.
//!
//! Budgets follow the area-proportional allocation
//! `N_α = N (1 − 1/λ) / (1 − (1/λ)ⁿ) · (1/λ)^α`, integerized with
//! largest-remainder rounding so the levels always sum to `N`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureDetector, FeatureError, FeatureSet, Keypoint};
use crate::image::GrayImage;

/// Minimum side length of any pyramid level.
pub const MIN_LEVEL_SIDE: usize = 3;

#[derive(Debug, Error)]
pub enum PyramidError {
    #[error("level {level} would be {width}x{height}, below the 3x3 minimum")]
    ImageTooSmall { level: usize, width: usize, height: usize },
    #[error("invalid pyramid config: {0}")]
    InvalidConfig(String),
    #[error("detector failed on level {level}: {source}")]
    Detector { level: usize, source: FeatureError },
    #[error("level {level} returned {got} points for a budget of {budget}")]
    BudgetExceeded { level: usize, got: usize, budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidConfig {
    /// λ > 1; level α is downsampled by λ^α.
    pub scale_factor: f64,
    pub levels: usize,
    /// Total keypoint budget N across all levels.
    pub total_features: usize,
    /// Cross-level suppression radius l, base-image pixels.
    pub nms_radius: f64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self { scale_factor: 1.2, levels: 8, total_features: 1000, nms_radius: 4.0 }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<(), PyramidError> {
        if !(self.scale_factor > 1.0 && self.scale_factor.is_finite()) {
            return Err(PyramidError::InvalidConfig(format!("scale_factor must be > 1, got {}", self.scale_factor)));
        }
        if self.levels == 0 || self.levels > u8::MAX as usize {
            return Err(PyramidError::InvalidConfig(format!("levels must be in 1..=255, got {}", self.levels)));
        }
        if self.total_features < self.levels {
            return Err(PyramidError::InvalidConfig(format!(
                "total_features ({}) must be at least levels ({})",
                self.total_features, self.levels
            )));
        }
        if !(self.nms_radius >= 0.0) {
            return Err(PyramidError::InvalidConfig(format!("nms_radius must be >= 0, got {}", self.nms_radius)));
        }
        Ok(())
    }
}

/// Levels ordered base first; level 0 is the unmodified input.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<GrayImage>,
    scale_factor: f64,
}

impl ImagePyramid {
    pub fn levels(&self) -> &[GrayImage] {
        &self.levels
    }

    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    /// Multiplier taking level-α coordinates to base coordinates.
    pub fn level_scale(&self, level: usize) -> f64 {
        self.scale_factor.powi(level as i32)
    }
}

/// `(round(W·(1/λ)^α), round(H·(1/λ)^α))`.
pub fn level_dimensions(width: usize, height: usize, scale_factor: f64, level: usize) -> (usize, usize) {
    let s = (1.0 / scale_factor).powi(level as i32);
    ((width as f64 * s).round() as usize, (height as f64 * s).round() as usize)
}

/// Bilinear pyramid. Level-α pixel `(x, y)` samples the base image at
/// `(x·λ^α, y·λ^α)`, which is exactly the mapping used to lift detections.
pub fn build_pyramid(img: &GrayImage, cfg: &PyramidConfig) -> Result<ImagePyramid, PyramidError> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    for level in 0..cfg.levels {
        let (lw, lh) = level_dimensions(w, h, cfg.scale_factor, level);
        if lw < MIN_LEVEL_SIDE || lh < MIN_LEVEL_SIDE {
            return Err(PyramidError::ImageTooSmall { level, width: lw, height: lh });
        }
    }
    let levels = (0..cfg.levels)
        .into_par_iter()
        .map(|level| {
            if level == 0 {
                return img.clone();
            }
            let (lw, lh) = level_dimensions(w, h, cfg.scale_factor, level);
            let s = cfg.scale_factor.powi(level as i32);
            GrayImage::from_fn(lw, lh, |x, y| img.sample_bilinear(x as f64 * s, y as f64 * s))
        })
        .collect();
    Ok(ImagePyramid { levels, scale_factor: cfg.scale_factor })
}

/// Total "area" `S = W·H·(1 − (1/λ)ⁿ)/(1 − 1/λ)`, the closed form of
/// `Σ_{k<n} W·H·(1/λ)^k`.
pub fn pyramid_area(width: f64, height: f64, scale_factor: f64, levels: usize) -> f64 {
    let inv = 1.0 / scale_factor;
    width * height * (1.0 - inv.powi(levels as i32)) / (1.0 - inv)
}

/// Real-valued per-level budgets before rounding.
pub fn level_budgets_real(cfg: &PyramidConfig) -> Vec<f64> {
    let inv = 1.0 / cfg.scale_factor;
    let per_unit = cfg.total_features as f64 * (1.0 - inv) / (1.0 - inv.powi(cfg.levels as i32));
    (0..cfg.levels).map(|a| per_unit * inv.powi(a as i32)).collect()
}

/// Integer budgets summing to exactly `total_features`.
///
/// Each level gets `floor(N_α)`; the leftover units go to the levels with the
/// largest fractional parts, lower levels first on ties.
pub fn level_budgets(cfg: &PyramidConfig) -> Vec<usize> {
    let real = level_budgets_real(cfg);
    let mut budgets: Vec<usize> = real.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = budgets.iter().sum();
    let mut leftover = cfg.total_features.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..real.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = real[a] - real[a].floor();
        let fb = real[b] - real[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    // Floating error could in principle leave more than one unit per level.
    while leftover > 0 {
        for &level in &order {
            if leftover == 0 {
                break;
            }
            budgets[level] += 1;
            leftover -= 1;
        }
    }
    budgets
}

/// Indices of the keypoints kept by [`cross_level_nms`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NmsSelection {
    pub benchmark: Vec<usize>,
    pub candidates: Vec<usize>,
}

/// Total order used to settle collisions: higher response, then lower level,
/// then smaller `(y, x)`.
pub fn outranks(a: &Keypoint, b: &Keypoint) -> bool {
    match a.response.total_cmp(&b.response) {
        std::cmp::Ordering::Greater => return true,
        std::cmp::Ordering::Less => return false,
        std::cmp::Ordering::Equal => {}
    }
    if a.level != b.level {
        return a.level < b.level;
    }
    (a.y, a.x).partial_cmp(&(b.y, b.x)) == Some(std::cmp::Ordering::Less)
}

/// Suppression between benchmark points `P` (base level) and candidates `Q`
/// (higher levels).
///
/// A candidate and a benchmark point collide when their Euclidean distance is
/// at most `radius`. A point survives only if it outranks every point it
/// collides with; points with no collision survive unconditionally. Points
/// within the same set are never compared.
pub fn cross_level_nms(benchmark: &[Keypoint], candidates: &[Keypoint], radius: f64) -> NmsSelection {
    let r2 = radius * radius;
    let grid = PointGrid::new(benchmark, radius.max(1.0));
    let mut benchmark_alive = vec![true; benchmark.len()];
    let mut kept_candidates = Vec::new();
    for (qi, q) in candidates.iter().enumerate() {
        let mut q_alive = true;
        grid.for_each_near(q.x as f64, q.y as f64, |pi| {
            let p = &benchmark[pi];
            let dx = p.x as f64 - q.x as f64;
            let dy = p.y as f64 - q.y as f64;
            if dx * dx + dy * dy <= r2 {
                if outranks(q, p) {
                    benchmark_alive[pi] = false;
                } else {
                    q_alive = false;
                }
            }
        });
        if q_alive {
            kept_candidates.push(qi);
        }
    }
    NmsSelection {
        benchmark: (0..benchmark.len()).filter(|&i| benchmark_alive[i]).collect(),
        candidates: kept_candidates,
    }
}

struct PointGrid {
    cell: f64,
    cols: i64,
    rows: i64,
    min_x: f64,
    min_y: f64,
    buckets: Vec<Vec<usize>>,
}

impl PointGrid {
    fn new(points: &[Keypoint], cell: f64) -> Self {
        let min_x = points.iter().map(|p| p.x as f64).fold(f64::INFINITY, f64::min);
        let min_y = points.iter().map(|p| p.y as f64).fold(f64::INFINITY, f64::min);
        let max_x = points.iter().map(|p| p.x as f64).fold(f64::NEG_INFINITY, f64::max);
        let max_y = points.iter().map(|p| p.y as f64).fold(f64::NEG_INFINITY, f64::max);
        if points.is_empty() {
            return Self { cell, cols: 0, rows: 0, min_x: 0.0, min_y: 0.0, buckets: Vec::new() };
        }
        let cols = ((max_x - min_x) / cell).floor() as i64 + 1;
        let rows = ((max_y - min_y) / cell).floor() as i64 + 1;
        let mut buckets = vec![Vec::new(); (cols * rows) as usize];
        for (i, p) in points.iter().enumerate() {
            let cx = ((p.x as f64 - min_x) / cell).floor() as i64;
            let cy = ((p.y as f64 - min_y) / cell).floor() as i64;
            buckets[(cy * cols + cx) as usize].push(i);
        }
        Self { cell, cols, rows, min_x, min_y, buckets }
    }

    fn for_each_near(&self, x: f64, y: f64, mut f: impl FnMut(usize)) {
        if self.buckets.is_empty() {
            return;
        }
        let cx = ((x - self.min_x) / self.cell).floor() as i64;
        let cy = ((y - self.min_y) / self.cell).floor() as i64;
        for gy in (cy - 1).max(0)..=(cy + 1).min(self.rows - 1) {
            for gx in (cx - 1).max(0)..=(cx + 1).min(self.cols - 1) {
                for &i in &self.buckets[(gy * self.cols + gx) as usize] {
                    f(i);
                }
            }
        }
    }
}

struct LevelOutput {
    keypoints: Vec<Keypoint>,
    descriptors: Vec<f32>,
}

fn detect_level(
    pyr: &ImagePyramid,
    level: usize,
    budget: usize,
    detector: &dyn FeatureDetector,
) -> Result<LevelOutput, PyramidError> {
    let img = &pyr.levels[level];
    let dim = detector.descriptor_dim();
    let detections = detector.detect(img, budget).map_err(|source| PyramidError::Detector { level, source })?;
    if detections.len() > budget {
        return Err(PyramidError::BudgetExceeded { level, got: detections.len(), budget });
    }
    let descriptors =
        detector.describe(img, &detections).map_err(|source| PyramidError::Detector { level, source })?;
    if descriptors.len() != detections.len() * dim {
        return Err(PyramidError::Detector {
            level,
            source: FeatureError::CountMismatch { keypoints: detections.len(), rows: descriptors.len() / dim.max(1) },
        });
    }
    let scale = pyr.level_scale(level);
    let base = &pyr.levels[0];
    let max_x = (base.width() as f64 - 1e-3).max(0.0);
    let max_y = (base.height() as f64 - 1e-3).max(0.0);
    let mut order: Vec<usize> = (0..detections.len()).collect();
    let lifted: Vec<Keypoint> = detections
        .iter()
        .map(|d| Keypoint {
            x: (d.x as f64 * scale).clamp(0.0, max_x) as f32,
            y: (d.y as f64 * scale).clamp(0.0, max_y) as f32,
            level: level as u8,
            response: d.response.max(0.0),
        })
        .collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&lifted[a], &lifted[b]);
        q.response.total_cmp(&p.response).then(p.y.total_cmp(&q.y)).then(p.x.total_cmp(&q.x))
    });
    let mut keypoints = Vec::with_capacity(order.len());
    let mut sorted_desc = Vec::with_capacity(descriptors.len());
    for i in order {
        keypoints.push(lifted[i]);
        sorted_desc.extend_from_slice(&descriptors[i * dim..(i + 1) * dim]);
    }
    Ok(LevelOutput { keypoints, descriptors: sorted_desc })
}

fn merge_levels(
    levels: Vec<LevelOutput>,
    cfg: &PyramidConfig,
    dim: usize,
) -> Result<FeatureSet, PyramidError> {
    let mut levels = levels.into_iter();
    let base = levels.next().unwrap_or(LevelOutput { keypoints: Vec::new(), descriptors: Vec::new() });
    let mut cand_kp = Vec::new();
    let mut cand_desc = Vec::new();
    for lvl in levels {
        cand_kp.extend(lvl.keypoints);
        cand_desc.extend(lvl.descriptors);
    }
    let keep = cross_level_nms(&base.keypoints, &cand_kp, cfg.nms_radius);
    let mut keypoints = Vec::with_capacity(keep.benchmark.len() + keep.candidates.len());
    let mut descriptors = Vec::with_capacity(keypoints.capacity() * dim);
    for &i in &keep.benchmark {
        keypoints.push(base.keypoints[i]);
        descriptors.extend_from_slice(&base.descriptors[i * dim..(i + 1) * dim]);
    }
    for &i in &keep.candidates {
        keypoints.push(cand_kp[i]);
        descriptors.extend_from_slice(&cand_desc[i * dim..(i + 1) * dim]);
    }
    FeatureSet::new(keypoints, descriptors, dim).map_err(|source| PyramidError::Detector { level: 0, source })
}

/// Runs `detector` on every level in parallel on the current rayon pool,
/// lifts detections to base coordinates and applies [`cross_level_nms`]
/// with level 0 as the benchmark set.
///
/// Output is ordered by level, then response (descending), then `(y, x)`, and
/// is identical for any pool size.
pub fn detect_multiscale(
    pyr: &ImagePyramid,
    cfg: &PyramidConfig,
    detector: &dyn FeatureDetector,
) -> Result<FeatureSet, PyramidError> {
    cfg.validate()?;
    let budgets = level_budgets(cfg);
    let levels = (0..pyr.levels.len())
        .into_par_iter()
        .map(|level| detect_level(pyr, level, budgets.get(level).copied().unwrap_or(0), detector))
        .collect::<Result<Vec<_>, _>>()?;
    merge_levels(levels, cfg, detector.descriptor_dim())
}

/// Single-threaded reference for [`detect_multiscale`].
pub fn detect_multiscale_serial(
    pyr: &ImagePyramid,
    cfg: &PyramidConfig,
    detector: &dyn FeatureDetector,
) -> Result<FeatureSet, PyramidError> {
    cfg.validate()?;
    let budgets = level_budgets(cfg);
    let levels = (0..pyr.levels.len())
        .map(|level| detect_level(pyr, level, budgets.get(level).copied().unwrap_or(0), detector))
        .collect::<Result<Vec<_>, _>>()?;
    merge_levels(levels, cfg, detector.descriptor_dim())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{BuiltinDetector, Detection};
    use crate::parallel::WorkerPool;
    use proptest::prelude::*;

    fn kp(x: f32, y: f32, level: u8, response: f32) -> Keypoint {
        Keypoint { x, y, level, response }
    }

    #[test]
    fn single_level_is_input() {
        let img = GrayImage::from_fn(640, 480, |x, y| ((x ^ y) & 255) as f32);
        let cfg = PyramidConfig { levels: 1, ..Default::default() };
        let pyr = build_pyramid(&img, &cfg).unwrap();
        assert_eq!(pyr.levels().len(), 1);
        assert_eq!(pyr.levels()[0], img);
    }

    #[test]
    fn eight_level_top_dimensions() {
        // (1/1.2)^7 = 5^7 / 6^7 = 78125 / 279936 exactly.
        let exact = 78125.0 / 279936.0;
        assert_eq!(((640.0 * exact) as f64).round(), 179.0);
        assert_eq!(((480.0 * exact) as f64).round(), 134.0);
        let img = GrayImage::filled(640, 480, 10.0);
        let pyr = build_pyramid(&img, &PyramidConfig::default()).unwrap();
        let top = pyr.levels().last().unwrap();
        assert_eq!((top.width(), top.height()), (179, 134));
        for pair in pyr.levels().windows(2) {
            assert!(pair[1].width() < pair[0].width() && pair[1].height() < pair[0].height());
        }
    }

    #[test]
    fn too_small_top_level() {
        let img = GrayImage::filled(4, 4, 0.0);
        let cfg = PyramidConfig { scale_factor: 2.0, levels: 2, total_features: 10, nms_radius: 4.0 };
        assert!(matches!(build_pyramid(&img, &cfg), Err(PyramidError::ImageTooSmall { level: 1, width: 2, height: 2 })));
    }

    #[test]
    fn area_examples() {
        assert_eq!(pyramid_area(640.0, 480.0, 1.2, 1), 307200.0);
        let direct: f64 = (0..8).map(|k| 307200.0 * (1.0f64 / 1.2).powi(k)).sum();
        let closed = pyramid_area(640.0, 480.0, 1.2, 8);
        assert!((closed - direct).abs() / direct < 1e-12);
    }

    #[test]
    fn budget_examples() {
        let cfg = PyramidConfig { total_features: 1000, ..Default::default() };
        // Exact rational: 1000·(1/6)/(1 − (5/6)^8) = 1000·6^7/(6^8 − 5^8) = 279936000/1288991.
        let level0 = 279_936_000.0 / 1_288_991.0;
        assert!((level_budgets_real(&cfg)[0] - level0).abs() < 1e-9);
        let b = level_budgets(&cfg);
        assert_eq!(b[0], 217);
        assert_eq!(b.iter().sum::<usize>(), 1000);
        assert_eq!(level_budgets(&PyramidConfig { levels: 1, ..cfg }), vec![1000]);
    }

    #[test]
    fn nms_examples() {
        let p = [kp(10.0, 10.0, 0, 5.0)];
        let sel = cross_level_nms(&p, &[kp(11.0, 10.0, 1, 3.0)], 2.0);
        assert_eq!(sel, NmsSelection { benchmark: vec![0], candidates: vec![] });

        let sel = cross_level_nms(&p, &[kp(50.0, 50.0, 1, 1.0)], 2.0);
        assert_eq!(sel, NmsSelection { benchmark: vec![0], candidates: vec![0] });

        let sel = cross_level_nms(&[kp(10.0, 10.0, 0, 3.0)], &[kp(11.0, 10.0, 1, 9.0)], 2.0);
        assert_eq!(sel, NmsSelection { benchmark: vec![], candidates: vec![0] });
    }

    #[test]
    fn nms_boundary_distance_collides() {
        let sel = cross_level_nms(&[kp(0.0, 0.0, 0, 5.0)], &[kp(2.0, 0.0, 1, 1.0)], 2.0);
        assert!(sel.candidates.is_empty());
    }

    #[test]
    fn nms_equal_response_prefers_lower_level() {
        let sel = cross_level_nms(&[kp(0.0, 0.0, 0, 5.0)], &[kp(1.0, 0.0, 2, 5.0)], 2.0);
        assert_eq!(sel, NmsSelection { benchmark: vec![0], candidates: vec![] });
    }

    /// Detector that fires at fixed base-image positions on every level.
    struct Scripted {
        base_points: Vec<(f64, f64, Vec<f32>)>,
        scale: f64,
    }

    impl FeatureDetector for Scripted {
        fn descriptor_dim(&self) -> usize {
            64
        }
        fn detect(&self, img: &GrayImage, max_points: usize) -> Result<Vec<Detection>, FeatureError> {
            let level = ((640.0 / img.width() as f64).ln() / self.scale.ln()).round() as i32;
            let s = self.scale.powi(level);
            Ok(self
                .base_points
                .iter()
                .map(|(x, y, r)| Detection { x: (x / s) as f32, y: (y / s) as f32, response: r[level as usize] })
                .take(max_points)
                .collect())
        }
        fn describe(&self, _img: &GrayImage, points: &[Detection]) -> Result<Vec<f32>, FeatureError> {
            let mut out = vec![0.0; points.len() * 64];
            for i in 0..points.len() {
                out[i * 64] = 1.0;
            }
            Ok(out)
        }
    }

    #[test]
    fn same_corner_on_two_levels_survives_once() {
        let img = GrayImage::filled(640, 480, 0.0);
        let cfg = PyramidConfig { scale_factor: 2.0, levels: 2, total_features: 10, nms_radius: 4.0 };
        let pyr = build_pyramid(&img, &cfg).unwrap();
        let det = Scripted { base_points: vec![(100.0, 60.0, vec![3.0, 7.0])], scale: 2.0 };
        let out = detect_multiscale(&pyr, &cfg, &det).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.keypoints()[0], kp(100.0, 60.0, 1, 7.0));
    }

    #[test]
    fn single_level_passthrough() {
        let img = GrayImage::from_fn(80, 60, |x, y| if (x / 8 + y / 8) % 2 == 0 { 220.0 } else { 20.0 });
        let cfg = PyramidConfig { levels: 1, total_features: 40, ..Default::default() };
        let pyr = build_pyramid(&img, &cfg).unwrap();
        let out = detect_multiscale(&pyr, &cfg, &BuiltinDetector::default()).unwrap();
        let direct = crate::features::builtin_detect(&img, 40);
        assert_eq!(out.len(), direct.len());
        let mut direct_sorted = direct.clone();
        direct_sorted.sort_by(|a, b| b.response.total_cmp(&a.response).then(a.y.total_cmp(&b.y)).then(a.x.total_cmp(&b.x)));
        for (k, d) in out.keypoints().iter().zip(&direct_sorted) {
            assert_eq!((k.x, k.y, k.response, k.level), (d.x, d.y, d.response, 0));
        }
    }

    #[test]
    fn parallel_matches_serial_for_any_pool_size() {
        let img = GrayImage::from_fn(320, 240, |x, y| if (x / 12 + y / 12) % 2 == 0 { 200.0 } else { 40.0 });
        let cfg = PyramidConfig { total_features: 500, ..Default::default() };
        let pyr = build_pyramid(&img, &cfg).unwrap();
        let det = BuiltinDetector::default();
        let reference = detect_multiscale_serial(&pyr, &cfg, &det).unwrap();
        for threads in [1, 2, 3, 8] {
            let out = WorkerPool::new(threads).install(|| detect_multiscale(&pyr, &cfg, &det).unwrap());
            assert_eq!(out, reference, "threads = {threads}");
        }
    }

    proptest! {
        #[test]
        fn budgets_sum_to_total(n_total in 1usize..20000, scale in 1.0001f64..3.0, levels in 1usize..=12) {
            prop_assume!(n_total >= levels);
            let cfg = PyramidConfig { scale_factor: scale, levels, total_features: n_total, nms_radius: 4.0 };
            let b = level_budgets(&cfg);
            prop_assert_eq!(b.iter().sum::<usize>(), n_total);
            for w in b.windows(2) {
                prop_assert!(w[1] <= w[0] + 1);
            }
            let real = level_budgets_real(&cfg);
            for w in real.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }

        #[test]
        fn area_matches_summation(w in 3.0f64..4000.0, h in 3.0f64..4000.0, scale in 1.001f64..3.0, levels in 1usize..=16) {
            let direct: f64 = (0..levels).map(|k| w * h * (1.0 / scale).powi(k as i32)).sum();
            let closed = pyramid_area(w, h, scale, levels);
            prop_assert!((closed - direct).abs() <= 1e-9 * direct);
        }
    }
}
