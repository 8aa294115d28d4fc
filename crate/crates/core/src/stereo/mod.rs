//! Semi-global stereo: gradient-magnitude features, windowed absolute
//! difference costs, multi-path aggregation, winner-take-all disparity and
//! metric depth.

mod aggregate;
mod cost;
mod depth;
pub mod dump;

pub use aggregate::{aggregate_costs, path_directions, select_disparity};
pub use cost::{gradient_magnitude, matching_cost, max_gradient_magnitude};
pub use depth::{disparity_to_depth, keypoint_depths, DepthMap, DisparityMap};
pub use crate::geometry::backproject;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::StereoRig;
use crate::image::{GrayImage, ImageError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StereoError {
    #[error(transparent)]
    ImageTooSmall(#[from] ImageError),
    #[error("left image is {left:?} but right is {right:?}")]
    SizeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("invalid SGM config: {0}")]
    InvalidConfig(String),
}

/// Which right-image column corresponds to left column `x` at disparity `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DisparitySign {
    /// `x − d`: rectified rig with the right camera displaced along +x.
    #[default]
    Negative,
    /// `x + d`.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgmConfig {
    pub d_min: usize,
    pub d_max: usize,
    /// Half-width n of the (2n+1)² cost window.
    pub window_radius: usize,
    /// Penalty for ±1 disparity changes along a path.
    pub p1: f32,
    /// Penalty for larger disparity changes.
    pub p2: f32,
    /// 4 or 8 aggregation paths.
    pub directions: usize,
    pub disparity_sign: DisparitySign,
}

impl Default for SgmConfig {
    fn default() -> Self {
        let window = 2usize;
        let area = ((2 * window + 1) * (2 * window + 1)) as f32;
        Self {
            d_min: 0,
            d_max: 127,
            window_radius: window,
            p1: 8.0 * area,
            p2: 32.0 * area,
            directions: 8,
            disparity_sign: DisparitySign::Negative,
        }
    }
}

impl SgmConfig {
    /// Default penalties rescaled for a different window radius.
    pub fn with_window(window_radius: usize) -> Self {
        let area = ((2 * window_radius + 1) * (2 * window_radius + 1)) as f32;
        Self { window_radius, p1: 8.0 * area, p2: 32.0 * area, ..Self::default() }
    }

    pub fn disparity_count(&self) -> usize {
        self.d_max - self.d_min + 1
    }

    pub fn validate(&self) -> Result<(), StereoError> {
        if self.d_max < self.d_min + 1 {
            return Err(StereoError::InvalidConfig(format!(
                "d_max ({}) must exceed d_min ({}) by at least 1",
                self.d_max, self.d_min
            )));
        }
        if !(self.p1 > 0.0 && self.p2 >= self.p1 && self.p2.is_finite()) {
            return Err(StereoError::InvalidConfig(format!("need p2 >= p1 > 0 (p1={}, p2={})", self.p1, self.p2)));
        }
        if self.directions != 4 && self.directions != 8 {
            return Err(StereoError::InvalidConfig(format!("directions must be 4 or 8, got {}", self.directions)));
        }
        Ok(())
    }

    /// Cost assigned to disparities whose correspondent falls outside the
    /// right image: one more than the largest possible window cost.
    pub fn out_of_bounds_cost(&self) -> f32 {
        let area = ((2 * self.window_radius + 1) * (2 * self.window_radius + 1)) as f32;
        area * max_gradient_magnitude() + 1.0
    }
}

/// Per-pixel, per-disparity costs laid out `[(y·W + x)·D + (d − d_min)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub width: usize,
    pub height: usize,
    pub d_min: usize,
    pub disparity_count: usize,
    pub costs: Vec<f32>,
    /// Best costs at or above this mark the pixel as having no in-bounds
    /// correspondent. `f32::INFINITY` disables the check.
    pub invalid_floor: f32,
}

impl CostVolume {
    pub fn new(width: usize, height: usize, d_min: usize, disparity_count: usize, costs: Vec<f32>) -> Self {
        assert_eq!(costs.len(), width * height * disparity_count, "cost buffer size");
        Self { width, height, d_min, disparity_count, costs, invalid_floor: f32::INFINITY }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, d_index: usize) -> f32 {
        self.costs[(y * self.width + x) * self.disparity_count + d_index]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let k = (y * self.width + x) * self.disparity_count;
        &self.costs[k..k + self.disparity_count]
    }
}

/// Intermediate and final products of [`compute_depth`].
#[derive(Debug, Clone)]
pub struct StereoOutput {
    pub disparity: DisparityMap,
    pub depth: DepthMap,
}

/// Gradient → cost → aggregation → disparity → depth.
pub fn compute_depth(
    left: &GrayImage,
    right: &GrayImage,
    cfg: &SgmConfig,
    rig: &StereoRig,
) -> Result<StereoOutput, StereoError> {
    cfg.validate()?;
    let gl = gradient_magnitude(left)?;
    let gr = gradient_magnitude(right)?;
    let raw = matching_cost(&gl, &gr, cfg)?;
    let aggregated = aggregate_costs(&raw, cfg);
    drop(raw);
    let disparity = select_disparity(&aggregated, cfg);
    let depth = disparity_to_depth(&disparity, rig);
    Ok(StereoOutput { disparity, depth })
}
