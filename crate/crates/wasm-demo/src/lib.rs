//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every exported function is a thin wrapper over a plain Rust function of
//! the same name in [`ops`], so the logic is testable natively.

use wasm_bindgen::prelude::*;

pub mod ops;

/// Width of the frames produced by [`orbit_frame`].
#[wasm_bindgen]
pub fn frame_width() -> u32 {
    ops::FRAME_WIDTH as u32
}

#[wasm_bindgen]
pub fn frame_height() -> u32 {
    ops::FRAME_HEIGHT as u32
}

/// 8-bit gray frame of the synthetic stereo orbit.
#[wasm_bindgen]
pub fn orbit_frame(frame: u32, right: bool) -> Vec<u8> {
    ops::orbit_frame(frame as usize, right)
}

/// Multi-scale detection on an 8-bit gray image. Returns
/// `[x, y, level, response]` per keypoint, base-image coordinates.
#[wasm_bindgen]
pub fn detect(
    width: u32,
    height: u32,
    gray: &[u8],
    levels: u32,
    scale_factor: f64,
    total_features: u32,
    nms_radius: f64,
) -> Result<Vec<f32>, JsError> {
    let cfg = ops::DetectParams { levels: levels as usize, scale_factor, total_features: total_features as usize, nms_radius };
    ops::detect(width as usize, height as usize, gray, &cfg).map_err(|e| JsError::new(&e))
}

/// Per-pixel integer disparity, `-1` where invalid.
#[wasm_bindgen]
pub fn disparity(
    width: u32,
    height: u32,
    left: &[u8],
    right: &[u8],
    d_max: u32,
    window_radius: u32,
    directions: u32,
) -> Result<Vec<i16>, JsError> {
    let p = ops::SgmParams { d_max: d_max as usize, window_radius: window_radius as usize, directions: directions as usize };
    ops::disparity(width as usize, height as usize, left, right, &p).map_err(|e| JsError::new(&e))
}

/// Assignment between `m` random descriptors and a noisy shuffled subset
/// of `n` of them.
#[wasm_bindgen]
pub struct Assignment {
    inner: ops::AssignmentDemo,
}

#[wasm_bindgen]
impl Assignment {
    #[wasm_bindgen(constructor)]
    pub fn new(m: u32, n: u32, dim: u32, noise: f64, gain: f64, threshold: f64, seed: u64) -> Result<Assignment, JsError> {
        let params = ops::AssignmentParams { m: m as usize, n: n as usize, dim: dim as usize, noise, gain, threshold, seed };
        ops::assignment(&params).map(|inner| Assignment { inner }).map_err(|e| JsError::new(&e))
    }

    pub fn rows(&self) -> u32 {
        self.inner.rows as u32
    }

    pub fn cols(&self) -> u32 {
        self.inner.cols as u32
    }

    /// Row-major `rows × cols` assignment probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        self.inner.p.clone()
    }

    /// Matched column per row, `-1` when unmatched.
    pub fn matches(&self) -> Vec<i32> {
        self.inner.matches.clone()
    }

    /// True column per row, `-1` for rows without a counterpart.
    pub fn truth(&self) -> Vec<i32> {
        self.inner.truth.clone()
    }
}
