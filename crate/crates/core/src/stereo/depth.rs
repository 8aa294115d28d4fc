use crate::features::Keypoint;
use crate::geometry::StereoRig;

/// Integer disparity per pixel, `None` where no valid correspondence exists.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<Option<u16>>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, values: Vec<Option<u16>>) -> Self {
        assert_eq!(values.len(), width * height);
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[Option<u16>] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> Option<u16> {
        self.values[y * self.width + x]
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|v| v.is_some()).count() as f64 / self.values.len() as f64
    }
}

/// Metric depth per pixel, `None` for invalid or zero disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<Option<f32>>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<Option<f32>>) -> Self {
        assert_eq!(values.len(), width * height);
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[Option<f32>] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        self.values[y * self.width + x]
    }
}

/// `z = f_x · B / d`; zero disparity means a point at infinity and is invalid.
pub fn disparity_to_depth(disparity: &DisparityMap, rig: &StereoRig) -> DepthMap {
    let fb = rig.intrinsics.fx * rig.baseline;
    let values = disparity
        .values
        .iter()
        .map(|d| match d {
            Some(d) if *d > 0 => Some((fb / *d as f64) as f32),
            _ => None,
        })
        .collect();
    DepthMap::new(disparity.width, disparity.height, values)
}

/// Bilinear depth at each keypoint. Neighbours with zero weight are ignored;
/// a single invalid neighbour is dropped and the rest renormalised, two or
/// more make the keypoint depth invalid.
pub fn keypoint_depths(keypoints: &[Keypoint], depth: &DepthMap) -> Vec<Option<f64>> {
    keypoints.iter().map(|kp| depth_at(depth, kp.x as f64, kp.y as f64)).collect()
}

pub(crate) fn depth_at(depth: &DepthMap, x: f64, y: f64) -> Option<f64> {
    if !(x >= 0.0 && y >= 0.0 && x <= (depth.width - 1) as f64 && y <= (depth.height - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(depth.width - 1);
    let y0 = (y.floor() as usize).min(depth.height - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut acc = 0.0;
    let mut weight = 0.0;
    let mut invalid = 0;
    for (dx, dy, w) in [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)] {
        if w == 0.0 {
            continue;
        }
        match depth.get(x0 + dx, y0 + dy) {
            Some(z) if z > 0.0 && z.is_finite() => {
                acc += w * z as f64;
                weight += w;
            }
            _ => invalid += 1,
        }
    }
    if invalid >= 2 || weight <= 0.0 {
        None
    } else {
        Some(acc / weight)
    }
}
