use super::{Detection, FeatureDetector, FeatureError};
use crate::filters::sobel;
use crate::image::GrayImage;

/// Dimension of the built-in patch descriptor (8x8 samples).
pub const PATCH_DESCRIPTOR_DIM: usize = 64;
const PATCH_SIDE: usize = 8;

/// Minimum-eigenvalue corner detector with 8x8 normalized patch descriptors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinDetector {
    /// Scores at or below this are treated as flat.
    pub min_response: f32,
    /// Greedy suppression radius in pixels.
    pub nms_radius: f32,
    /// Refine positions with a 1-D parabola through the score peak.
    pub subpixel: bool,
}

impl Default for BuiltinDetector {
    fn default() -> Self {
        Self { min_response: 1.0, nms_radius: 3.0, subpixel: true }
    }
}

impl FeatureDetector for BuiltinDetector {
    fn descriptor_dim(&self) -> usize {
        PATCH_DESCRIPTOR_DIM
    }

    fn detect(&self, img: &GrayImage, max_points: usize) -> Result<Vec<Detection>, FeatureError> {
        if img.width() < 3 || img.height() < 3 {
            return Err(FeatureError::Detector(format!(
                "image {}x{} is smaller than 3x3",
                img.width(),
                img.height()
            )));
        }
        Ok(detect_with(self, img, max_points))
    }

    fn describe(&self, img: &GrayImage, points: &[Detection]) -> Result<Vec<f32>, FeatureError> {
        Ok(builtin_describe(img, points).descriptors)
    }
}

/// Corner detection with the default [`BuiltinDetector`] settings.
pub fn builtin_detect(img: &GrayImage, max_points: usize) -> Vec<Detection> {
    detect_with(&BuiltinDetector::default(), img, max_points)
}

/// Per-pixel minimum eigenvalue of the 3x3-summed structure tensor of Sobel gradients.
pub(crate) fn corner_scores(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let (gx, gy) = sobel(img);
    let mut xx = vec![0.0f64; w * h];
    let mut xy = vec![0.0f64; w * h];
    let mut yy = vec![0.0f64; w * h];
    for i in 0..w * h {
        let (a, b) = (gx[i] as f64, gy[i] as f64);
        xx[i] = a * a;
        xy[i] = a * b;
        yy[i] = b * b;
    }
    let mut scores = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for j in -1..=1isize {
                let yy_ = (y as isize + j).clamp(0, h as isize - 1) as usize;
                for i in -1..=1isize {
                    let xx_ = (x as isize + i).clamp(0, w as isize - 1) as usize;
                    let k = yy_ * w + xx_;
                    a += xx[k];
                    b += xy[k];
                    c += yy[k];
                }
            }
            let half_trace = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            scores[y * w + x] = (half_trace - disc).max(0.0);
        }
    }
    scores
}

fn detect_with(cfg: &BuiltinDetector, img: &GrayImage, max_points: usize) -> Vec<Detection> {
    if max_points == 0 {
        return Vec::new();
    }
    let (w, h) = (img.width(), img.height());
    let scores = corner_scores(img);
    let floor = cfg.min_response as f64;

    // Only 3x3 local maxima enter the greedy pass.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let s = scores[y * w + x];
            if s <= floor {
                continue;
            }
            let mut is_max = true;
            'nb: for j in -1..=1isize {
                for i in -1..=1isize {
                    let (nx, ny) = (x as isize + i, y as isize + j);
                    if (i == 0 && j == 0) || nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    if scores[ny as usize * w + nx as usize] > s {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                candidates.push((s, y, x));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let r = cfg.nms_radius.max(0.0) as f64;
    let reach = r.floor() as isize;
    let mut blocked = vec![false; w * h];
    let mut out = Vec::new();
    for (s, y, x) in candidates {
        if blocked[y * w + x] {
            continue;
        }
        for j in -reach..=reach {
            for i in -reach..=reach {
                let (nx, ny) = (x as isize + i, y as isize + j);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                if ((i * i + j * j) as f64) <= r * r {
                    blocked[ny as usize * w + nx as usize] = true;
                }
            }
        }
        let (mut fx, mut fy) = (x as f64, y as f64);
        if cfg.subpixel {
            let at = |xx: isize, yy: isize| {
                scores[yy.clamp(0, h as isize - 1) as usize * w + xx.clamp(0, w as isize - 1) as usize]
            };
            let (xi, yi) = (x as isize, y as isize);
            fx += parabola_offset(at(xi - 1, yi), s, at(xi + 1, yi));
            fy += parabola_offset(at(xi, yi - 1), s, at(xi, yi + 1));
            fx = fx.clamp(0.0, (w - 1) as f64);
            fy = fy.clamp(0.0, (h - 1) as f64);
        }
        out.push(Detection { x: fx as f32, y: fy as f32, response: s as f32 });
        if out.len() == max_points {
            break;
        }
    }
    out
}

fn parabola_offset(left: f64, centre: f64, right: f64) -> f64 {
    let denom = left - 2.0 * centre + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Descriptor rows plus a flag per row for zero-variance patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDescriptors {
    pub descriptors: Vec<f32>,
    pub degenerate: Vec<bool>,
}

/// 8x8 bilinear patch centred on each point, mean-subtracted and
/// L2-normalized. Samples outside the image read as zero. Flat patches map to
/// the first basis vector and are flagged degenerate.
pub fn builtin_describe(img: &GrayImage, points: &[Detection]) -> PatchDescriptors {
    let mut descriptors = Vec::with_capacity(points.len() * PATCH_DESCRIPTOR_DIM);
    let mut degenerate = Vec::with_capacity(points.len());
    let (w, h) = (img.width() as f64, img.height() as f64);
    let half = PATCH_SIDE as f64 / 2.0 - 0.5;
    let mut patch = [0.0f64; PATCH_DESCRIPTOR_DIM];
    for p in points {
        for j in 0..PATCH_SIDE {
            for i in 0..PATCH_SIDE {
                let sx = p.x as f64 + i as f64 - half;
                let sy = p.y as f64 + j as f64 - half;
                patch[j * PATCH_SIDE + i] = sample_zero_padded(img, sx, sy, w, h);
            }
        }
        let mean = patch.iter().sum::<f64>() / PATCH_DESCRIPTOR_DIM as f64;
        patch.iter_mut().for_each(|v| *v -= mean);
        let norm = patch.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            descriptors.push(1.0);
            descriptors.extend(std::iter::repeat_n(0.0, PATCH_DESCRIPTOR_DIM - 1));
            degenerate.push(true);
        } else {
            descriptors.extend(patch.iter().map(|v| (v / norm) as f32));
            degenerate.push(false);
        }
    }
    PatchDescriptors { descriptors, degenerate }
}

fn sample_zero_padded(img: &GrayImage, x: f64, y: f64, w: f64, h: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let px = |xx: f64, yy: f64| -> f64 {
        if xx < 0.0 || yy < 0.0 || xx >= w || yy >= h {
            0.0
        } else {
            img.get(xx as usize, yy as usize) as f64
        }
    };
    let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1.0, y0) * fx;
    let bottom = px(x0, y0 + 1.0) * (1.0 - fx) + px(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}
