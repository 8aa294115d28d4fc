//! Procedural test scenes: an orbiting stereo rig around a cloud of
//! textured sprites, random-dot stereograms and a slanted textured plane.
//! Everything is seeded and reproducible.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::Trajectory;
use crate::features::{FeatureSet, Keypoint};
use crate::geometry::{project, CameraIntrinsics, PoseSE3, StereoRig};
use crate::filters::gaussian_blur;
use crate::image::GrayImage;
use crate::stereo::DepthMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitConfig {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Metres; the right camera sits at +baseline along the left camera's x axis.
    pub baseline: f64,
    pub orbit_radius: f64,
    pub cloud_radius: f64,
    pub points: usize,
    pub frames: usize,
    /// Total orbit angle in radians.
    pub sweep: f64,
    /// Vertical oscillation amplitude of the camera centre, metres.
    pub bob: f64,
    pub frame_rate: f64,
    /// Sprite edge length in metres.
    pub sprite_size: f64,
    pub sprite_texels: usize,
    /// Width in texels of a background-coloured frame around each sprite,
    /// so the textured core's corners sit on the sprite's own surface.
    pub sprite_border: usize,
    pub background: f32,
    /// Gaussian point-spread applied to rendered images, pixels.
    pub blur_sigma: f64,
    pub descriptor_dim: usize,
    pub seed: u64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            fx: 260.0,
            fy: 260.0,
            cx: 159.5,
            cy: 119.5,
            baseline: 0.8,
            orbit_radius: 6.0,
            cloud_radius: 3.0,
            points: 500,
            frames: 100,
            sweep: 1.0,
            bob: 0.3,
            frame_rate: 10.0,
            sprite_size: 0.12,
            sprite_texels: 5,
            sprite_border: 0,
            background: 128.0,
            blur_sigma: 0.0,
            descriptor_dim: 256,
            seed: 7,
        }
    }
}

impl OrbitConfig {
    /// 1241×376 frames with KITTI-like intrinsics and baseline.
    pub fn kitti_sized() -> Self {
        Self {
            width: 1241,
            height: 376,
            fx: 718.856,
            fy: 718.856,
            cx: 607.1928,
            cy: 185.2157,
            baseline: 0.54,
            cloud_radius: 2.0,
            points: 3000,
            sprite_size: 0.06,
            ..Self::default()
        }
    }
}

/// Orbiting stereo sequence. The world frame is the left camera of frame 0.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    cfg: OrbitConfig,
    points: Vec<Vector3<f64>>,
    textures: Vec<Vec<f32>>,
    descriptors: Vec<Vec<f32>>,
    poses: Vec<PoseSE3>,
}

fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> PoseSE3 {
    let f = (target - eye).normalize();
    let up = Vector3::new(0.0, -1.0, 0.0);
    let r = f.cross(&up).normalize();
    let d = f.cross(&r);
    PoseSE3::new(Matrix3::from_columns(&[r, d, f]), eye).expect("orthonormal frame")
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            let mut out: Vec<f32> = v.iter().map(|x| (x / n) as f32).collect();
            // Renormalise in f32 so the stored norm is as close to 1 as possible.
            let n32 = out.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            out.iter_mut().for_each(|x| *x = (*x as f64 / n32) as f32);
            return out;
        }
    }
}

impl SyntheticScene {
    pub fn generate(cfg: OrbitConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut orbit_points = Vec::with_capacity(cfg.points);
        while orbit_points.len() < cfg.points {
            let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if p.norm_squared() <= 1.0 {
                orbit_points.push(p * cfg.cloud_radius);
            }
        }
        let texels = cfg.sprite_texels * cfg.sprite_texels;
        let n = cfg.sprite_texels;
        let inner = |t: usize| (cfg.sprite_border..n.saturating_sub(cfg.sprite_border)).contains(&t);
        let textures = (0..cfg.points)
            .map(|_| {
                (0..texels)
                    .map(|t| {
                        let v = rng.random_range(0.0f32..255.0);
                        if inner(t % n) && inner(t / n) { v } else { cfg.background }
                    })
                    .collect()
            })
            .collect();
        let descriptors = (0..cfg.points).map(|_| random_unit(&mut rng, cfg.descriptor_dim)).collect();
        let orbit_poses: Vec<PoseSE3> = (0..cfg.frames)
            .map(|i| {
                let s = if cfg.frames > 1 { i as f64 / (cfg.frames - 1) as f64 } else { 0.0 };
                let theta = cfg.sweep * (s - 0.5);
                let eye = Vector3::new(
                    cfg.orbit_radius * theta.sin(),
                    cfg.bob * (2.0 * std::f64::consts::PI * s).sin(),
                    -cfg.orbit_radius * theta.cos(),
                );
                look_at(eye, Vector3::zeros())
            })
            .collect();
        let to_world = orbit_poses[0].inverse();
        let points = orbit_points.iter().map(|p| to_world.transform_point(p)).collect();
        let poses = orbit_poses.iter().map(|p| to_world.compose(p).renormalized()).collect();
        Self { cfg, points, textures, descriptors, poses }
    }

    pub fn config(&self) -> &OrbitConfig {
        &self.cfg
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::new(self.cfg.fx, self.cfg.fy, self.cfg.cx, self.cfg.cy).expect("valid intrinsics")
    }

    pub fn rig(&self) -> StereoRig {
        StereoRig::new(self.intrinsics(), self.cfg.baseline).expect("valid rig")
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// World-from-left-camera poses; frame 0 is the identity.
    pub fn poses(&self) -> &[PoseSE3] {
        &self.poses
    }

    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.cfg.frame_rate
    }

    pub fn ground_truth(&self) -> Trajectory {
        Trajectory::new(self.poses.iter().enumerate().map(|(i, p)| (self.timestamp(i), p.clone())).collect())
            .expect("increasing timestamps")
    }

    fn camera_from_world(&self, frame: usize, right: bool) -> PoseSE3 {
        let t_cw = self.poses[frame].inverse();
        if right {
            PoseSE3::from_axis_angle(Vector3::zeros(), Vector3::new(-self.cfg.baseline, 0.0, 0.0)).compose(&t_cw)
        } else {
            t_cw
        }
    }

    /// Sprites drawn far to near; each texel is area-sampled into the pixel grid.
    pub fn render(&self, frame: usize, right: bool) -> GrayImage {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut img = GrayImage::filled(w, h, self.cfg.background);
        let k = self.intrinsics();
        let t_cw = self.camera_from_world(frame, right);
        let mut visible: Vec<(f64, usize, f64, f64)> = self
            .points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let pc = t_cw.transform_point(p);
                project(&pc, &k).ok().map(|uv| (pc.z, i, uv.x, uv.y))
            })
            .collect();
        visible.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let n = self.cfg.sprite_texels;
        for (z, i, u, v) in visible {
            let ax = self.cfg.sprite_size * k.fx / z / n as f64;
            let ay = self.cfg.sprite_size * k.fy / z / n as f64;
            let (x0, y0) = (u - 0.5 * ax * n as f64, v - 0.5 * ay * n as f64);
            let (x1, y1) = (x0 + ax * n as f64, y0 + ay * n as f64);
            let px0 = ((x0 + 0.5).floor().max(0.0)) as isize;
            let py0 = ((y0 + 0.5).floor().max(0.0)) as isize;
            let px1 = ((x1 + 0.5).ceil() as isize).min(w as isize - 1);
            let py1 = ((y1 + 0.5).ceil() as isize).min(h as isize - 1);
            let tex = &self.textures[i];
            for py in py0..=py1 {
                for px in px0..=px1 {
                    let (lx, hx) = (px as f64 - 0.5, px as f64 + 0.5);
                    let (ly, hy) = (py as f64 - 0.5, py as f64 + 0.5);
                    let mut cover = 0.0;
                    let mut acc = 0.0;
                    for ty in 0..n {
                        let oy = (hy.min(y0 + (ty + 1) as f64 * ay) - ly.max(y0 + ty as f64 * ay)).max(0.0);
                        if oy == 0.0 {
                            continue;
                        }
                        for tx in 0..n {
                            let ox = (hx.min(x0 + (tx + 1) as f64 * ax) - lx.max(x0 + tx as f64 * ax)).max(0.0);
                            let a = ox * oy;
                            cover += a;
                            acc += a * tex[ty * n + tx] as f64;
                        }
                    }
                    if cover > 0.0 {
                        let (x, y) = (px as usize, py as usize);
                        let old = img.get(x, y) as f64;
                        img.set(x, y, (old * (1.0 - cover) + acc) as f32);
                    }
                }
            }
        }
        gaussian_blur(&img, self.cfg.blur_sigma)
    }

    /// Depth of the front-most sprite covering each pixel centre of the
    /// left (or right) view; background is invalid.
    pub fn render_depth(&self, frame: usize, right: bool) -> DepthMap {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut out: Vec<Option<f32>> = vec![None; w * h];
        let k = self.intrinsics();
        let t_cw = self.camera_from_world(frame, right);
        for p in &self.points {
            let pc = t_cw.transform_point(p);
            let Ok(uv) = project(&pc, &k) else { continue };
            let hx = 0.5 * self.cfg.sprite_size * k.fx / pc.z;
            let hy = 0.5 * self.cfg.sprite_size * k.fy / pc.z;
            let x0 = (uv.x - hx).ceil().max(0.0) as usize;
            let y0 = (uv.y - hy).ceil().max(0.0) as usize;
            let x1 = ((uv.x + hx).floor().min(w as f64 - 1.0)).max(-1.0);
            let y1 = ((uv.y + hy).floor().min(h as f64 - 1.0)).max(-1.0);
            for y in y0 as isize..=y1 as isize {
                for x in x0 as isize..=x1 as isize {
                    let cell = &mut out[y as usize * w + x as usize];
                    if cell.is_none_or(|z| (pc.z as f32) < z) {
                        *cell = Some(pc.z as f32);
                    }
                }
            }
        }
        DepthMap::new(w, h, out)
    }

    pub fn render_stereo(&self, frame: usize) -> (GrayImage, GrayImage) {
        (self.render(frame, false), self.render(frame, true))
    }

    /// Projected sprite centres at least `margin` pixels inside the left
    /// image, with per-point descriptors and exact depths.
    pub fn exact_features(&self, frame: usize, margin: f64) -> (FeatureSet, Vec<Option<f64>>) {
        let k = self.intrinsics();
        let t_cw = self.camera_from_world(frame, false);
        let (mut kps, mut desc, mut depth) = (Vec::new(), Vec::new(), Vec::new());
        for (i, p) in self.points.iter().enumerate() {
            let pc = t_cw.transform_point(p);
            let Ok(uv) = project(&pc, &k) else { continue };
            if uv.x < margin || uv.y < margin || uv.x > self.cfg.width as f64 - 1.0 - margin || uv.y > self.cfg.height as f64 - 1.0 - margin {
                continue;
            }
            kps.push(Keypoint { x: uv.x as f32, y: uv.y as f32, level: 0, response: 1.0 });
            desc.extend_from_slice(&self.descriptors[i]);
            depth.push(Some(pc.z));
        }
        let set = FeatureSet::new(kps, desc, self.cfg.descriptor_dim).expect("unit descriptors");
        (set, depth)
    }
}

/// Random-dot pair where right(x) = left(x + shift), so every left pixel
/// has disparity `shift` under the `x − d` convention.
pub fn random_dot_stereogram(width: usize, height: usize, shift: usize, seed: u64) -> (GrayImage, GrayImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wide = width + shift;
    let base: Vec<f32> = (0..wide * height).map(|_| if rng.random_bool(0.5) { 255.0 } else { 0.0 }).collect();
    let left = GrayImage::from_fn(width, height, |x, y| base[y * wide + x]);
    let right = GrayImage::from_fn(width, height, |x, y| base[y * wide + x + shift]);
    (left, right)
}

/// Rectified pair of a textured plane `Z = z0 + slope·X` (left camera
/// frame), 4×4 supersampled. Returns the images and the true depth of every
/// left pixel.
pub fn slanted_plane_pair(rig: &StereoRig, width: usize, height: usize, z0: f64, slope: f64, seed: u64) -> (GrayImage, GrayImage, Vec<f64>) {
    const CELL: f64 = 0.02;
    const GRID: usize = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lattice: Vec<f64> = (0..GRID * GRID).map(|_| rng.random_range(0.0..255.0)).collect();
    let texture = |x: f64, y: f64| {
        let gx = (x / CELL).rem_euclid((GRID - 1) as f64);
        let gy = (y / CELL).rem_euclid((GRID - 1) as f64);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - ix as f64, gy - iy as f64);
        let at = |a: usize, b: usize| lattice[(b % GRID) * GRID + (a % GRID)];
        (1.0 - fy) * ((1.0 - fx) * at(ix, iy) + fx * at(ix + 1, iy)) + fy * ((1.0 - fx) * at(ix, iy + 1) + fx * at(ix + 1, iy + 1))
    };
    let k = rig.intrinsics;
    let hit = |u: f64, v: f64, ox: f64| {
        let (dx, dy) = ((u - k.cx) / k.fx, (v - k.cy) / k.fy);
        let t = (z0 + slope * ox) / (1.0 - slope * dx);
        (ox + t * dx, t * dy, t)
    };
    let render = |ox: f64| {
        GrayImage::from_fn(width, height, |x, y| {
            let mut acc = 0.0;
            for sy in 0..4 {
                for sx in 0..4 {
                    let u = x as f64 - 0.375 + 0.25 * sx as f64;
                    let v = y as f64 - 0.375 + 0.25 * sy as f64;
                    let (px, py, _) = hit(u, v, ox);
                    acc += texture(px, py);
                }
            }
            (acc / 16.0) as f32
        })
    };
    let depth = (0..width * height).map(|i| hit((i % width) as f64, (i / width) as f64, 0.0).2).collect();
    (render(0.0), render(rig.baseline), depth)
}
