//! Dataset layouts: KITTI odometry, TUM RGB-D and a plain image folder.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use slamfrontkit::geometry::CameraIntrinsics;
use slamfrontkit::image::GrayImage;
use slamfrontkit::pipeline::FrameInput;
use slamfrontkit::stereo::DepthMap;

use crate::config::{DatasetKind, RunConfig};

/// Default pinhole for TUM sequences without a calib.json (the dataset's
/// published ROS default).
pub const TUM_DEFAULT_INTRINSICS: [f64; 4] = [525.0, 525.0, 319.5, 239.5];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset layout: {0}")]
    Layout(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

fn layout(msg: impl Into<String>) -> DatasetError {
    DatasetError::Layout(msg.into())
}

/// `calib.json` of the image-folder layout (also accepted by TUM).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FolderCalibration {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_factor: Option<f64>,
    #[serde(default = "default_rate")]
    pub frame_rate: f64,
}

fn default_rate() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpec {
    pub timestamp: f64,
    pub left: PathBuf,
    pub right: Option<PathBuf>,
    pub depth: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub intrinsics: CameraIntrinsics,
    pub baseline: Option<f64>,
    pub depth_factor: f64,
    pub frames: Vec<FrameSpec>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn load_frame(&self, index: usize) -> Result<FrameInput, DatasetError> {
        let spec = &self.frames[index];
        let left = read_gray(&spec.left)?;
        let check = |img: &GrayImage, path: &Path| {
            if (img.width(), img.height()) != (left.width(), left.height()) {
                return Err(DatasetError::Image {
                    path: path.to_path_buf(),
                    message: format!("size {}x{} differs from {}x{}", img.width(), img.height(), left.width(), left.height()),
                });
            }
            Ok(())
        };
        if let Some(p) = &spec.right {
            let right = read_gray(p)?;
            check(&right, p)?;
            return Ok(FrameInput::stereo(spec.timestamp, left, right));
        }
        if let Some(p) = &spec.depth {
            let depth = read_depth_png(p, self.depth_factor)?;
            if (depth.width(), depth.height()) != (left.width(), left.height()) {
                return Err(DatasetError::Image { path: p.clone(), message: "depth size differs from image size".into() });
            }
            return Ok(FrameInput::rgbd(spec.timestamp, left, depth));
        }
        Err(layout(format!("frame {index} has no right image or depth")))
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, DatasetError> {
    let mut ds = match cfg.dataset_kind {
        DatasetKind::KittiOdometry => load_kitti(&cfg.dataset_root, &cfg.sequence_id)?,
        DatasetKind::TumRgbd => load_tum(&sub(cfg), cfg.depth_factor, cfg.max_dt)?,
        DatasetKind::ImageFolder => load_folder(&sub(cfg))?,
    };
    if cfg.max_frames > 0 {
        ds.frames.truncate(cfg.max_frames);
    }
    Ok(ds)
}

fn sub(cfg: &RunConfig) -> PathBuf {
    if cfg.sequence_id.is_empty() {
        cfg.dataset_root.clone()
    } else {
        cfg.dataset_root.join(&cfg.sequence_id)
    }
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let entries = std::fs::read_dir(dir).map_err(|e| layout(format!("{}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|e| layout(format!("{}: {e}", path.display())))
}

fn parse_times(path: &Path) -> Result<Vec<f64>, DatasetError> {
    read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.split_whitespace()
                .next()
                .and_then(|t| t.parse::<f64>().ok())
                .filter(|t| t.is_finite())
                .ok_or_else(|| layout(format!("{} line {}: bad timestamp", path.display(), i + 1)))
        })
        .collect()
}

/// Parses `P0:` / `P1:` rows of a KITTI calib.txt into intrinsics and the
/// stereo baseline `−P1[0,3] / P1[0,0]`.
pub fn parse_kitti_calib(text: &str) -> Result<(CameraIntrinsics, f64), DatasetError> {
    let row = |name: &str| -> Result<[f64; 12], DatasetError> {
        let line = text
            .lines()
            .find(|l| l.trim_start().starts_with(&format!("{name}:")))
            .ok_or_else(|| DatasetError::Calibration(format!("missing {name}")))?;
        let vals: Vec<f64> = line
            .split_once(':')
            .map(|x| x.1)
            .unwrap_or("")
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| DatasetError::Calibration(format!("{name}: bad number `{v}`"))))
            .collect::<Result<_, _>>()?;
        vals.try_into().map_err(|v: Vec<f64>| DatasetError::Calibration(format!("{name}: expected 12 values, got {}", v.len())))
    };
    let p0 = row("P0")?;
    let p1 = row("P1")?;
    let k = CameraIntrinsics::new(p0[0], p0[5], p0[2], p0[6]).map_err(|e| DatasetError::Calibration(e.to_string()))?;
    if p1[0] == 0.0 {
        return Err(DatasetError::Calibration("P1[0,0] is zero".into()));
    }
    let baseline = -p1[3] / p1[0];
    if !(baseline > 0.0) {
        return Err(DatasetError::Calibration(format!("non-positive baseline {baseline}")));
    }
    Ok((k, baseline))
}

fn load_kitti(root: &Path, seq: &str) -> Result<Dataset, DatasetError> {
    let dir = root.join("sequences").join(seq);
    if !dir.is_dir() {
        return Err(layout(format!("{} does not exist", dir.display())));
    }
    let (intrinsics, baseline) = parse_kitti_calib(&read_text(&dir.join("calib.txt"))?)?;
    let left = list_pngs(&dir.join("image_0"))?;
    let right = list_pngs(&dir.join("image_1"))?;
    let times = parse_times(&dir.join("times.txt"))?;
    if left.is_empty() {
        return Err(layout(format!("{} has no images", dir.join("image_0").display())));
    }
    if left.len() != right.len() || left.len() != times.len() {
        return Err(layout(format!("{} left, {} right images and {} timestamps", left.len(), right.len(), times.len())));
    }
    for (l, r) in left.iter().zip(&right) {
        if l.file_name() != r.file_name() {
            return Err(layout(format!("unpaired images {} / {}", l.display(), r.display())));
        }
    }
    let frames = left
        .into_iter()
        .zip(right)
        .zip(times)
        .map(|((l, r), t)| FrameSpec { timestamp: t, left: l, right: Some(r), depth: None })
        .collect();
    Ok(Dataset { kind: DatasetKind::KittiOdometry, intrinsics, baseline: Some(baseline), depth_factor: 1.0, frames })
}

fn parse_listing(dir: &Path, name: &str) -> Result<Vec<(f64, PathBuf)>, DatasetError> {
    let path = dir.join(name);
    let mut out = Vec::new();
    for (i, line) in read_text(&path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(t), Some(f)) = (it.next(), it.next()) else {
            return Err(layout(format!("{name} line {}: expected `timestamp filename`", i + 1)));
        };
        let t: f64 = t.parse().map_err(|_| layout(format!("{name} line {}: bad timestamp", i + 1)))?;
        let file = dir.join(f);
        if !file.is_file() {
            return Err(layout(format!("{name} references missing file {}", file.display())));
        }
        out.push((t, file));
    }
    Ok(out)
}

/// One-to-one nearest-timestamp association in time order; pairs further
/// apart than `max_dt` are dropped.
pub fn associate_listings(rgb: &[(f64, PathBuf)], depth: &[(f64, PathBuf)], max_dt: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut next = 0;
    for (i, (t, _)) in rgb.iter().enumerate() {
        let best = (next..depth.len()).min_by(|&a, &b| (depth[a].0 - t).abs().total_cmp(&(depth[b].0 - t).abs()));
        if let Some(j) = best {
            if (depth[j].0 - t).abs() <= max_dt {
                out.push((i, j));
                next = j + 1;
            }
        }
    }
    out
}

fn read_folder_calib(path: &Path) -> Result<FolderCalibration, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Calibration(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Calibration(format!("{}: {e}", path.display())))
}

fn intrinsics_of(c: &FolderCalibration) -> Result<CameraIntrinsics, DatasetError> {
    CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy).map_err(|e| DatasetError::Calibration(e.to_string()))
}

fn load_tum(dir: &Path, depth_factor: f64, max_dt: f64) -> Result<Dataset, DatasetError> {
    if !dir.is_dir() {
        return Err(layout(format!("{} does not exist", dir.display())));
    }
    let rgb = parse_listing(dir, "rgb.txt")?;
    let depth = parse_listing(dir, "depth.txt")?;
    let pairs = associate_listings(&rgb, &depth, max_dt);
    if pairs.is_empty() {
        return Err(layout(format!(
            "0 rgb/depth associations within {max_dt} s ({} rgb, {} depth entries)",
            rgb.len(),
            depth.len()
        )));
    }
    let calib = dir.join("calib.json");
    let (intrinsics, factor) = if calib.is_file() {
        let c = read_folder_calib(&calib)?;
        (intrinsics_of(&c)?, c.depth_factor.unwrap_or(depth_factor))
    } else {
        log::warn!("{} has no calib.json; using default TUM intrinsics", dir.display());
        let [fx, fy, cx, cy] = TUM_DEFAULT_INTRINSICS;
        (CameraIntrinsics::new(fx, fy, cx, cy).expect("valid defaults"), depth_factor)
    };
    let frames = pairs
        .into_iter()
        .map(|(i, j)| FrameSpec { timestamp: rgb[i].0, left: rgb[i].1.clone(), right: None, depth: Some(depth[j].1.clone()) })
        .collect();
    Ok(Dataset { kind: DatasetKind::TumRgbd, intrinsics, baseline: None, depth_factor: factor, frames })
}

fn load_folder(dir: &Path) -> Result<Dataset, DatasetError> {
    let left_dir = dir.join("left");
    if !left_dir.is_dir() {
        return Err(layout(format!("{} does not exist", left_dir.display())));
    }
    let left = list_pngs(&left_dir)?;
    if left.is_empty() {
        return Err(layout(format!("{} has no .png images", left_dir.display())));
    }
    let calib = read_folder_calib(&dir.join("calib.json"))?;
    let intrinsics = intrinsics_of(&calib)?;
    let (right, depth) = (dir.join("right"), dir.join("depth"));
    let (second, is_stereo) = if right.is_dir() {
        if calib.baseline.is_none() {
            return Err(DatasetError::Calibration("stereo folder needs `baseline` in calib.json".into()));
        }
        (list_pngs(&right)?, true)
    } else if depth.is_dir() {
        (list_pngs(&depth)?, false)
    } else {
        return Err(layout(format!("{} has neither right/ nor depth/", dir.display())));
    };
    if second.len() != left.len() {
        return Err(layout(format!("{} left images but {} in {}", left.len(), second.len(), if is_stereo { "right/" } else { "depth/" })));
    }
    let times_path = dir.join("times.txt");
    let times = if times_path.is_file() {
        let t = parse_times(&times_path)?;
        if t.len() != left.len() {
            return Err(layout(format!("{} timestamps for {} images", t.len(), left.len())));
        }
        t
    } else {
        (0..left.len()).map(|i| i as f64 / calib.frame_rate).collect()
    };
    let frames = left
        .into_iter()
        .zip(second)
        .zip(times)
        .map(|((l, s), t)| FrameSpec {
            timestamp: t,
            left: l,
            right: is_stereo.then(|| s.clone()),
            depth: (!is_stereo).then_some(s),
        })
        .collect();
    Ok(Dataset {
        kind: DatasetKind::ImageFolder,
        intrinsics,
        baseline: if is_stereo { calib.baseline } else { None },
        depth_factor: calib.depth_factor.unwrap_or(5000.0),
        frames,
    })
}

/// Any PNG as grey levels on the 0–255 scale (16-bit input is divided by 257).
pub fn read_gray(path: &Path) -> Result<GrayImage, DatasetError> {
    let err = |message: String| DatasetError::Image { path: path.to_path_buf(), message };
    let img = image::open(path).map_err(|e| err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let out = match img {
        image::DynamicImage::ImageLuma16(_) | image::DynamicImage::ImageLumaA16(_) | image::DynamicImage::ImageRgb16(_) | image::DynamicImage::ImageRgba16(_) => {
            GrayImage::from_u16(w, h, img.to_luma16().as_raw())
        }
        _ => GrayImage::from_u8(w, h, img.to_luma8().as_raw()),
    };
    out.map_err(|e| err(e.to_string()))
}

/// 16-bit depth PNG; 0 means no measurement.
pub fn read_depth_png(path: &Path, factor: f64) -> Result<DepthMap, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::Image { path: path.to_path_buf(), message: e.to_string() })?;
    let raw = img.to_luma16();
    let (w, h) = (raw.width() as usize, raw.height() as usize);
    let values = raw.as_raw().iter().map(|&v| (v > 0).then(|| (v as f64 / factor) as f32)).collect();
    Ok(DepthMap::new(w, h, values))
}

pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<(), DatasetError> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.to_u8()).expect("buffer size matches");
    buf.save(path).map_err(|e| DatasetError::Image { path: path.to_path_buf(), message: e.to_string() })
}

pub fn write_depth_png(path: &Path, depth: &DepthMap, factor: f64) -> Result<(), DatasetError> {
    let data: Vec<u16> = depth.values().iter().map(|v| v.map(|z| (z as f64 * factor).round().clamp(0.0, 65535.0) as u16).unwrap_or(0)).collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(depth.width() as u32, depth.height() as u32, data).expect("buffer size matches");
    buf.save(path).map_err(|e| DatasetError::Image { path: path.to_path_buf(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CALIB: &str = "P0: 718.856 0 607.1928 0 0 718.856 185.2157 0 0 0 1 0\n\
                         P1: 718.856 0 607.1928 -386.1448 0 718.856 185.2157 0 0 0 1 0\n";

    #[test]
    fn kitti_calibration() {
        let (k, b) = parse_kitti_calib(CALIB).unwrap();
        assert_eq!((k.fx, k.fy, k.cx, k.cy), (718.856, 718.856, 607.1928, 185.2157));
        assert!((b - 386.1448 / 718.856).abs() < 1e-15);
        assert!(matches!(parse_kitti_calib("P0: 1 2 3\n"), Err(DatasetError::Calibration(_))));
        assert!(matches!(parse_kitti_calib(&CALIB.replace("P1", "P2")), Err(DatasetError::Calibration(_))));
    }

    #[test]
    fn association_is_one_to_one() {
        let mk = |ts: &[f64]| ts.iter().map(|&t| (t, PathBuf::new())).collect::<Vec<_>>();
        let rgb = mk(&[0.0, 0.1, 0.2, 0.3]);
        let depth = mk(&[0.005, 0.104, 0.106, 0.5]);
        assert_eq!(associate_listings(&rgb, &depth, 0.02), vec![(0, 0), (1, 1)]);
        assert!(associate_listings(&rgb, &mk(&[0.5, 0.6]), 0.02).is_empty());
    }

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 30 + y) as f32);
        let p = dir.path().join("a.png");
        write_gray_png(&p, &img).unwrap();
        assert_eq!(read_gray(&p).unwrap(), img);
        let depth = DepthMap::new(2, 1, vec![Some(1.5), None]);
        let p = dir.path().join("d.png");
        write_depth_png(&p, &depth, 5000.0).unwrap();
        assert_eq!(read_depth_png(&p, 5000.0).unwrap(), depth);
    }

    #[test]
    fn empty_folder_is_a_layout_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("left")).unwrap();
        assert!(matches!(load_folder(dir.path()), Err(DatasetError::Layout(_))));
        assert!(matches!(load_folder(&dir.path().join("nope")), Err(DatasetError::Layout(_))));
    }
}
