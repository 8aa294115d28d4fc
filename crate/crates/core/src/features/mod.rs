//! Keypoints, descriptors and the detector abstraction.
//!
//! Two sources exist: [`BuiltinDetector`], a gradient-corner detector with
//! normalized patch descriptors, and `.lsft` files carrying precomputed
//! (typically learned) features, see [`lsft`].

mod builtin;
pub mod lsft;

pub use builtin::{builtin_describe, builtin_detect, BuiltinDetector, PatchDescriptors, PATCH_DESCRIPTOR_DIM};
pub use lsft::{load_all_features, load_features, save_features};

use thiserror::Error;

use crate::image::GrayImage;

/// Tolerance on descriptor L2 norms at module boundaries.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{keypoints} keypoints but {rows} descriptor rows")]
    CountMismatch { keypoints: usize, rows: usize },
    #[error("descriptor row {row} has norm {norm}, expected 1")]
    NotUnitNorm { row: usize, norm: f64 },
    #[error("descriptor buffer of {len} values is not a multiple of dimension {dim}")]
    RaggedDescriptors { len: usize, dim: usize },
    #[error("bad magic bytes {0:?}, expected \"LSFT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("frame {index} out of range, file holds {count} frames")]
    FrameOutOfRange { index: usize, count: usize },
    #[error("file truncated at byte {offset}")]
    TruncatedFile { offset: usize },
    #[error("unsupported descriptor dimension {0} (expected 64, 128 or 256)")]
    UnsupportedDescriptorDim(usize),
    #[error("feature sets disagree on descriptor dimension ({first} vs {other})")]
    MixedDescriptorDims { first: usize, other: usize },
    #[error("detector failed: {0}")]
    Detector(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A detection in base-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Pyramid level the point was detected on.
    pub level: u8,
    /// Detector score, non-negative.
    pub response: f32,
}

/// Raw detector output in the coordinates of the image it ran on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x: f32,
    pub y: f32,
    pub response: f32,
}

/// Keypoints of one frame plus their unit-norm descriptors (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    keypoints: Vec<Keypoint>,
    descriptors: Vec<f32>,
    descriptor_dim: usize,
}

impl FeatureSet {
    pub fn new(keypoints: Vec<Keypoint>, descriptors: Vec<f32>, descriptor_dim: usize) -> Result<Self, FeatureError> {
        let set = Self::from_parts_unchecked(keypoints, descriptors, descriptor_dim)?;
        for row in 0..set.len() {
            let norm = l2_norm(set.descriptor(row));
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(FeatureError::NotUnitNorm { row, norm });
            }
        }
        Ok(set)
    }

    /// Checks shapes but not norms.
    pub(crate) fn from_parts_unchecked(
        keypoints: Vec<Keypoint>,
        descriptors: Vec<f32>,
        descriptor_dim: usize,
    ) -> Result<Self, FeatureError> {
        if descriptor_dim == 0 || descriptors.len() % descriptor_dim != 0 {
            return Err(FeatureError::RaggedDescriptors { len: descriptors.len(), dim: descriptor_dim });
        }
        let rows = descriptors.len() / descriptor_dim;
        if rows != keypoints.len() {
            return Err(FeatureError::CountMismatch { keypoints: keypoints.len(), rows });
        }
        Ok(Self { keypoints, descriptors, descriptor_dim })
    }

    pub fn empty(descriptor_dim: usize) -> Self {
        Self { keypoints: Vec::new(), descriptors: Vec::new(), descriptor_dim }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn descriptors(&self) -> &[f32] {
        &self.descriptors
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptor_dim
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.descriptor_dim..(i + 1) * self.descriptor_dim]
    }

    /// New set holding the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        let mut keypoints = Vec::with_capacity(indices.len());
        let mut descriptors = Vec::with_capacity(indices.len() * self.descriptor_dim);
        for &i in indices {
            keypoints.push(self.keypoints[i]);
            descriptors.extend_from_slice(self.descriptor(i));
        }
        FeatureSet { keypoints, descriptors, descriptor_dim: self.descriptor_dim }
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// A per-image keypoint detector paired with a descriptor extractor.
///
/// Implementations must be deterministic: the same image and budget always
/// produce the same output.
pub trait FeatureDetector: Send + Sync {
    fn descriptor_dim(&self) -> usize;

    /// At most `max_points` detections in `img`'s own pixel coordinates.
    fn detect(&self, img: &GrayImage, max_points: usize) -> Result<Vec<Detection>, FeatureError>;

    /// One unit-norm descriptor row per point, row-major.
    fn describe(&self, img: &GrayImage, points: &[Detection]) -> Result<Vec<f32>, FeatureError>;
}
