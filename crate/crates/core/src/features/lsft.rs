//! `.lsft` precomputed-feature files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! header   magic "LSFT" | version u32 (=1) | frame_count u32 | descriptor_dim u32
//! frame    keypoint_count u32
//!          keypoint_count x (x f32 | y f32 | level u8 | response f32)
//!          keypoint_count x descriptor_dim f32, row-major
//! ```

use std::fs;
use std::path::Path;

use log::warn;

use super::{l2_norm, FeatureError, FeatureSet, Keypoint};

pub const MAGIC: [u8; 4] = *b"LSFT";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 16;
pub const KEYPOINT_BYTES: usize = 13;
/// Used for the header of an empty file.
pub const DEFAULT_DESCRIPTOR_DIM: usize = 256;

const RENORMALIZE_TOLERANCE: f64 = 1e-3;

pub fn is_supported_dim(dim: usize) -> bool {
    matches!(dim, 64 | 128 | 256)
}

pub fn encode_features(sets: &[FeatureSet]) -> Result<Vec<u8>, FeatureError> {
    let dim = match sets.first() {
        Some(first) => first.descriptor_dim(),
        None => DEFAULT_DESCRIPTOR_DIM,
    };
    if !is_supported_dim(dim) {
        return Err(FeatureError::UnsupportedDescriptorDim(dim));
    }
    if let Some(other) = sets.iter().find(|s| s.descriptor_dim() != dim) {
        return Err(FeatureError::MixedDescriptorDims { first: dim, other: other.descriptor_dim() });
    }
    let body: usize = sets.iter().map(|s| 4 + s.len() * (KEYPOINT_BYTES + 4 * dim)).sum();
    let mut out = Vec::with_capacity(HEADER_BYTES + body);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sets.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for set in sets {
        out.extend_from_slice(&(set.len() as u32).to_le_bytes());
        for kp in set.keypoints() {
            out.extend_from_slice(&kp.x.to_le_bytes());
            out.extend_from_slice(&kp.y.to_le_bytes());
            out.push(kp.level);
            out.extend_from_slice(&kp.response.to_le_bytes());
        }
        for v in set.descriptors() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes all frames to `path` (via a sibling temp file and rename).
pub fn save_features(path: impl AsRef<Path>, sets: &[FeatureSet]) -> Result<(), FeatureError> {
    let bytes = encode_features(sets)?;
    crate::fsutil::write_atomic(path.as_ref(), &bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FeatureError> {
        if self.bytes.len() - self.pos < n {
            return Err(FeatureError::TruncatedFile { offset: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, FeatureError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, FeatureError> {
        Ok(self.take(1)?[0])
    }
}

struct Header {
    frame_count: usize,
    dim: usize,
}

fn read_header(cur: &mut Cursor<'_>) -> Result<Header, FeatureError> {
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FeatureError::BadMagic(magic));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(FeatureError::VersionMismatch { found: version, expected: VERSION });
    }
    let frame_count = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    if !is_supported_dim(dim) {
        return Err(FeatureError::UnsupportedDescriptorDim(dim));
    }
    Ok(Header { frame_count, dim })
}

fn skip_frame(cur: &mut Cursor<'_>, dim: usize) -> Result<(), FeatureError> {
    let count = cur.u32()? as usize;
    cur.take(count.saturating_mul(KEYPOINT_BYTES + 4 * dim))?;
    Ok(())
}

fn read_frame(cur: &mut Cursor<'_>, dim: usize, frame: usize) -> Result<FeatureSet, FeatureError> {
    let count = cur.u32()? as usize;
    // Bounds-check the whole record up front so a truncated file never
    // yields a partial set.
    let need = count.saturating_mul(KEYPOINT_BYTES + 4 * dim);
    if cur.bytes.len() - cur.pos < need {
        return Err(FeatureError::TruncatedFile { offset: cur.bytes.len() });
    }
    let mut keypoints = Vec::with_capacity(count);
    for _ in 0..count {
        let x = cur.f32()?;
        let y = cur.f32()?;
        let level = cur.u8()?;
        let response = cur.f32()?;
        keypoints.push(Keypoint { x, y, level, response });
    }
    let mut descriptors = Vec::with_capacity(count * dim);
    for _ in 0..count * dim {
        descriptors.push(cur.f32()?);
    }
    for (row, chunk) in descriptors.chunks_mut(dim).enumerate() {
        let norm = l2_norm(chunk);
        if (norm - 1.0).abs() > RENORMALIZE_TOLERANCE {
            warn!("frame {frame} descriptor {row} has norm {norm:.6}; renormalizing");
            if norm > 0.0 && norm.is_finite() {
                chunk.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
            } else {
                chunk.iter_mut().for_each(|v| *v = 0.0);
                chunk[0] = 1.0;
            }
        }
    }
    FeatureSet::from_parts_unchecked(keypoints, descriptors, dim)
}

/// Decodes one frame from an in-memory `.lsft` image.
pub fn decode_frame(bytes: &[u8], frame_index: usize) -> Result<FeatureSet, FeatureError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let header = read_header(&mut cur)?;
    if frame_index >= header.frame_count {
        return Err(FeatureError::FrameOutOfRange { index: frame_index, count: header.frame_count });
    }
    for _ in 0..frame_index {
        skip_frame(&mut cur, header.dim)?;
    }
    read_frame(&mut cur, header.dim, frame_index)
}

pub fn decode_all(bytes: &[u8]) -> Result<Vec<FeatureSet>, FeatureError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let header = read_header(&mut cur)?;
    (0..header.frame_count).map(|i| read_frame(&mut cur, header.dim, i)).collect()
}

/// Reads the frame at `frame_index`.
pub fn load_features(path: impl AsRef<Path>, frame_index: usize) -> Result<FeatureSet, FeatureError> {
    decode_frame(&fs::read(path)?, frame_index)
}

pub fn load_all_features(path: impl AsRef<Path>) -> Result<Vec<FeatureSet>, FeatureError> {
    decode_all(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_frame(dim: usize) -> FeatureSet {
        let mut d = vec![0.0f32; dim];
        d[3] = 1.0;
        FeatureSet::new(vec![Keypoint { x: 10.5, y: 3.25, level: 2, response: 0.75 }], d, dim).unwrap()
    }

    #[test]
    fn byte_layout_size() {
        let bytes = encode_features(&[one_frame(64)]).unwrap();
        assert_eq!(bytes.len(), 16 + 4 + 13 + 256);
        assert_eq!(&bytes[..4], b"LSFT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 64);
        // keypoint record starts after the count
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 10.5);
        assert_eq!(bytes[28], 2);
    }

    #[test]
    fn empty_file_is_readable() {
        let bytes = encode_features(&[]).unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES);
        assert!(decode_all(&bytes).unwrap().is_empty());
        assert!(matches!(decode_frame(&bytes, 0), Err(FeatureError::FrameOutOfRange { index: 0, count: 0 })));
    }

    #[test]
    fn frame_index_bounds() {
        let bytes = encode_features(&[one_frame(64), one_frame(64)]).unwrap();
        assert!(decode_frame(&bytes, 1).is_ok());
        assert!(matches!(decode_frame(&bytes, 2), Err(FeatureError::FrameOutOfRange { index: 2, count: 2 })));
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode_features(&[one_frame(128)]).unwrap();
        for cut in [3, 10, 18, 25, bytes.len() - 1] {
            let r = decode_frame(&bytes[..cut], 0);
            assert!(matches!(r, Err(FeatureError::TruncatedFile { .. })), "cut {cut}: {r:?}");
        }
    }

    #[test]
    fn header_validation() {
        let mut bytes = encode_features(&[one_frame(64)]).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_frame(&bytes, 0), Err(FeatureError::VersionMismatch { found: 2, .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_frame(&bytes, 0), Err(FeatureError::BadMagic(_))));
    }

    #[test]
    fn mixed_dims_rejected() {
        let r = encode_features(&[one_frame(64), one_frame(128)]);
        assert!(matches!(r, Err(FeatureError::MixedDescriptorDims { first: 64, other: 128 })));
        let odd = FeatureSet::new(vec![], vec![], 32).unwrap();
        assert!(matches!(encode_features(&[odd]), Err(FeatureError::UnsupportedDescriptorDim(32))));
    }

    #[test]
    fn stored_norm_drift_is_renormalized() {
        let mut bytes = encode_features(&[one_frame(64)]).unwrap();
        let at = HEADER_BYTES + 4 + KEYPOINT_BYTES + 3 * 4;
        bytes[at..at + 4].copy_from_slice(&2.0f32.to_le_bytes());
        let set = decode_frame(&bytes, 0).unwrap();
        assert_eq!(set.descriptor(0)[3], 1.0);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.lsft");
        let sets = vec![one_frame(256), FeatureSet::empty(256), one_frame(256)];
        save_features(&path, &sets).unwrap();
        assert_eq!(load_all_features(&path).unwrap(), sets);
        assert_eq!(load_features(&path, 2).unwrap(), sets[2]);
    }

    fn arb_set(dim: usize) -> impl Strategy<Value = FeatureSet> {
        prop::collection::vec(
            (0.0f32..1000.0, 0.0f32..1000.0, 0u8..8, 0.0f32..1e4, prop::collection::vec(-1.0f32..1.0, dim)),
            0..6,
        )
        .prop_map(move |rows| {
            let mut kps = Vec::new();
            let mut desc = Vec::new();
            for (x, y, level, response, mut d) in rows {
                let n = l2_norm(&d);
                if n < 1e-3 {
                    d.iter_mut().for_each(|v| *v = 0.0);
                    d[0] = 1.0;
                } else {
                    d.iter_mut().for_each(|v| *v = (*v as f64 / n) as f32);
                }
                kps.push(Keypoint { x, y, level, response });
                desc.extend(d);
            }
            FeatureSet::new(kps, desc, dim).unwrap()
        })
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity(sets in prop::collection::vec(arb_set(64), 0..4)) {
            let bytes = encode_features(&sets).unwrap();
            prop_assert_eq!(decode_all(&bytes).unwrap(), sets);
        }
    }
}
