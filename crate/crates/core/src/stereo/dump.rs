//! Debug dumps of disparity and depth maps.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DepthMap, DisparityMap};

/// Disparity stored as `d·256` in a 16-bit binary PGM; invalid pixels are 0.
pub fn encode_disparity_pgm(map: &DisparityMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", map.width(), map.height()).into_bytes();
    for v in map.values() {
        let value = v.map(|d| (d as u32 * 256).min(65535) as u16).unwrap_or(0);
        out.extend_from_slice(&value.to_be_bytes());
    }
    out
}

pub fn write_disparity_pgm(path: &Path, map: &DisparityMap) -> io::Result<()> {
    std::fs::write(path, encode_disparity_pgm(map))
}

/// Sidecar describing a raw depth dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDepthHeader {
    pub width: usize,
    pub height: usize,
    pub dtype: String,
    pub byte_order: String,
    pub units: String,
    pub invalid: String,
}

/// Writes row-major little-endian f32 depth (NaN where invalid) to `path`
/// and a JSON header next to it. Returns the sidecar path.
pub fn write_depth_raw(path: &Path, map: &DepthMap) -> io::Result<PathBuf> {
    let mut bytes = Vec::with_capacity(map.values().len() * 4);
    for v in map.values() {
        bytes.extend_from_slice(&v.unwrap_or(f32::NAN).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    let header = RawDepthHeader {
        width: map.width(),
        height: map.height(),
        dtype: "f32".into(),
        byte_order: "little".into(),
        units: "meters".into(),
        invalid: "nan".into(),
    };
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".json");
    let sidecar = PathBuf::from(sidecar);
    let mut f = std::fs::File::create(&sidecar)?;
    serde_json::to_writer_pretty(&mut f, &header)?;
    f.write_all(b"\n")?;
    Ok(sidecar)
}
