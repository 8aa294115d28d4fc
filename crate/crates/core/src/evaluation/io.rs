use std::path::Path;

use log::warn;
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::{EvalError, Trajectory};
use crate::geometry::PoseSE3;

const QUATERNION_TOLERANCE: f64 = 1e-3;
const KITTI_ORTHONORMALITY_TOLERANCE: f64 = 1e-6;
const KITTI_FRAME_PERIOD: f64 = 0.1;

fn parse_values(line: &str, lineno: usize, expected: usize) -> Result<Vec<f64>, EvalError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != expected {
        return Err(EvalError::Parse { line: lineno, message: format!("expected {expected} fields, found {}", fields.len()) });
    }
    let mut values = Vec::with_capacity(expected);
    for f in fields {
        let v: f64 = f.parse().map_err(|_| EvalError::Parse { line: lineno, message: format!("not a number: {f:?}") })?;
        if !v.is_finite() {
            return Err(EvalError::NonFiniteValue { line: lineno });
        }
        values.push(v);
    }
    Ok(values)
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines; `#` starts a comment line.
pub fn parse_trajectory_tum(text: &str) -> Result<Trajectory, EvalError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v = parse_values(line, lineno, 8)?;
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        let norm = q.norm();
        if norm == 0.0 {
            return Err(EvalError::Parse { line: lineno, message: "zero quaternion".into() });
        }
        if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
            warn!("line {lineno}: quaternion norm {norm}; normalizing");
        }
        let pose = PoseSE3::from_quaternion(&UnitQuaternion::from_quaternion(q), Vector3::new(v[1], v[2], v[3]));
        entries.push((v[0], pose));
    }
    Trajectory::new(entries)
}

pub fn read_trajectory_tum(path: impl AsRef<Path>) -> Result<Trajectory, EvalError> {
    parse_trajectory_tum(&std::fs::read_to_string(path)?)
}

/// One TUM line per pose. Values use shortest round-trip formatting, so
/// parsing the output reproduces the stored numbers exactly.
pub fn format_trajectory_tum(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (t, pose) in traj.entries() {
        let p = pose.translation();
        let q = pose.quaternion();
        let q = q.quaternion();
        out.push_str(&format!("{} {} {} {} {} {} {} {}\n", t, p.x, p.y, p.z, q.i, q.j, q.k, q.w));
    }
    out
}

/// Writes atomically (temp file + rename).
pub fn write_trajectory_tum(traj: &Trajectory, path: impl AsRef<Path>) -> Result<(), EvalError> {
    crate::fsutil::write_atomic(path.as_ref(), format_trajectory_tum(traj).as_bytes())?;
    Ok(())
}

/// KITTI poses: 12 row-major values of a 3x4 `[R | t]` per line, stamped at 10 Hz.
pub fn parse_trajectory_kitti(text: &str) -> Result<Trajectory, EvalError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let v = parse_values(line, lineno, 12)?;
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let t = Vector3::new(v[3], v[7], v[11]);
        let deviation = (r.transpose() * r - Matrix3::identity()).norm();
        let pose = if deviation > KITTI_ORTHONORMALITY_TOLERANCE {
            PoseSE3::from_approximate_rotation(r, t)
        } else {
            PoseSE3::new(r, t)
        }
        .map_err(|e| EvalError::Parse { line: lineno, message: e.to_string() })?;
        entries.push((entries.len() as f64 * KITTI_FRAME_PERIOD, pose));
    }
    Trajectory::new(entries)
}

pub fn read_trajectory_kitti(path: impl AsRef<Path>) -> Result<Trajectory, EvalError> {
    parse_trajectory_kitti(&std::fs::read_to_string(path)?)
}
