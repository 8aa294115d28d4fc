//! Trajectory I/O, time association, Umeyama alignment and absolute
//! trajectory error.

mod io;

pub use io::{format_trajectory_tum, parse_trajectory_kitti, parse_trajectory_tum, read_trajectory_kitti, read_trajectory_tum, write_trajectory_tum};

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::geometry::PoseSE3;

/// EVO's default association window.
pub const DEFAULT_MAX_DT: f64 = 0.02;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory is empty")]
    Empty,
    #[error("timestamps not strictly increasing at entry {index} ({previous} then {current})")]
    NonIncreasingTimestamp { index: usize, previous: f64, current: f64 },
    #[error("no timestamp pairs within the association window")]
    NoOverlap,
    #[error("need at least {needed} associated pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: non-finite value")]
    NonFiniteValue { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Timestamped world-from-camera poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, PoseSE3)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(f64, PoseSE3)>) -> Result<Self, EvalError> {
        if entries.is_empty() {
            return Err(EvalError::Empty);
        }
        for (i, w) in entries.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(EvalError::NonIncreasingTimestamp { index: i + 1, previous: w[0].0, current: w[1].0 });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, PoseSE3)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    /// Applies `t` on the left of every pose.
    pub fn transformed(&self, t: &PoseSE3) -> Trajectory {
        Trajectory { entries: self.entries.iter().map(|(s, p)| (*s, t.compose(p))).collect() }
    }
}

/// Greedy nearest-timestamp matching: candidate pairs within `max_dt` are
/// taken in order of increasing |dt|, skipping any that reuse an entry or
/// would cross an already accepted pair. Returned sorted by estimate index.
pub fn associate_by_time(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<Vec<(usize, usize)>, EvalError> {
    let r: Vec<f64> = reference.timestamps().collect();
    let mut candidates = Vec::new();
    let mut lo = 0usize;
    for (i, t) in est.timestamps().enumerate() {
        while lo < r.len() && r[lo] < t - max_dt {
            lo += 1;
        }
        let mut j = lo;
        while j < r.len() && r[j] <= t + max_dt {
            candidates.push(((t - r[j]).abs(), i, j));
            j += 1;
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut by_est: BTreeMap<usize, usize> = BTreeMap::new();
    let mut used_ref = vec![false; r.len()];
    for (_, i, j) in candidates {
        if by_est.contains_key(&i) || used_ref[j] {
            continue;
        }
        let below_ok = by_est.range(..i).next_back().is_none_or(|(_, &jj)| jj < j);
        let above_ok = by_est.range(i + 1..).next().is_none_or(|(_, &jj)| jj > j);
        if below_ok && above_ok {
            by_est.insert(i, j);
            used_ref[j] = true;
        }
    }
    if by_est.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    Ok(by_est.into_iter().collect())
}

/// Similarity (or rigid) transform `q ≈ s·R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Alignment {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros(), scale: 1.0 }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn pose(&self) -> PoseSE3 {
        PoseSE3::new(self.rotation, self.translation).unwrap_or_else(|_| {
            PoseSE3::from_approximate_rotation(self.rotation, self.translation).expect("rotation from SVD")
        })
    }
}

/// Least-squares alignment of `est` onto `reference` (Umeyama 1991).
pub fn align_umeyama(est: &[Vector3<f64>], reference: &[Vector3<f64>], with_scale: bool) -> Result<Alignment, EvalError> {
    assert_eq!(est.len(), reference.len(), "point lists must pair up");
    let n = est.len();
    if n < 3 {
        return Err(EvalError::DegenerateGeometry(format!("{n} point pairs, need at least 3")));
    }
    let inv_n = 1.0 / n as f64;
    let mu_p = est.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_q = reference.iter().sum::<Vector3<f64>>() * inv_n;
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, q) in est.iter().zip(reference) {
        let (dp, dq) = (p - mu_p, q - mu_q);
        cov += dq * dp.transpose();
        var_p += dp.norm_squared();
    }
    cov *= inv_n;
    var_p *= inv_n;
    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    // Rotation is determined only when the cross-covariance has rank ≥ 2.
    let mut order = [sv[0], sv[1], sv[2]];
    order.sort_by(|a, b| b.total_cmp(a));
    if !(order[0] > 0.0) || order[1] <= 1e-12 * order[0] {
        return Err(EvalError::DegenerateGeometry("points are coincident or collinear".into()));
    }
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        // Flip the axis of the smallest singular value.
        let k = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap();
        s[(k, k)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale { (Matrix3::from_diagonal(&sv) * s).trace() / var_p } else { 1.0 };
    let translation = mu_q - scale * (rotation * mu_p);
    Ok(Alignment { rotation, translation, scale })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteOptions {
    pub align: bool,
    pub with_scale: bool,
    pub max_dt: f64,
}

impl Default for AteOptions {
    fn default() -> Self {
        Self { align: true, with_scale: false, max_dt: DEFAULT_MAX_DT }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteReport {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub matched_pairs: usize,
    pub aligned: bool,
    pub alignment: Alignment,
}

#[derive(Serialize)]
struct AteJson {
    rmse: f64,
    mean: f64,
    median: f64,
    max: f64,
    pairs: usize,
    aligned: bool,
    scale: f64,
}

impl AteReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&AteJson {
            rmse: self.rmse,
            mean: self.mean,
            median: self.median,
            max: self.max,
            pairs: self.matched_pairs,
            aligned: self.aligned,
            scale: self.alignment.scale,
        })
        .expect("plain struct serializes")
    }
}

/// Absolute translational error over time-associated pairs.
pub fn ate_rmse(est: &Trajectory, reference: &Trajectory, opts: &AteOptions) -> Result<AteReport, EvalError> {
    let pairs = associate_by_time(est, reference, opts.max_dt)?;
    let needed = if opts.align { 3 } else { 2 };
    if pairs.len() < needed {
        return Err(EvalError::TooFewPairs { needed, got: pairs.len() });
    }
    let p: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| *est.entries[i].1.translation()).collect();
    let q: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| *reference.entries[j].1.translation()).collect();
    let residuals = |al: &Alignment| -> Vec<f64> { p.iter().zip(&q).map(|(a, b)| (al.apply(a) - b).norm()).collect() };
    let sse = |e: &[f64]| e.iter().map(|x| x * x).sum::<f64>();
    let mut alignment = Alignment::identity();
    let mut errors = residuals(&alignment);
    if opts.align {
        // The SVD solution carries rounding noise, so identity wins ties.
        let fitted = align_umeyama(&p, &q, opts.with_scale)?;
        let fitted_errors = residuals(&fitted);
        if sse(&fitted_errors) < sse(&errors) {
            alignment = fitted;
            errors = fitted_errors;
        }
    }
    let n = errors.len() as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean = errors.iter().sum::<f64>() / n;
    errors.sort_by(|a, b| a.total_cmp(b));
    let mid = errors.len() / 2;
    let median = if errors.len() % 2 == 0 { 0.5 * (errors[mid - 1] + errors[mid]) } else { errors[mid] };
    let max = *errors.last().unwrap();
    Ok(AteReport { rmse, mean, median, max, matched_pairs: pairs.len(), aligned: opts.align, alignment })
}
