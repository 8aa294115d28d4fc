//! Soft-assignment matching between two keypoint sets.
//!
//! Point states start as descriptors, optionally pass through attention
//! units, and are then scored:
//!
//! * similarity `S_ij = (W_a x_i + b_a)ᵀ (W_b x_j + b_b)`
//! * matchability `σ_i = sigmoid(w·x_i + b)`
//! * assignment `P_ij = σ_i^A σ_j^B · softmax_k(S_kj)_i · softmax_k(S_ik)_j`
//!
//! Hard matches are mutual arg-maxima of `P` above a threshold.

mod weights;

pub use weights::{AttentionKind, AttentionUnitWeights, MatcherWeights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::features::FeatureSet;

/// Default probability gate for [`extract_matches`].
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatcherError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite weights in {0}")]
    NonFiniteWeights(String),
    #[error("invalid weights file: {0}")]
    BadWeightsFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub p: DMatrix<f64>,
    pub sigma_a: DVector<f64>,
    pub sigma_b: DVector<f64>,
    pub matches: Vec<Match>,
}

impl AssignmentResult {
    fn empty(m: usize, n: usize) -> Self {
        Self { p: DMatrix::zeros(m, n), sigma_a: DVector::zeros(m), sigma_b: DVector::zeros(n), matches: Vec::new() }
    }
}

/// Descriptor rows as an `M × D` state matrix.
pub fn states_from_features(set: &FeatureSet) -> DMatrix<f64> {
    DMatrix::from_row_iterator(set.len(), set.descriptor_dim(), set.descriptors().iter().map(|&v| v as f64))
}

fn check_cols(states: &DMatrix<f64>, d: usize, what: &str) -> Result<(), MatcherError> {
    if states.ncols() != d {
        return Err(MatcherError::DimensionMismatch(format!("{what} has {} columns, expected {d}", states.ncols())));
    }
    Ok(())
}

/// Row-wise softmax with max subtraction. Rows whose maximum is `-∞`
/// (fully masked) come out as zeros.
fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(logits.nrows(), logits.ncols());
    for r in 0..logits.nrows() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for c in 0..logits.ncols() {
            let e = (logits[(r, c)] - max).exp();
            out[(r, c)] = e;
            sum += e;
        }
        for c in 0..logits.ncols() {
            out[(r, c)] /= sum;
        }
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn attend(targets: &DMatrix<f64>, sources: &DMatrix<f64>, w: &AttentionUnitWeights) -> DMatrix<f64> {
    let d = w.dim();
    if sources.nrows() == 0 || targets.nrows() == 0 {
        return targets.clone();
    }
    let q = targets * w.query.transpose();
    let k = sources * w.key.transpose();
    let v = sources * w.value.transpose();
    let logits = (&q * k.transpose()) / (d as f64).sqrt();
    let messages = softmax_rows(&logits) * v;
    let mut joined = DMatrix::zeros(targets.nrows(), 2 * d);
    joined.columns_mut(0, d).copy_from(targets);
    joined.columns_mut(d, d).copy_from(&messages);
    let mut delta = joined * w.mlp.transpose();
    for mut row in delta.row_iter_mut() {
        row += w.mlp_bias.transpose();
    }
    targets + delta
}

/// One synchronous attention update of both images' states.
///
/// Messages are softmax(qᵢ·kⱼ/√D)-weighted sums of value-projected source
/// states; each state then receives the residual `x ← x + MLP([x | m])`.
/// Both outputs are computed from the pre-update states.
pub fn apply_attention_unit(
    states_a: &DMatrix<f64>,
    states_b: &DMatrix<f64>,
    w: &AttentionUnitWeights,
) -> Result<(DMatrix<f64>, DMatrix<f64>), MatcherError> {
    w.validate()?;
    check_cols(states_a, w.dim(), "states_a")?;
    check_cols(states_b, w.dim(), "states_b")?;
    Ok(match w.kind {
        AttentionKind::SelfAttention => (attend(states_a, states_a, w), attend(states_b, states_b, w)),
        AttentionKind::CrossAttention => (attend(states_a, states_b, w), attend(states_b, states_a, w)),
    })
}

fn project_rows(states: &DMatrix<f64>, proj: &DMatrix<f64>, bias: &DVector<f64>) -> DMatrix<f64> {
    let mut out = states * proj.transpose();
    for mut row in out.row_iter_mut() {
        row += bias.transpose();
    }
    out
}

/// `S_ij = (W_a x_i + b_a)ᵀ (W_b x_j + b_b)`.
pub fn similarity_matrix(
    states_a: &DMatrix<f64>,
    states_b: &DMatrix<f64>,
    w: &MatcherWeights,
) -> Result<DMatrix<f64>, MatcherError> {
    check_cols(states_a, w.dim(), "states_a")?;
    check_cols(states_b, w.dim(), "states_b")?;
    let pa = project_rows(states_a, &w.sim_proj_a, &w.sim_bias_a);
    let pb = project_rows(states_b, &w.sim_proj_b, &w.sim_bias_b);
    Ok(pa * pb.transpose())
}

/// `σ_i = sigmoid(w·x_i + b)`.
pub fn matchability(states: &DMatrix<f64>, w: &MatcherWeights) -> Result<DVector<f64>, MatcherError> {
    check_cols(states, w.dim(), "states")?;
    let z = states * &w.matchability;
    Ok(z.map(|v| sigmoid(v + w.matchability_bias)))
}

/// Double-softmax assignment gated by matchability.
///
/// `S` may contain `-∞` to exclude pairs; those entries get `P = 0`.
pub fn assignment_matrix(s: &DMatrix<f64>, sigma_a: &DVector<f64>, sigma_b: &DVector<f64>) -> DMatrix<f64> {
    let (m, n) = s.shape();
    assert_eq!(sigma_a.len(), m, "sigma_a length must equal S rows");
    assert_eq!(sigma_b.len(), n, "sigma_b length must equal S columns");
    // Softmax over rows i of each column j, and over columns j of each row i.
    let col = softmax_rows(&s.transpose()).transpose();
    let row = softmax_rows(s);
    DMatrix::from_fn(m, n, |i, j| sigma_a[i] * sigma_b[j] * col[(i, j)] * row[(i, j)])
}

/// Mutual-best pairs with `P_ij ≥ threshold`. Arg-max ties go to the
/// smallest index; entries with `P_ij = 0` (gated or masked) never match.
/// Output is ordered by `i`.
pub fn extract_matches(p: &DMatrix<f64>, threshold: f64) -> Vec<Match> {
    let (m, n) = p.shape();
    if m == 0 || n == 0 {
        return Vec::new();
    }
    let mut col_best = vec![0usize; n];
    for j in 0..n {
        for i in 1..m {
            if p[(i, j)] > p[(col_best[j], j)] {
                col_best[j] = i;
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..m {
        let mut best = 0;
        for j in 1..n {
            if p[(i, j)] > p[(i, best)] {
                best = j;
            }
        }
        let score = p[(i, best)];
        if col_best[best] == i && score >= threshold && score > 0.0 {
            out.push(Match { i, j: best, score });
        }
    }
    out
}

/// Full pipeline: states from descriptors, attention units in order, then
/// similarity, matchability, assignment and extraction.
pub fn match_feature_sets(
    a: &FeatureSet,
    b: &FeatureSet,
    w: &MatcherWeights,
    threshold: f64,
) -> Result<AssignmentResult, MatcherError> {
    w.validate()?;
    for (name, set) in [("a", a), ("b", b)] {
        if set.descriptor_dim() != w.dim() {
            return Err(MatcherError::DimensionMismatch(format!(
                "feature set {name} has descriptor dim {}, weights expect {}",
                set.descriptor_dim(),
                w.dim()
            )));
        }
    }
    if a.is_empty() || b.is_empty() {
        return Ok(AssignmentResult::empty(a.len(), b.len()));
    }
    let (p, sigma_a, sigma_b) = assign_states(states_from_features(a), states_from_features(b), w)?;
    let matches = extract_matches(&p, threshold);
    Ok(AssignmentResult { p, sigma_a, sigma_b, matches })
}

/// Attention units, similarity, matchability and assignment on raw state
/// matrices. Returns `(P, σ_a, σ_b)`.
pub fn assign_states(
    mut xa: DMatrix<f64>,
    mut xb: DMatrix<f64>,
    w: &MatcherWeights,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>), MatcherError> {
    for unit in &w.attention_units {
        (xa, xb) = apply_attention_unit(&xa, &xb, unit)?;
    }
    let s = similarity_matrix(&xa, &xb, w)?;
    let sigma_a = matchability(&xa, w)?;
    let sigma_b = matchability(&xb, w)?;
    let p = assignment_matrix(&s, &sigma_a, &sigma_b);
    Ok((p, sigma_a, sigma_b))
}
