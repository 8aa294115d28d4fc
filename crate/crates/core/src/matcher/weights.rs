//! Matcher weights and their `.lsmw` binary form.
//!
//! Same conventions as `.lsft`: little-endian, f32 payload, row-major.
//!
//! ```text
//! magic "LSMW" | version u32 (=1) | descriptor_dim u32 (D) | unit_count u32
//! sim_proj_a D×D | sim_bias_a D | sim_proj_b D×D | sim_bias_b D
//! matchability D | matchability_bias 1
//! unit_count × ( kind u8 (0 self, 1 cross) | query D×D | key D×D | value D×D
//!                mlp D×2D | mlp_bias D )
//! ```

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::MatcherError;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"LSMW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    /// Messages come from the point's own image.
    SelfAttention,
    /// Messages come from the other image.
    CrossAttention,
}

/// One attention unit: projections for queries, keys and values plus a
/// linear update `[x | m] -> Δx`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionUnitWeights {
    pub kind: AttentionKind,
    pub query: DMatrix<f64>,
    pub key: DMatrix<f64>,
    pub value: DMatrix<f64>,
    /// D × 2D.
    pub mlp: DMatrix<f64>,
    pub mlp_bias: DVector<f64>,
}

impl AttentionUnitWeights {
    pub fn dim(&self) -> usize {
        self.query.nrows()
    }

    pub fn validate(&self) -> Result<(), MatcherError> {
        let d = self.dim();
        for (name, m, rows, cols) in [
            ("query", &self.query, d, d),
            ("key", &self.key, d, d),
            ("value", &self.value, d, d),
            ("mlp", &self.mlp, d, 2 * d),
        ] {
            if m.shape() != (rows, cols) {
                return Err(MatcherError::DimensionMismatch(format!(
                    "attention {name} is {:?}, expected ({rows}, {cols})",
                    m.shape()
                )));
            }
            if !m.iter().all(|v| v.is_finite()) {
                return Err(MatcherError::NonFiniteWeights(name.into()));
            }
        }
        if self.mlp_bias.len() != d {
            return Err(MatcherError::DimensionMismatch(format!("mlp bias has {} entries, expected {d}", self.mlp_bias.len())));
        }
        if !self.mlp_bias.iter().all(|v| v.is_finite()) {
            return Err(MatcherError::NonFiniteWeights("mlp_bias".into()));
        }
        Ok(())
    }
}

/// Linear maps for the similarity and matchability heads plus an optional
/// stack of attention units.
#[derive(Debug, Clone, PartialEq)]
pub struct MatcherWeights {
    pub sim_proj_a: DMatrix<f64>,
    pub sim_bias_a: DVector<f64>,
    pub sim_proj_b: DMatrix<f64>,
    pub sim_bias_b: DVector<f64>,
    pub matchability: DVector<f64>,
    pub matchability_bias: f64,
    pub attention_units: Vec<AttentionUnitWeights>,
}

impl MatcherWeights {
    /// Identity projections, zero biases, zero matchability weights
    /// (σ = 0.5 everywhere), no attention units.
    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0, 0.0)
    }

    /// Projections `√gain · I` (so `S = gain · ⟨x, y⟩`) and a constant
    /// matchability `sigmoid(matchability_bias)`.
    pub fn scaled_identity(dim: usize, gain: f64, matchability_bias: f64) -> Self {
        let root = gain.sqrt();
        Self {
            sim_proj_a: DMatrix::identity(dim, dim) * root,
            sim_bias_a: DVector::zeros(dim),
            sim_proj_b: DMatrix::identity(dim, dim) * root,
            sim_bias_b: DVector::zeros(dim),
            matchability: DVector::zeros(dim),
            matchability_bias,
            attention_units: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.sim_proj_a.ncols()
    }

    /// Weights for matching in the opposite direction (B against A).
    pub fn transposed(&self) -> Self {
        Self {
            sim_proj_a: self.sim_proj_b.clone(),
            sim_bias_a: self.sim_bias_b.clone(),
            sim_proj_b: self.sim_proj_a.clone(),
            sim_bias_b: self.sim_bias_a.clone(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), MatcherError> {
        let d = self.dim();
        for (name, m) in [("sim_proj_a", &self.sim_proj_a), ("sim_proj_b", &self.sim_proj_b)] {
            if m.shape() != (d, d) {
                return Err(MatcherError::DimensionMismatch(format!("{name} is {:?}, expected ({d}, {d})", m.shape())));
            }
            if !m.iter().all(|v| v.is_finite()) {
                return Err(MatcherError::NonFiniteWeights(name.into()));
            }
        }
        for (name, v) in [
            ("sim_bias_a", &self.sim_bias_a),
            ("sim_bias_b", &self.sim_bias_b),
            ("matchability", &self.matchability),
        ] {
            if v.len() != d {
                return Err(MatcherError::DimensionMismatch(format!("{name} has {} entries, expected {d}", v.len())));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(MatcherError::NonFiniteWeights(name.into()));
            }
        }
        if !self.matchability_bias.is_finite() {
            return Err(MatcherError::NonFiniteWeights("matchability_bias".into()));
        }
        for unit in &self.attention_units {
            if unit.dim() != d {
                return Err(MatcherError::DimensionMismatch(format!("attention unit has dim {}, expected {d}", unit.dim())));
            }
            unit.validate()?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::new();
        out.extend_from_slice(&WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(self.attention_units.len() as u32).to_le_bytes());
        put_matrix(&mut out, &self.sim_proj_a);
        put_vector(&mut out, &self.sim_bias_a);
        put_matrix(&mut out, &self.sim_proj_b);
        put_vector(&mut out, &self.sim_bias_b);
        put_vector(&mut out, &self.matchability);
        out.extend_from_slice(&(self.matchability_bias as f32).to_le_bytes());
        for unit in &self.attention_units {
            out.push(match unit.kind {
                AttentionKind::SelfAttention => 0,
                AttentionKind::CrossAttention => 1,
            });
            put_matrix(&mut out, &unit.query);
            put_matrix(&mut out, &unit.key);
            put_matrix(&mut out, &unit.value);
            put_matrix(&mut out, &unit.mlp);
            put_vector(&mut out, &unit.mlp_bias);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MatcherError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != WEIGHTS_MAGIC {
            return Err(MatcherError::BadWeightsFile(format!("bad magic {magic:?}")));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(MatcherError::BadWeightsFile(format!("unsupported version {version}")));
        }
        let d = r.u32()? as usize;
        let units = r.u32()? as usize;
        if d == 0 {
            return Err(MatcherError::BadWeightsFile("descriptor_dim is zero".into()));
        }
        let mut w = MatcherWeights {
            sim_proj_a: r.matrix(d, d)?,
            sim_bias_a: r.vector(d)?,
            sim_proj_b: r.matrix(d, d)?,
            sim_bias_b: r.vector(d)?,
            matchability: r.vector(d)?,
            matchability_bias: r.f32()? as f64,
            attention_units: Vec::with_capacity(units.min(64)),
        };
        for _ in 0..units {
            let kind = match r.take(1)?[0] {
                0 => AttentionKind::SelfAttention,
                1 => AttentionKind::CrossAttention,
                k => return Err(MatcherError::BadWeightsFile(format!("unknown attention kind {k}"))),
            };
            w.attention_units.push(AttentionUnitWeights {
                kind,
                query: r.matrix(d, d)?,
                key: r.matrix(d, d)?,
                value: r.matrix(d, d)?,
                mlp: r.matrix(d, 2 * d)?,
                mlp_bias: r.vector(d)?,
            });
        }
        if r.pos != bytes.len() {
            return Err(MatcherError::BadWeightsFile(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MatcherError> {
        let bytes = fs::read(path).map_err(|e| MatcherError::BadWeightsFile(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_bytes())
    }
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&(m[(r, c)] as f32).to_le_bytes());
        }
    }
}

fn put_vector(out: &mut Vec<u8>, v: &DVector<f64>) {
    for x in v.iter() {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MatcherError> {
        if self.bytes.len() - self.pos < n {
            return Err(MatcherError::BadWeightsFile(format!("truncated at byte {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, MatcherError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, MatcherError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>, MatcherError> {
        let raw = self.take(rows * cols * 4)?;
        let vals: Vec<f64> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    }

    fn vector(&mut self, n: usize) -> Result<DVector<f64>, MatcherError> {
        let raw = self.take(n * 4)?;
        Ok(DVector::from_iterator(n, raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)))
    }
}
