use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use slamfrontkit::pipeline::PipelineConfig;
use slamfrontkit::pyramid::PyramidConfig;
use slamfrontkit::stereo::SgmConfig;
use slamfrontkit::tracking::TrackerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("override `{key}`: `{segment}` is not an object")]
    OverridePath { key: String, segment: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    KittiOdometry,
    TumRgbd,
    #[default]
    ImageFolder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    #[default]
    Builtin,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightsSource {
    /// Scaled identity projections sized to the descriptor dimension.
    #[default]
    Identity,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_kind: DatasetKind,
    pub dataset_root: PathBuf,
    /// KITTI sequence number; for the other layouts an optional
    /// subdirectory of `dataset_root`.
    pub sequence_id: String,
    pub feature_source: FeatureSource,
    pub pyramid: PyramidConfig,
    pub sgm: SgmConfig,
    pub tracker: TrackerConfig,
    pub matcher_weights: WeightsSource,
    pub output_dir: PathBuf,
    pub threads: usize,
    /// TUM depth PNG value per metre.
    pub depth_factor: f64,
    /// TUM rgb/depth association gate, seconds.
    pub max_dt: f64,
    /// Process at most this many frames (0 = all).
    pub max_frames: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_kind: DatasetKind::default(),
            dataset_root: PathBuf::from("."),
            sequence_id: String::new(),
            feature_source: FeatureSource::default(),
            pyramid: PyramidConfig::default(),
            sgm: SgmConfig::default(),
            tracker: TrackerConfig::default(),
            matcher_weights: WeightsSource::default(),
            output_dir: PathBuf::from("out"),
            threads: 1,
            depth_factor: 5000.0,
            max_dt: 0.02,
            max_frames: 0,
        }
    }
}

impl RunConfig {
    /// Reads an optional JSON file, applies `key=value` overrides, and
    /// validates. Relative paths in a file are resolved against its directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?;
                serde_json::from_str::<Value>(&text)?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value)?;
        if let Some(base) = path.and_then(Path::parent) {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset_root);
        fix(&mut self.output_dir);
        if let FeatureSource::File(p) = &mut self.feature_source {
            fix(p);
        }
        if let WeightsSource::File(p) = &mut self.matcher_weights {
            fix(p);
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig { pyramid: self.pyramid, sgm: self.sgm, tracker: self.tracker }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.threads == 0 {
            return Err(ConfigError::Invalid("threads must be at least 1".into()));
        }
        if !self.dataset_root.is_dir() {
            return Err(ConfigError::Invalid(format!("dataset_root {} is not a directory", self.dataset_root.display())));
        }
        if let FeatureSource::File(p) = &self.feature_source {
            if !p.is_file() {
                return Err(ConfigError::Invalid(format!("feature file {} does not exist", p.display())));
            }
        }
        if let WeightsSource::File(p) = &self.matcher_weights {
            if !p.is_file() {
                return Err(ConfigError::Invalid(format!("weights file {} does not exist", p.display())));
            }
        }
        if !(self.depth_factor > 0.0) {
            return Err(ConfigError::Invalid("depth_factor must be positive".into()));
        }
        if !(self.max_dt >= 0.0) {
            return Err(ConfigError::Invalid("max_dt must be non-negative".into()));
        }
        self.pipeline().validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// `a.b.c=value`; the value is parsed as JSON when possible, otherwise taken
/// as a string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::OverridePath { key: key.to_string(), segment: parts[..i].join(".") })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides_nest_and_parse() {
        let mut v = serde_json::json!({"tracker": {"huber_delta": 2.0}});
        apply_override(&mut v, "tracker.huber_delta=1.5").unwrap();
        apply_override(&mut v, "sgm.d_max=63").unwrap();
        apply_override(&mut v, "dataset_kind=tum-rgbd").unwrap();
        apply_override(&mut v, r#"feature_source={"file":"f.lsft"}"#).unwrap();
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.tracker.huber_delta, 1.5);
        assert_eq!(cfg.sgm.d_max, 63);
        assert_eq!(cfg.dataset_kind, DatasetKind::TumRgbd);
        assert_eq!(cfg.feature_source, FeatureSource::File("f.lsft".into()));
        assert_eq!(cfg.sgm.d_min, 0);
    }

    #[test]
    fn bad_overrides() {
        let mut v = serde_json::json!({"threads": 2});
        assert!(matches!(apply_override(&mut v, "nokey"), Err(ConfigError::Override(_))));
        assert!(matches!(apply_override(&mut v, "threads.x=1"), Err(ConfigError::OverridePath { .. })));
        apply_override(&mut v, "bogus=1").unwrap();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig { dataset_root: dir.path().into(), ..Default::default() };
        cfg.validate().unwrap();
        cfg.threads = 0;
        assert!(cfg.validate().is_err());
        cfg.threads = 1;
        cfg.feature_source = FeatureSource::File(dir.path().join("missing.lsft"));
        assert!(cfg.validate().is_err());
    }
}
