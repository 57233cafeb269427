//! File formats: point clouds, detection records, configuration, reports
//! and run manifests. Every JSON writer emits keys in a fixed order so the
//! same values always produce the same bytes.

pub mod cloud;
pub mod config;
pub mod dataset;
pub mod detections;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::RigidTransform;

pub use cloud::{read_cloud, write_cloud};
pub use config::{ConfigFile, SensorConfig, SimulationConfig};
pub use detections::{read_detections, write_detections, DetectionPayload, DetectionRecord};
pub use report::{read_report, write_report, ReportFile};

pub const SCHEMA_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("schema version {found:?}, expected {expected:?}")]
    SchemaVersionMismatch { found: String, expected: String },
    #[error("missing field {0}")]
    MissingField(String),
    #[error("unknown field {0}")]
    UnknownField(String),
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("invalid config: {0}")]
    Config(String),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_atomic(path, to_json(value).as_bytes())
}

/// Lossless pose record: translation plus row-major rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    pub rotation: [[f64; 3]; 3],
}

impl From<&RigidTransform> for PoseRecord {
    fn from(t: &RigidTransform) -> Self {
        let r = &t.rotation;
        PoseRecord { translation: t.translation.into(), rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])) }
    }
}

impl From<&PoseRecord> for RigidTransform {
    fn from(p: &PoseRecord) -> Self {
        let r = nalgebra::Matrix3::from_fn(|i, j| p.rotation[i][j]);
        RigidTransform::new(r, p.translation.into())
    }
}

/// Provenance written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub warnings: usize,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ConfigFile) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: None,
            config_hash: config_hash(config),
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: 0,
            notes: Vec::new(),
        }
    }
}

/// SHA-256 of the canonical JSON form of the configuration in use.
pub fn config_hash(config: &ConfigFile) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub(crate) fn path_string(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}
