//! On-disk layout of a recorded or simulated collection:
//!
//! ```text
//! <dir>/seq_000/<lidar id>.ply        one cloud per LiDAR (or .csv)
//! <dir>/seq_000/<camera id>.corners.json
//! <dir>/init_hints.json               optional registration starts
//! <dir>/ground_truth.json             simulation only
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cloud::{read_cloud, write_cloud};
use super::config::ConfigFile;
use super::{path_string, read_text, write_json, IoError, PoseRecord, SCHEMA_VERSION};
use crate::camera::CornerObservation;
use crate::geometry::RigidTransform;
use crate::pipeline::SequenceData;
use crate::sensor::SensorKind;
use crate::sim::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CornerFile {
    version: String,
    sensor: String,
    corners: Vec<CornerObservation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HintRecord {
    sequence: u32,
    sensor: String,
    board_pose: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HintFile {
    version: String,
    hints: Vec<HintRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub version: String,
    /// Sensor → world.
    pub sensors: BTreeMap<String, PoseRecord>,
    pub sequences: Vec<BTreeMap<String, [[f64; 3]; 4]>>,
}

impl From<&GroundTruth> for GroundTruthFile {
    fn from(gt: &GroundTruth) -> Self {
        GroundTruthFile {
            version: SCHEMA_VERSION.into(),
            sensors: gt.poses.iter().map(|(k, v)| (k.clone(), PoseRecord::from(v))).collect(),
            sequences: gt.centers.iter().map(|m| m.iter().map(|(k, c)| (k.clone(), c.map(|p| [p.x, p.y, p.z]))).collect()).collect(),
        }
    }
}

impl From<&GroundTruthFile> for GroundTruth {
    fn from(f: &GroundTruthFile) -> Self {
        GroundTruth {
            poses: f.sensors.iter().map(|(k, v)| (k.clone(), RigidTransform::from(v))).collect(),
            centers: f.sequences.iter().map(|m| m.iter().map(|(k, c)| (k.clone(), c.map(nalgebra::Vector3::from))).collect()).collect(),
        }
    }
}

pub fn sequence_dir_name(sequence: u32) -> String {
    format!("seq_{sequence:03}")
}

/// Writes the collection and returns the written paths, relative to `dir`.
pub fn write_dataset(dir: &Path, data: &[SequenceData], gt: Option<&GroundTruth>) -> Result<Vec<String>, IoError> {
    let mut written = Vec::new();
    let mut hints = Vec::new();
    for d in data {
        let sub = sequence_dir_name(d.sequence);
        for (id, cloud) in &d.clouds {
            let rel = format!("{sub}/{id}.ply");
            write_cloud(&dir.join(&rel), cloud)?;
            written.push(rel);
        }
        for (id, corners) in &d.corners {
            let rel = format!("{sub}/{id}.corners.json");
            write_json(&dir.join(&rel), &CornerFile { version: SCHEMA_VERSION.into(), sensor: id.clone(), corners: corners.clone() })?;
            written.push(rel);
        }
        hints.extend(d.hints.iter().map(|(id, t)| HintRecord { sequence: d.sequence, sensor: id.clone(), board_pose: PoseRecord::from(t) }));
    }
    if !hints.is_empty() {
        write_json(&dir.join("init_hints.json"), &HintFile { version: SCHEMA_VERSION.into(), hints })?;
        written.push("init_hints.json".into());
    }
    if let Some(gt) = gt {
        write_json(&dir.join("ground_truth.json"), &GroundTruthFile::from(gt))?;
        written.push("ground_truth.json".into());
    }
    Ok(written)
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| IoError::Json(format!("{}: {e}", path_string(path))))
}

fn check_version(found: &str) -> Result<(), IoError> {
    if found != SCHEMA_VERSION {
        return Err(IoError::SchemaVersionMismatch { found: found.into(), expected: SCHEMA_VERSION.into() });
    }
    Ok(())
}

/// Reads every `seq_NNN` directory, picking up the files of configured
/// sensors. Missing files simply mean the sensor recorded nothing.
pub fn read_dataset(dir: &Path, config: &ConfigFile) -> Result<Vec<SequenceData>, IoError> {
    let entries = std::fs::read_dir(dir).map_err(|e| IoError::io(dir, e))?;
    let mut seqs: Vec<(u32, std::path::PathBuf)> = Vec::new();
    for e in entries {
        let e = e.map_err(|e| IoError::io(dir, e))?;
        let name = e.file_name().to_string_lossy().to_string();
        if let Some(n) = name.strip_prefix("seq_").and_then(|n| n.parse().ok()) {
            if e.path().is_dir() {
                seqs.push((n, e.path()));
            }
        }
    }
    seqs.sort();
    let hints: BTreeMap<(u32, String), RigidTransform> = {
        let p = dir.join("init_hints.json");
        if p.exists() {
            let f: HintFile = parse_json(&p)?;
            check_version(&f.version)?;
            f.hints.iter().map(|h| ((h.sequence, h.sensor.clone()), RigidTransform::from(&h.board_pose))).collect()
        } else {
            BTreeMap::new()
        }
    };
    let mut out = Vec::new();
    for (sequence, path) in seqs {
        let mut d = SequenceData { sequence, ..SequenceData::default() };
        for s in &config.sensors {
            match s.kind {
                SensorKind::Lidar => {
                    for ext in ["ply", "csv"] {
                        let p = path.join(format!("{}.{ext}", s.id));
                        if p.exists() {
                            d.clouds.insert(s.id.clone(), read_cloud(&p)?);
                            break;
                        }
                    }
                    if let Some(h) = hints.get(&(sequence, s.id.clone())) {
                        d.hints.insert(s.id.clone(), *h);
                    }
                }
                SensorKind::Camera => {
                    let p = path.join(format!("{}.corners.json", s.id));
                    if p.exists() {
                        let f: CornerFile = parse_json(&p)?;
                        check_version(&f.version)?;
                        d.corners.insert(s.id.clone(), f.corners);
                    }
                }
            }
        }
        out.push(d);
    }
    Ok(out)
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth, IoError> {
    let f: GroundTruthFile = parse_json(&dir.join("ground_truth.json"))?;
    check_version(&f.version)?;
    Ok(GroundTruth::from(&f))
}
