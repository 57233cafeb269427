//! Calibration report: JSON for machines, a fixed-width text rendering for
//! people. Translations print with 4 decimals, angles with 3.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, to_json, write_atomic, IoError, SCHEMA_VERSION};
use crate::geometry::{euler_xyz_from_rotation, RigidTransform};
use crate::lm::Termination;
use crate::optimizer::{CalibrationProblem, CalibrationResult, ChainDeviation, SequenceReport};
use crate::sensor::{display_names, SensorKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPose {
    pub id: String,
    pub name: String,
    pub kind: SensorKind,
    pub translation: [f64; 3],
    pub euler_xyz_deg: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEntry {
    /// `joint` for the solved pose set, `pairwise` for independent pair
    /// estimates.
    pub mode: String,
    #[serde(flatten)]
    pub deviation: ChainDeviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub termination: Termination,
    pub behind_camera: usize,
    /// Pixel residual weight per camera id.
    pub camera_weights: BTreeMap<String, f64>,
    pub lidar_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub version: String,
    pub reference: String,
    pub sensors: Vec<SensorPose>,
    pub sequences: Vec<SequenceReport>,
    pub consistency: Vec<ConsistencyEntry>,
    pub solver: SolverSummary,
    pub warnings: Vec<String>,
}

impl ReportFile {
    pub fn build(p: &CalibrationProblem, r: &CalibrationResult, sequences: Vec<SequenceReport>, consistency: Vec<ConsistencyEntry>, warnings: Vec<String>) -> Self {
        let names = display_names(&r.sensors);
        let mut order: Vec<usize> = (0..r.sensors.len()).collect();
        order.sort_by_key(|&i| names[i][1..].parse::<usize>().unwrap_or(usize::MAX));
        let sensors = order
            .into_iter()
            .map(|i| {
                let t = &r.poses[i];
                // `+ 0.0` folds negative zero so identity poses serialize as 0.0.
                let translation = t.translation.map(|x| x + 0.0).into();
                let euler_xyz_deg = euler_xyz_from_rotation(&t.rotation).degrees().map(|x| x + 0.0);
                SensorPose { id: r.sensors[i].id.clone(), name: names[i].clone(), kind: r.sensors[i].kind, translation, euler_xyz_deg }
            })
            .collect();
        let camera_weights = r.sensors.iter().zip(&r.camera_weights).filter(|(s, _)| s.kind == SensorKind::Camera).map(|(s, &w)| (s.id.clone(), w)).collect();
        ReportFile {
            version: SCHEMA_VERSION.into(),
            reference: p.sensors[p.reference].id.clone(),
            sensors,
            sequences,
            consistency,
            solver: SolverSummary {
                initial_cost: r.initial_cost,
                final_cost: r.final_cost,
                iterations: r.iterations,
                gradient_norm: r.gradient_norm,
                termination: r.termination,
                behind_camera: r.behind_camera,
                camera_weights,
                lidar_weight: r.lidar_weight,
            },
            warnings,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = |s: &mut String, line: String| {
            s.push_str(&line);
            s.push('\n');
        };
        w(&mut s, format!("Extrinsic calibration, reference frame {}", self.reference));
        w(&mut s, String::new());
        w(&mut s, format!("{:<4} {:<10} {}", "", "Sensor", "Translation (x, y, z) / Euler Angles (XYZ in degrees)"));
        for p in &self.sensors {
            w(&mut s, format!("{:<4} {:<10} {}", p.name, p.id, format_pose_row(p.translation, p.euler_xyz_deg)));
        }
        w(&mut s, String::new());
        w(&mut s, "Reprojection Errors (m)".into());
        for seq in &self.sequences {
            w(&mut s, format!("Sequence {}", seq.sequence));
            for pair in &seq.pairs {
                w(&mut s, format!("  {}", pair.row()));
            }
        }
        if !self.consistency.is_empty() {
            w(&mut s, String::new());
            w(&mut s, "Consistency".into());
            for c in &self.consistency {
                w(&mut s, format!("  {} {}: rotation {:.3e} deg, translation {:.3e} m", c.mode, c.deviation.chain.join(" -> "), c.deviation.rotation_deg, c.deviation.translation_m));
            }
        }
        w(&mut s, String::new());
        let sv = &self.solver;
        w(&mut s, format!("Solver: {:?} after {} iterations, cost {:.6e} -> {:.6e}, gradient {:.3e}", sv.termination, sv.iterations, sv.initial_cost, sv.final_cost, sv.gradient_norm));
        let mut weights: Vec<String> = sv.camera_weights.iter().map(|(id, w)| format!("{id} {w:.6e}/px")).collect();
        weights.push(format!("lidar {:.6e}/m", sv.lidar_weight));
        w(&mut s, format!("Weights: {}", weights.join(", ")));
        if sv.behind_camera > 0 {
            w(&mut s, format!("Warning: {} residual blocks projected behind a camera", sv.behind_camera));
        }
        for warning in &self.warnings {
            w(&mut s, format!("Warning: {warning}"));
        }
        s
    }
}

/// Fixed-point rendering that never prints a negative zero.
fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn format_pose_row(t: [f64; 3], euler_deg: [f64; 3]) -> String {
    format!(
        "({}, {}, {}) / ({}, {}, {})",
        fixed(t[0], 4),
        fixed(t[1], 4),
        fixed(t[2], 4),
        fixed(euler_deg[0], 3),
        fixed(euler_deg[1], 3),
        fixed(euler_deg[2], 3)
    )
}

pub fn format_pose(t: &RigidTransform) -> String {
    format_pose_row(t.translation.into(), euler_xyz_from_rotation(&t.rotation).degrees())
}

/// Inverse of [`format_pose_row`], to the printed precision.
pub fn parse_pose_row(row: &str) -> Option<([f64; 3], [f64; 3])> {
    let (a, b) = row.split_once(" / ")?;
    let triple = |s: &str| -> Option<[f64; 3]> {
        let v: Vec<f64> = s.trim().strip_prefix('(')?.strip_suffix(')')?.split(',').map(|x| x.trim().parse().ok()).collect::<Option<_>>()?;
        v.try_into().ok()
    };
    Some((triple(a)?, triple(b)?))
}

/// Writes `<stem>.json` and `<stem>.txt` for a report path ending in `.json`.
pub fn write_report(report: &ReportFile, json_path: &Path) -> Result<(), IoError> {
    write_atomic(json_path, to_json(report).as_bytes())?;
    write_atomic(&json_path.with_extension("txt"), report.to_text().as_bytes())
}

pub fn read_report(path: &Path) -> Result<ReportFile, IoError> {
    let r: ReportFile = serde_json::from_str(&read_text(path)?).map_err(|e| IoError::Json(e.to_string()))?;
    if r.version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersionMismatch { found: r.version, expected: SCHEMA_VERSION.into() });
    }
    Ok(r)
}
