//! Detection records: one board detection per sequence and sensor.
//!
//! ```json
//! {"version": "v1", "records": [{"sequence": 0, "sensor": "cam0", "kind": "camera", ...}]}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::{read_text, to_json, write_atomic, IoError, PoseRecord, SCHEMA_VERSION};
use crate::camera::CameraDetection;
use crate::geometry::{Pixel, Point3, RigidTransform};
use crate::lidar::{LidarDetection, Plane};
use crate::optimizer::{Observation, SequenceObservations};
use crate::sensor::{SensorInfo, SensorKind};

#[derive(Debug, Clone, PartialEq)]
pub enum DetectionPayload {
    Lidar(LidarDetection),
    Camera(CameraDetection),
}

impl DetectionPayload {
    pub fn kind(&self) -> SensorKind {
        match self {
            DetectionPayload::Lidar(_) => SensorKind::Lidar,
            DetectionPayload::Camera(_) => SensorKind::Camera,
        }
    }

    pub fn observation(&self) -> Observation {
        match self {
            DetectionPayload::Lidar(d) => Observation::Lidar { centers: d.centers },
            DetectionPayload::Camera(d) => Observation::Camera { centers_3d: d.centers_3d, centers_2d: d.centers_2d },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub sequence: u32,
    pub sensor: String,
    pub payload: DetectionPayload,
}

#[derive(Serialize)]
struct FileOut<'a> {
    version: &'static str,
    records: Vec<RecordOut<'a>>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    sequence: u32,
    sensor: &'a str,
    kind: SensorKind,
    board_pose: PoseRecord,
    centers: [[f64; 3]; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    centers_2d: Option<[[f64; 2]; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reprojection_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    corners_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fitness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plane: Option<[f64; 4]>,
}

fn arr3(p: &Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

pub fn format_detections(records: &[DetectionRecord]) -> String {
    let records = records
        .iter()
        .map(|r| {
            let mut out = RecordOut {
                sequence: r.sequence,
                sensor: &r.sensor,
                kind: r.payload.kind(),
                board_pose: PoseRecord::from(&RigidTransform::identity()),
                centers: [[0.0; 3]; 4],
                centers_2d: None,
                reprojection_error: None,
                corners_used: None,
                fitness: None,
                plane: None,
            };
            match &r.payload {
                DetectionPayload::Lidar(d) => {
                    out.board_pose = PoseRecord::from(&d.pose);
                    out.centers = d.centers.map(|c| arr3(&c));
                    out.fitness = Some(d.fitness);
                    out.plane = Some([d.plane.a, d.plane.b, d.plane.c, d.plane.d]);
                }
                DetectionPayload::Camera(d) => {
                    out.board_pose = PoseRecord::from(&d.pose);
                    out.centers = d.centers_3d.map(|c| arr3(&c));
                    out.centers_2d = Some(d.centers_2d.map(|u| [u.x, u.y]));
                    out.reprojection_error = Some(d.reprojection_error);
                    out.corners_used = Some(d.corners_used);
                }
            }
            out
        })
        .collect();
    to_json(&FileOut { version: SCHEMA_VERSION, records })
}

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<(), IoError> {
    write_atomic(path, format_detections(records).as_bytes())
}

pub fn read_detections(path: &Path, strict: bool) -> Result<Vec<DetectionRecord>, IoError> {
    parse_detections(&read_text(path)?, strict)
}

fn json_err(e: serde_json::Error) -> IoError {
    IoError::Json(e.to_string())
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    ctx: String,
}

impl Fields<'_> {
    fn get<T: DeserializeOwned>(&self, name: &str) -> Result<T, IoError> {
        let v = self.obj.get(name).ok_or_else(|| IoError::MissingField(format!("{}.{name}", self.ctx)))?;
        serde_json::from_value(v.clone()).map_err(|e| IoError::Json(format!("{}.{name}: {e}", self.ctx)))
    }

    fn four<T: DeserializeOwned + Copy>(&self, name: &str) -> Result<[T; 4], IoError> {
        let v: Vec<T> = self.get(name)?;
        match <[T; 4]>::try_from(v) {
            Ok(a) => Ok(a),
            Err(v) if v.len() < 4 => Err(IoError::MissingField(format!("{}.{name}[{}]", self.ctx, v.len()))),
            Err(v) => Err(IoError::Json(format!("{}.{name}: expected 4 entries, found {}", self.ctx, v.len()))),
        }
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<(), IoError> {
        match self.obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(IoError::UnknownField(format!("{}.{k}", self.ctx))),
            None => Ok(()),
        }
    }
}

const COMMON: [&str; 5] = ["sequence", "sensor", "kind", "board_pose", "centers"];
const LIDAR_ONLY: [&str; 2] = ["fitness", "plane"];
const CAMERA_ONLY: [&str; 3] = ["centers_2d", "reprojection_error", "corners_used"];

pub fn parse_detections(text: &str, strict: bool) -> Result<Vec<DetectionRecord>, IoError> {
    let root: Value = serde_json::from_str(text).map_err(json_err)?;
    let obj = root.as_object().ok_or_else(|| IoError::Json("top level must be an object".into()))?;
    let top = Fields { obj, ctx: "$".into() };
    let version: String = top.get("version")?;
    if version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersionMismatch { found: version, expected: SCHEMA_VERSION.into() });
    }
    if strict {
        top.reject_unknown(&["version", "records"])?;
    }
    let records: Vec<Value> = top.get("records")?;
    records
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let obj = v.as_object().ok_or_else(|| IoError::Json(format!("records[{i}] must be an object")))?;
            let f = Fields { obj, ctx: format!("records[{i}]") };
            let kind: SensorKind = f.get("kind")?;
            if strict {
                let extra: &[&str] = if kind == SensorKind::Lidar { &LIDAR_ONLY } else { &CAMERA_ONLY };
                let allowed: Vec<&str> = COMMON.iter().chain(extra).copied().collect();
                f.reject_unknown(&allowed)?;
            }
            let pose = RigidTransform::from(&f.get::<PoseRecord>("board_pose")?);
            let centers = f.four::<[f64; 3]>("centers")?.map(Point3::from);
            let payload = match kind {
                SensorKind::Lidar => {
                    let [a, b, c, d]: [f64; 4] = f.get("plane")?;
                    DetectionPayload::Lidar(LidarDetection { pose, centers, fitness: f.get("fitness")?, plane: Plane { a, b, c, d } })
                }
                SensorKind::Camera => DetectionPayload::Camera(CameraDetection {
                    pose,
                    centers_3d: centers,
                    centers_2d: f.four::<[f64; 2]>("centers_2d")?.map(Pixel::from),
                    reprojection_error: f.get("reprojection_error")?,
                    corners_used: f.get("corners_used")?,
                }),
            };
            Ok(DetectionRecord { sequence: f.get("sequence")?, sensor: f.get("sensor")?, payload })
        })
        .collect()
}

/// Groups records by sequence for the optimizer. Sensor ids must be
/// configured and of the recorded kind; a sensor may appear once per
/// sequence.
pub fn observations_from_records(records: &[DetectionRecord], sensors: &[SensorInfo]) -> Result<Vec<SequenceObservations>, IoError> {
    let mut by_seq: BTreeMap<u32, BTreeMap<usize, Observation>> = BTreeMap::new();
    for r in records {
        let i = sensors.iter().position(|s| s.id == r.sensor).ok_or_else(|| IoError::Config(format!("detection for unknown sensor {}", r.sensor)))?;
        if sensors[i].kind != r.payload.kind() {
            return Err(IoError::Config(format!("sensor {} is not a {:?}", r.sensor, r.payload.kind())));
        }
        if by_seq.entry(r.sequence).or_default().insert(i, r.payload.observation()).is_some() {
            return Err(IoError::Config(format!("sensor {} detected twice in sequence {}", r.sensor, r.sequence)));
        }
    }
    Ok(by_seq.into_iter().map(|(sequence, observations)| SequenceObservations { sequence, observations }).collect())
}
