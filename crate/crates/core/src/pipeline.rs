//! End-to-end runs shared by the command line and the tests: simulate a
//! collection, detect the board in every recording, calibrate.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::camera::{detect_target_camera, CornerObservation};
use crate::geometry::RigidTransform;
use crate::io::config::ConfigFile;
use crate::io::detections::{observations_from_records, DetectionPayload, DetectionRecord};
use crate::io::report::{ConsistencyEntry, ReportFile};
use crate::io::IoError;
use crate::lidar::{auto_init, detect_target_lidar, PointCloud};
use crate::optimizer::{self, CalibrationProblem, CalibrationResult, OptimizerError};
use crate::sensor::{display_names, SensorKind};
use crate::sim::{self, GroundTruth, Scene, SimError};

/// Everything recorded in one sequence, keyed by sensor id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceData {
    pub sequence: u32,
    pub clouds: BTreeMap<String, PointCloud>,
    pub corners: BTreeMap<String, Vec<CornerObservation>>,
    /// Rough board → LiDAR poses used to start registration.
    pub hints: BTreeMap<String, RigidTransform>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("no detection succeeded")]
    NoDetections,
}

impl PipelineError {
    /// Process exit code for the command line.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io(_) | PipelineError::Sim(SimError::InvalidLayout(_)) => 2,
            PipelineError::Sim(SimError::InfeasibleLayout(_)) => 3,
            PipelineError::NoDetections => 4,
            PipelineError::Optimizer(e) => match e {
                OptimizerError::DisconnectedGraph(_) | OptimizerError::NoSequences | OptimizerError::NoReferenceObservations(_) => 5,
                OptimizerError::UnknownSensor(_) | OptimizerError::MissingIntrinsics(_) => 2,
                OptimizerError::NotConverged { .. } | OptimizerError::SingularNormalEquations(_) | OptimizerError::DegenerateCenters { .. } => 6,
            },
        }
    }
}

/// Renders every sensor in every sequence. LiDAR clouds are recorded even
/// when the board is out of view, as a real collection would be.
pub fn simulate(config: &ConfigFile, seed: u64) -> Result<(Scene, Vec<SequenceData>), PipelineError> {
    let layout = config.layout()?;
    let sc = &config.simulation;
    let scene = sim::make_scene(&layout, sc.sequences, &config.target, &sc.noise, seed)?;
    let data = (0..scene.sequences())
        .map(|q| {
            let mut d = SequenceData { sequence: q as u32, ..SequenceData::default() };
            for (i, s) in scene.layout.sensors.iter().enumerate() {
                match s.kind {
                    SensorKind::Lidar => {
                        d.clouds.insert(s.id.clone(), sim::render_lidar(&scene, i, q));
                        d.hints.insert(s.id.clone(), scene.init_hint(i, q, sc.init_shift, sc.init_angle_deg));
                    }
                    SensorKind::Camera => {
                        let c = sim::render_camera(&scene, i, q);
                        if !c.is_empty() {
                            d.corners.insert(s.id.clone(), c);
                        }
                    }
                }
            }
            d
        })
        .collect();
    Ok((scene, data))
}

/// A recording in which the board was not found.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFailure {
    pub sequence: u32,
    pub sensor: String,
    pub message: String,
}

/// Runs the camera and LiDAR detectors on every recording of a configured
/// sensor. Records come out ordered by sequence, then configuration order.
pub fn detect(config: &ConfigFile, data: &[SequenceData]) -> (Vec<DetectionRecord>, Vec<DetectionFailure>) {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for d in data {
        for s in &config.sensors {
            let outcome = match s.kind {
                SensorKind::Lidar => d.clouds.get(&s.id).map(|cloud| {
                    let init = match d.hints.get(&s.id) {
                        Some(h) => Ok(*h),
                        None => auto_init(cloud, &config.lidar),
                    };
                    init.and_then(|t| detect_target_lidar(cloud, &config.target, &t, &config.lidar)).map(DetectionPayload::Lidar).map_err(|e| e.to_string())
                }),
                SensorKind::Camera => d.corners.get(&s.id).map(|corners| {
                    let k = s.intrinsics.as_ref().expect("validated config");
                    detect_target_camera(corners, &config.target, k).map(DetectionPayload::Camera).map_err(|e| e.to_string())
                }),
            };
            match outcome {
                Some(Ok(payload)) => records.push(DetectionRecord { sequence: d.sequence, sensor: s.id.clone(), payload }),
                Some(Err(message)) => {
                    log::warn!("sequence {} {}: {message}", d.sequence, s.id);
                    failures.push(DetectionFailure { sequence: d.sequence, sensor: s.id.clone(), message });
                }
                None => {}
            }
        }
    }
    (records, failures)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// The problem after circle ordering was resolved.
    pub problem: CalibrationProblem,
    pub result: CalibrationResult,
    pub report: ReportFile,
}

/// Resolves a sensor given by id or by report name (`S1`, `S2`, …).
pub fn resolve_sensor(config: &ConfigFile, name: &str) -> Option<String> {
    if config.sensors.iter().any(|s| s.id == name) {
        return Some(name.to_string());
    }
    let infos = config.sensor_infos();
    display_names(&infos).iter().position(|n| n == name).map(|i| infos[i].id.clone())
}

/// Loop through every sensor in report order and back to the first.
pub fn full_chain(p: &CalibrationProblem) -> Vec<String> {
    let names = display_names(&p.sensors);
    let mut idx: Vec<usize> = (0..p.sensors.len()).collect();
    idx.sort_by_key(|&i| names[i][1..].parse::<usize>().unwrap_or(usize::MAX));
    let mut chain: Vec<String> = idx.iter().map(|&i| p.sensors[i].id.clone()).collect();
    chain.push(chain[0].clone());
    chain
}

/// Starting poses from the configuration when every sensor has one,
/// re-expressed relative to the reference.
fn configured_start(config: &ConfigFile, p: &CalibrationProblem) -> Option<Vec<RigidTransform>> {
    let mounted: Vec<RigidTransform> = config.sensors.iter().map(|s| s.initial_pose.map(|e| e.transform())).collect::<Option<_>>()?;
    let to_reference = mounted[p.reference].inverse();
    Some(mounted.iter().enumerate().map(|(i, t)| if i == p.reference { RigidTransform::identity() } else { to_reference.compose(t) }).collect())
}

pub fn calibrate(config: &ConfigFile, records: &[DetectionRecord], reference: &str, pairwise: bool) -> Result<Calibration, PipelineError> {
    let sensors = config.sensor_infos();
    let obs = observations_from_records(records, &sensors)?;
    let problem = optimizer::build_problem(sensors, obs, reference)?;
    let start = match configured_start(config, &problem) {
        Some(v) => v,
        None => optimizer::initial_guess(&problem)?,
    };
    let resolved = optimizer::resolve_circle_ordering(&problem, &start);
    let start = match configured_start(config, &resolved) {
        Some(v) => v,
        None => optimizer::initial_guess(&resolved)?,
    };
    let result = optimizer::solve(&resolved, &start, &config.solve)?;
    let chain = full_chain(&resolved);
    let mut consistency = vec![ConsistencyEntry { mode: "joint".into(), deviation: optimizer::consistency_check(&result, &chain)? }];
    if pairwise {
        consistency.push(ConsistencyEntry { mode: "pairwise".into(), deviation: optimizer::consistency_check_pairwise(&resolved, &chain)? });
    }
    let sequences = optimizer::reprojection_report(&result, &resolved);
    let report = ReportFile::build(&resolved, &result, sequences, consistency, resolved.warnings.clone());
    Ok(Calibration { problem: resolved, result, report })
}

/// Largest translation (m) and rotation (rad) error of the solved poses
/// against ground truth, both expressed relative to the reference sensor.
pub fn pose_errors(result: &CalibrationResult, gt: &GroundTruth) -> Vec<(String, f64, f64)> {
    let reference = &result.sensors[result.reference].id;
    result
        .sensors
        .iter()
        .zip(&result.poses)
        .map(|(s, t)| {
            let truth = gt.relative(&s.id, reference).expect("sensor in ground truth");
            let e = truth.inverse().compose(t);
            (s.id.clone(), e.translation.norm(), e.rotation_angle())
        })
        .collect()
}
