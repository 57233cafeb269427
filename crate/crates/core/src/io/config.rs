//! Run configuration: sensors, target, detection and solver parameters,
//! and the simulated rig.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, IoError};
use crate::geometry::{rotation_from_euler_xyz, Intrinsics, RigidTransform};
use crate::lidar::LidarParams;
use crate::optimizer::SolveParams;
use crate::sensor::{SensorInfo, SensorKind};
use crate::sim::{BoardPlacement, Layout, Mount, NoiseModel, ScanPattern, SimSensor};
use crate::target::TargetSpec;

/// Sensor → reference pose given as translation and XYZ Euler angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EulerPose {
    pub translation: [f64; 3],
    pub euler_xyz_deg: [f64; 3],
}

impl EulerPose {
    pub fn transform(&self) -> RigidTransform {
        let [rx, ry, rz] = self.euler_xyz_deg;
        RigidTransform::new(rotation_from_euler_xyz(rx, ry, rz), self.translation.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub id: String,
    pub kind: SensorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_pose: Option<EulerPose>,
    /// Simulation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mount: Option<Mount>,
    /// Simulation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanPattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub sequences: usize,
    pub noise: NoiseModel,
    pub placement: BoardPlacement,
    pub ground_radius: f64,
    /// Bounds of the perturbation applied to the true board pose to form
    /// the registration starting point, m and degrees.
    pub init_shift: f64,
    pub init_angle_deg: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { sequences: 20, noise: NoiseModel::default(), placement: BoardPlacement::default(), ground_radius: 12.0, init_shift: 0.1, init_angle_deg: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub sensors: Vec<SensorConfig>,
    /// Defaults to the first camera, else the first sensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub lidar: LidarParams,
    #[serde(default)]
    pub solve: SolveParams,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

impl ConfigFile {
    /// Three cameras and two LiDARs on a roof rack, 20 sequences.
    pub fn default_rig() -> Self {
        let layout = Layout::default_rig(2, 3);
        let sensors = layout
            .sensors
            .iter()
            .map(|s| SensorConfig { id: s.id.clone(), kind: s.kind, intrinsics: s.intrinsics, initial_pose: None, mount: Some(s.mount), scan: s.scan })
            .collect();
        ConfigFile {
            sensors,
            reference: None,
            target: TargetSpec::default(),
            // The LiDARs sit about 1.9 m above the ground, so the height
            // crop is expressed in their frame.
            lidar: LidarParams { h_min: -1.5, ..LidarParams::default() },
            solve: SolveParams::default(),
            simulation: SimulationConfig { placement: layout.placement, ground_radius: layout.ground_radius, ..SimulationConfig::default() },
        }
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let c: ConfigFile = serde_json::from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::parse(&read_text(path)?)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let bad = |m: String| Err(IoError::Config(m));
        if self.sensors.is_empty() {
            return bad("no sensors".into());
        }
        let mut ids = BTreeSet::new();
        for s in &self.sensors {
            if s.id.is_empty() {
                return bad("empty sensor id".into());
            }
            if !ids.insert(s.id.as_str()) {
                return bad(format!("duplicate sensor id {}", s.id));
            }
            match (s.kind, &s.intrinsics) {
                (SensorKind::Camera, None) => return bad(format!("camera {} has no intrinsics", s.id)),
                (SensorKind::Lidar, Some(_)) => return bad(format!("lidar {} must not have intrinsics", s.id)),
                (SensorKind::Camera, Some(k)) => k.validate().map_err(|e| IoError::Config(format!("{}: {e}", s.id)))?,
                _ => {}
            }
            if s.scan.is_some() && s.kind == SensorKind::Camera {
                return bad(format!("camera {} has a scan pattern", s.id));
            }
        }
        if let Some(r) = &self.reference {
            if !ids.contains(r.as_str()) {
                return bad(format!("reference {r} is not a configured sensor"));
            }
        }
        self.target.validate().map_err(|e| IoError::Config(e.to_string()))?;
        self.lidar.validate().map_err(|e| IoError::Config(e.to_string()))?;
        if self.solve.max_iter == 0 || !(self.solve.lm_lambda_init > 0.0) || !(self.solve.lidar_residual_weight > 0.0) {
            return bad("solve parameters must be positive".into());
        }
        Ok(())
    }

    pub fn sensor_infos(&self) -> Vec<SensorInfo> {
        self.sensors.iter().map(|s| SensorInfo { id: s.id.clone(), kind: s.kind, intrinsics: s.intrinsics }).collect()
    }

    pub fn reference_id(&self) -> String {
        self.reference
            .clone()
            .or_else(|| self.sensors.iter().find(|s| s.kind == SensorKind::Camera).map(|s| s.id.clone()))
            .unwrap_or_else(|| self.sensors[0].id.clone())
    }

    /// The simulated rig; every sensor needs a mount, LiDARs a scan pattern
    /// (the default one when absent).
    pub fn layout(&self) -> Result<Layout, IoError> {
        let sensors = self
            .sensors
            .iter()
            .map(|s| {
                let mount = s.mount.ok_or_else(|| IoError::Config(format!("sensor {} has no mount for simulation", s.id)))?;
                let scan = (s.kind == SensorKind::Lidar).then(|| s.scan.unwrap_or_default());
                Ok(SimSensor { id: s.id.clone(), kind: s.kind, mount, intrinsics: s.intrinsics, scan })
            })
            .collect::<Result<_, IoError>>()?;
        Ok(Layout { sensors, placement: self.simulation.placement, ground_radius: self.simulation.ground_radius })
    }
}
