//! Sensor identities shared by the simulator, the optimizer and the file
//! formats.

use serde::{Deserialize, Serialize};

use crate::geometry::Intrinsics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Camera,
    Lidar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorInfo {
    pub id: String,
    pub kind: SensorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
}

/// Report names `S1…`: cameras first in list order, then LiDARs.
pub fn display_names(sensors: &[SensorInfo]) -> Vec<String> {
    let mut names = vec![String::new(); sensors.len()];
    let order = sensors
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == SensorKind::Camera)
        .chain(sensors.iter().enumerate().filter(|(_, s)| s.kind == SensorKind::Lidar));
    for (n, (i, _)) in order.enumerate() {
        names[i] = format!("S{}", n + 1);
    }
    names
}
