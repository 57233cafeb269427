//! Synthetic calibration scenes with exact ground truth.
//!
//! World frame: x forward, y left, z up, ground at `z = 0`. LiDAR frames
//! share that convention; camera frames have z forward, x right, y down.
//! All randomness comes from one seed, split into independent streams per
//! sensor and sequence so a render never depends on the order of others.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CornerObservation;
pub use crate::sensor::SensorKind;
use crate::geometry::{project, rot_x, rot_y, rot_z, Intrinsics, Point3, RigidTransform};
use crate::target::TargetSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("infeasible layout: {0}")]
    InfeasibleLayout(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
}

/// Mounting pose on the vehicle: position plus yaw, pitch and roll about
/// the world axes, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mount {
    pub position: [f64; 3],
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
}

impl Mount {
    fn attitude(&self) -> Matrix3<f64> {
        rot_z(self.yaw_deg.to_radians()) * rot_y(self.pitch_deg.to_radians()) * rot_x(self.roll_deg.to_radians())
    }
}

/// Uniform angular scan grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanPattern {
    pub az_res_deg: f64,
    pub el_res_deg: f64,
    pub az_fov_deg: f64,
    pub el_min_deg: f64,
    pub el_max_deg: f64,
    pub max_range: f64,
}

impl Default for ScanPattern {
    fn default() -> Self {
        Self { az_res_deg: 0.2, el_res_deg: 1.0, az_fov_deg: 120.0, el_min_deg: -15.0, el_max_deg: 15.0, max_range: 50.0 }
    }
}

impl ScanPattern {
    pub fn azimuths(&self) -> Vec<f64> {
        let n = (self.az_fov_deg / self.az_res_deg).round() as i64;
        (0..=n).map(|i| (-0.5 * self.az_fov_deg + i as f64 * self.az_res_deg).to_radians()).collect()
    }

    pub fn elevations(&self) -> Vec<f64> {
        let n = ((self.el_max_deg - self.el_min_deg) / self.el_res_deg).round() as i64;
        (0..=n).map(|i| (self.el_min_deg + i as f64 * self.el_res_deg).to_radians()).collect()
    }

    fn covers(&self, dir: &Vector3<f64>) -> bool {
        let az = dir.y.atan2(dir.x).to_degrees();
        let el = dir.z.atan2(dir.xy().norm()).to_degrees();
        az.abs() <= 0.5 * self.az_fov_deg && el >= self.el_min_deg && el <= self.el_max_deg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSensor {
    pub id: String,
    pub kind: SensorKind,
    pub mount: Mount,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanPattern>,
}

impl SimSensor {
    /// Sensor → world.
    pub fn pose(&self) -> RigidTransform {
        let base = match self.kind {
            SensorKind::Lidar => Matrix3::identity(),
            // camera x → world −y, y → −z, z → +x
            SensorKind::Camera => Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0),
        };
        RigidTransform::new(self.mount.attitude() * base, Vector3::from(self.mount.position))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Range noise, m.
    pub lidar_sigma: f64,
    /// Corner noise, px.
    pub pixel_sigma: f64,
    pub dropout: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { lidar_sigma: 0.0, pixel_sigma: 0.0, dropout: 0.0 }
    }
}

/// Where boards may be placed, relative to the vehicle origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoardPlacement {
    pub distance: [f64; 2],
    pub azimuth_deg: [f64; 2],
    pub height: [f64; 2],
    pub roll_deg: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
}

impl Default for BoardPlacement {
    fn default() -> Self {
        Self { distance: [3.2, 5.0], azimuth_deg: [-75.0, 75.0], height: [1.7, 2.1], roll_deg: 25.0, yaw_deg: 25.0, pitch_deg: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub sensors: Vec<SimSensor>,
    #[serde(default)]
    pub placement: BoardPlacement,
    /// Radius of the ground patch around the vehicle, m.
    #[serde(default = "default_ground_radius")]
    pub ground_radius: f64,
}

fn default_ground_radius() -> f64 {
    12.0
}

pub fn default_intrinsics() -> Intrinsics {
    Intrinsics { fx: 600.0, fy: 600.0, cx: 640.0, cy: 400.0, width: 1280, height: 800 }
}

impl Layout {
    /// Roof rack with cameras at 0°, ±70° and LiDARs at ±30°; extra sensors
    /// are spread evenly in yaw.
    pub fn default_rig(n_lidars: usize, m_cameras: usize) -> Layout {
        let cams = [
            Mount { position: [0.25, 0.0, 1.5], yaw_deg: 0.0, pitch_deg: 3.0, roll_deg: 0.0 },
            Mount { position: [0.15, 0.66, 1.45], yaw_deg: 70.0, pitch_deg: 2.0, roll_deg: 0.5 },
            Mount { position: [0.18, -0.66, 1.42], yaw_deg: -70.0, pitch_deg: 2.5, roll_deg: -0.5 },
        ];
        let lidars = [
            Mount { position: [0.13, 0.62, 1.9], yaw_deg: 30.0, pitch_deg: 0.8, roll_deg: 0.4 },
            Mount { position: [0.11, -0.6, 1.85], yaw_deg: -30.0, pitch_deg: -0.5, roll_deg: 0.6 },
        ];
        let spread = |i: usize, n: usize, fixed: &[Mount]| -> Mount {
            if n <= fixed.len() {
                fixed[i]
            } else {
                let yaw = -70.0 + 140.0 * i as f64 / (n - 1) as f64;
                Mount { position: [0.15, 0.6 * yaw.to_radians().sin(), fixed[0].position[2]], yaw_deg: yaw, pitch_deg: 1.0, roll_deg: 0.0 }
            }
        };
        let mut sensors = Vec::new();
        for i in 0..m_cameras {
            sensors.push(SimSensor { id: format!("cam{i}"), kind: SensorKind::Camera, mount: spread(i, m_cameras, &cams), intrinsics: Some(default_intrinsics()), scan: None });
        }
        for i in 0..n_lidars {
            sensors.push(SimSensor { id: format!("lidar{i}"), kind: SensorKind::Lidar, mount: spread(i, n_lidars, &lidars), intrinsics: None, scan: Some(ScanPattern::default()) });
        }
        Layout { sensors, placement: BoardPlacement::default(), ground_radius: default_ground_radius() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.sensors.len() < 2 {
            return Err(SimError::InvalidLayout("need at least two sensors".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.sensors {
            if !seen.insert(&s.id) {
                return Err(SimError::InvalidLayout(format!("duplicate sensor id {}", s.id)));
            }
            match s.kind {
                SensorKind::Camera if s.intrinsics.is_none() => return Err(SimError::InvalidLayout(format!("camera {} has no intrinsics", s.id))),
                SensorKind::Lidar if s.scan.is_none() => return Err(SimError::InvalidLayout(format!("lidar {} has no scan pattern", s.id))),
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub layout: Layout,
    /// Board → world, one per sequence.
    pub boards: Vec<RigidTransform>,
    pub spec: TargetSpec,
    pub noise: NoiseModel,
    pub seed: u64,
}

const LAYOUT_STREAM: u64 = 0;
const HINT_STREAM_BASE: u64 = 1 << 40;
const MAX_PLACEMENT_TRIES: usize = 2000;
/// Board returns a LiDAR needs before the board counts as visible.
pub const MIN_LIDAR_RETURNS: usize = 300;
/// Fraction of corners a camera must see before the board counts as visible.
pub const MIN_CORNER_FRACTION: f64 = 0.5;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn render_stream(sensor: usize, sequence: usize) -> u64 {
    1 + ((sensor as u64) << 20) + sequence as u64
}

/// Board → world for a board at `position` facing the vehicle origin, then
/// turned by yaw, pitch and roll in its own frame.
pub fn facing_board_pose(position: Vector3<f64>, yaw: f64, pitch: f64, roll: f64) -> RigidTransform {
    let z = Vector3::new(-position.x, -position.y, 0.0).normalize();
    let y = Vector3::z();
    let x = y.cross(&z);
    let base = Matrix3::from_columns(&[x, y, z]);
    RigidTransform::new(base * rot_y(yaw) * rot_x(pitch) * rot_z(roll), position)
}

pub fn make_scene(layout: &Layout, sequences: usize, spec: &TargetSpec, noise: &NoiseModel, seed: u64) -> Result<Scene, SimError> {
    layout.validate()?;
    spec.validate().map_err(|e| SimError::InvalidLayout(e.to_string()))?;
    let mut rng = stream_rng(seed, LAYOUT_STREAM);
    let pl = &layout.placement;
    let mut scene = Scene { layout: layout.clone(), boards: Vec::with_capacity(sequences), spec: spec.clone(), noise: *noise, seed };
    for k in 0..sequences {
        // Sweep the azimuth range across sequences for even coverage.
        let span = pl.azimuth_deg[1] - pl.azimuth_deg[0];
        let slot = span / sequences.max(1) as f64;
        let mut placed = None;
        for attempt in 0..MAX_PLACEMENT_TRIES {
            let az = if attempt < MAX_PLACEMENT_TRIES / 2 {
                pl.azimuth_deg[0] + slot * (k as f64 + rng.random_range(0.0..1.0))
            } else {
                rng.random_range(pl.azimuth_deg[0]..=pl.azimuth_deg[1])
            };
            let dist = rng.random_range(pl.distance[0]..=pl.distance[1]);
            let h = rng.random_range(pl.height[0]..=pl.height[1]);
            let az = az.to_radians();
            let pose = facing_board_pose(
                Vector3::new(dist * az.cos(), dist * az.sin(), h),
                rng.random_range(-pl.yaw_deg..=pl.yaw_deg).to_radians(),
                rng.random_range(-pl.pitch_deg..=pl.pitch_deg).to_radians(),
                rng.random_range(-pl.roll_deg..=pl.roll_deg).to_radians(),
            );
            if visible_sensors(layout, spec, &pose).len() >= 2 {
                placed = Some(pose);
                break;
            }
        }
        match placed {
            Some(p) => scene.boards.push(p),
            None => return Err(SimError::InfeasibleLayout(format!("no placement for sequence {k} is seen by two sensors"))),
        }
    }
    Ok(scene)
}

/// Builds a scene with explicit board poses, checking that each is seen by
/// at least two sensors.
pub fn scene_with_boards(layout: &Layout, boards: Vec<RigidTransform>, spec: &TargetSpec, noise: &NoiseModel, seed: u64) -> Result<Scene, SimError> {
    layout.validate()?;
    for (k, b) in boards.iter().enumerate() {
        if visible_sensors(layout, spec, b).len() < 2 {
            return Err(SimError::InfeasibleLayout(format!("board of sequence {k} is seen by fewer than two sensors")));
        }
    }
    Ok(Scene { layout: layout.clone(), boards, spec: spec.clone(), noise: *noise, seed })
}

fn board_outline(spec: &TargetSpec) -> [Point3; 4] {
    let (w, h) = (0.5 * spec.board_width, 0.5 * spec.board_height);
    [Point3::new(-w, h, 0.0), Point3::new(w, h, 0.0), Point3::new(w, -h, 0.0), Point3::new(-w, -h, 0.0)]
}

/// Indices of sensors that would detect a board at `board` (board → world).
pub fn visible_sensors(layout: &Layout, spec: &TargetSpec, board: &RigidTransform) -> Vec<usize> {
    (0..layout.sensors.len()).filter(|&i| sensor_sees(layout, i, spec, board)).collect()
}

fn sensor_sees(layout: &Layout, idx: usize, spec: &TargetSpec, board: &RigidTransform) -> bool {
    let s = &layout.sensors[idx];
    let to_sensor = s.pose().inverse().compose(board);
    match s.kind {
        SensorKind::Camera => {
            let k = s.intrinsics.as_ref().expect("validated");
            // Printed face must point at the camera.
            if to_sensor.rotation.column(2).dot(&to_sensor.translation) >= 0.0 {
                return false;
            }
            let inside = |p: &Point3| project(k, &to_sensor.transform_point(p)).map(|u| k.contains(&u)).unwrap_or(false);
            let corners = spec.checker_corners_board();
            let seen = corners.iter().filter(|(_, p)| inside(p)).count();
            seen as f64 >= MIN_CORNER_FRACTION * corners.len() as f64 && spec.circle_centers_board().iter().all(inside)
        }
        SensorKind::Lidar => {
            let scan = s.scan.as_ref().expect("validated");
            let outline_in_view = board_outline(spec).iter().all(|p| {
                let q = to_sensor.transform_point(p);
                q.norm() < scan.max_range && scan.covers(&q)
            });
            outline_in_view && count_board_returns(scan, spec, &to_sensor) >= MIN_LIDAR_RETURNS
        }
    }
}

/// Ray parameter of the board hit, if the ray passes through solid board.
fn board_hit(dir: &Vector3<f64>, spec: &TargetSpec, board: &RigidTransform) -> Option<f64> {
    let n = board.rotation.column(2).into_owned();
    let denom = n.dot(dir);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = n.dot(&board.translation) / denom;
    if t <= 0.0 {
        return None;
    }
    let local = board.rotation.transpose() * (dir * t - board.translation);
    spec.is_solid(local.x, local.y).then_some(t)
}

fn ground_hit(origin: &Vector3<f64>, dir_world: &Vector3<f64>, ground_radius: f64) -> Option<f64> {
    if dir_world.z >= -1e-12 {
        return None;
    }
    let t = -origin.z / dir_world.z;
    let p = origin + dir_world * t;
    (t > 0.0 && p.xy().norm() <= ground_radius).then_some(t)
}

fn ray(az: f64, el: f64) -> Vector3<f64> {
    Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// Board returns of an ideal scan, noise-free; `board` is board → sensor.
pub fn count_board_returns(scan: &ScanPattern, spec: &TargetSpec, board: &RigidTransform) -> usize {
    let mut n = 0;
    for el in scan.elevations() {
        for az in scan.azimuths() {
            if board_hit(&ray(az, el), spec, board).is_some_and(|t| t <= scan.max_range) {
                n += 1;
            }
        }
    }
    n
}

impl Scene {
    pub fn sequences(&self) -> usize {
        self.boards.len()
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.layout.sensors.iter().position(|s| s.id == id)
    }

    /// Board → sensor for one sequence.
    pub fn board_in_sensor(&self, sensor: usize, sequence: usize) -> RigidTransform {
        self.layout.sensors[sensor].pose().inverse().compose(&self.boards[sequence])
    }

    pub fn sees(&self, sensor: usize, sequence: usize) -> bool {
        sensor_sees(&self.layout, sensor, &self.spec, &self.boards[sequence])
    }

    /// A perturbed board pose usable as a registration starting point.
    pub fn init_hint(&self, sensor: usize, sequence: usize, max_shift: f64, max_angle_deg: f64) -> RigidTransform {
        let mut rng = stream_rng(self.seed, HINT_STREAM_BASE + render_stream(sensor, sequence));
        let unit = |rng: &mut ChaCha8Rng| loop {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break v / n;
            }
        };
        let shift = unit(&mut rng) * rng.random_range(0.0..=max_shift);
        let axis = unit(&mut rng);
        let angle = rng.random_range(0.0..=max_angle_deg).to_radians();
        let delta = RigidTransform::new(crate::geometry::so3_exp(&(axis * angle)), shift);
        let truth = self.board_in_sensor(sensor, sequence);
        // Perturb about the board center so the shift bound is literal.
        RigidTransform::new(delta.rotation * truth.rotation, truth.translation + delta.translation)
    }
}

/// Ray-cast LiDAR returns in the sensor frame.
pub fn render_lidar(scene: &Scene, sensor: usize, sequence: usize) -> Vec<Point3> {
    let s = &scene.layout.sensors[sensor];
    assert_eq!(s.kind, SensorKind::Lidar, "render_lidar needs a LiDAR");
    let scan = s.scan.as_ref().expect("validated");
    let pose = s.pose();
    let board = scene.board_in_sensor(sensor, sequence);
    let mut rng = stream_rng(scene.seed, render_stream(sensor, sequence));
    let noise = (scene.noise.lidar_sigma > 0.0).then(|| Normal::new(0.0, scene.noise.lidar_sigma).expect("finite sigma"));
    let mut out = Vec::new();
    for el in scan.elevations() {
        for az in scan.azimuths() {
            let d = ray(az, el);
            let tb = board_hit(&d, &scene.spec, &board);
            let tg = ground_hit(&pose.translation, &(pose.rotation * d), scene.layout.ground_radius);
            let t = match (tb, tg) {
                (Some(a), Some(b)) => a.min(b),
                (a, b) => match a.or(b) {
                    Some(t) => t,
                    None => continue,
                },
            };
            if t > scan.max_range {
                continue;
            }
            let t = t + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
            out.push(d * t);
        }
    }
    out
}

/// Projected checker corners; corners outside the image or dropped out are
/// omitted.
pub fn render_camera(scene: &Scene, sensor: usize, sequence: usize) -> Vec<CornerObservation> {
    let s = &scene.layout.sensors[sensor];
    assert_eq!(s.kind, SensorKind::Camera, "render_camera needs a camera");
    let k = s.intrinsics.as_ref().expect("validated");
    let board = scene.board_in_sensor(sensor, sequence);
    let mut rng = stream_rng(scene.seed, render_stream(sensor, sequence));
    if board.rotation.column(2).dot(&board.translation) >= 0.0 {
        return Vec::new();
    }
    let noise = (scene.noise.pixel_sigma > 0.0).then(|| Normal::new(0.0, scene.noise.pixel_sigma).expect("finite sigma"));
    let mut out = Vec::new();
    for (id, p) in scene.spec.checker_corners_board() {
        let Ok(u) = project(k, &board.transform_point(&p)) else { continue };
        // Draw noise and dropout for every corner so streams stay aligned.
        let (nu, nv) = match &noise {
            Some(n) => (n.sample(&mut rng), n.sample(&mut rng)),
            None => (0.0, 0.0),
        };
        let dropped = scene.noise.dropout > 0.0 && rng.random_bool(scene.noise.dropout.clamp(0.0, 1.0));
        if dropped || !k.contains(&u) {
            continue;
        }
        out.push(CornerObservation { id, pixel: [u.x + nu, u.y + nv] });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Sensor → world, keyed by sensor id.
    pub poses: BTreeMap<String, RigidTransform>,
    /// Hole centers per sequence, per sensor that sees the board, in the
    /// sensor frame.
    pub centers: Vec<BTreeMap<String, [Point3; 4]>>,
}

impl GroundTruth {
    /// `T_a^b`: maps frame `a` into frame `b`.
    pub fn relative(&self, a: &str, b: &str) -> Option<RigidTransform> {
        Some(self.poses.get(b)?.inverse().compose(self.poses.get(a)?))
    }
}

pub fn ground_truth(scene: &Scene) -> GroundTruth {
    let poses = scene.layout.sensors.iter().map(|s| (s.id.clone(), s.pose())).collect();
    let board_centers = scene.spec.circle_centers_board();
    let centers = (0..scene.sequences())
        .map(|q| {
            (0..scene.layout.sensors.len())
                .filter(|&i| scene.sees(i, q))
                .map(|i| {
                    let t = scene.board_in_sensor(i, q);
                    (scene.layout.sensors[i].id.clone(), board_centers.map(|c| t.transform_point(&c)))
                })
                .collect()
        })
        .collect();
    GroundTruth { poses, centers }
}
