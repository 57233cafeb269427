#![allow(dead_code)]

use std::collections::BTreeMap;

use extcal::geometry::{project, Point3, RigidTransform};
use extcal::io::config::ConfigFile;
use extcal::optimizer::{Observation, SequenceObservations};
use extcal::sensor::{SensorInfo, SensorKind};
use extcal::sim::{make_scene, NoiseModel, Scene};
use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn config_with_noise(lidar_sigma: f64, pixel_sigma: f64) -> ConfigFile {
    let mut c = ConfigFile::default_rig();
    c.simulation.noise = NoiseModel { lidar_sigma, pixel_sigma, dropout: 0.0 };
    c
}

pub fn scene(config: &ConfigFile, seed: u64) -> Scene {
    let layout = config.layout().unwrap();
    make_scene(&layout, config.simulation.sequences, &config.target, &config.simulation.noise, seed).unwrap()
}

/// Center observations generated straight from world poses, skipping the
/// detectors. `noise` is `(metres on 3D centers, pixels on 2D centers)`;
/// draws depend only on `seed`, not on the poses.
pub fn observations_from_world(
    sensors: &[SensorInfo],
    sensor_poses: &[RigidTransform],
    boards: &[RigidTransform],
    visible: &dyn Fn(usize, usize) -> bool,
    board_centers: &[Point3; 4],
    noise: (f64, f64),
    seed: u64,
) -> Vec<SequenceObservations> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n3 = Normal::new(0.0, noise.0.max(1e-300)).unwrap();
    let n2 = Normal::new(0.0, noise.1.max(1e-300)).unwrap();
    let draw3 = |rng: &mut ChaCha8Rng| if noise.0 > 0.0 { Vector3::from_fn(|_, _| n3.sample(rng)) } else { Vector3::zeros() };
    let mut out = Vec::new();
    for (q, board) in boards.iter().enumerate() {
        let mut observations = BTreeMap::new();
        for (i, s) in sensors.iter().enumerate() {
            if !visible(i, q) {
                continue;
            }
            let local = sensor_poses[i].inverse().compose(board);
            let centers: [Point3; 4] = board_centers.map(|c| local.transform_point(&c));
            let noisy: [Point3; 4] = centers.map(|c| c + draw3(&mut rng));
            let obs = match s.kind {
                SensorKind::Lidar => Observation::Lidar { centers: noisy },
                SensorKind::Camera => {
                    let k = s.intrinsics.as_ref().unwrap();
                    let px = centers.map(|c| {
                        let d = if noise.1 > 0.0 { Vector2::new(n2.sample(&mut rng), n2.sample(&mut rng)) } else { Vector2::zeros() };
                        project(k, &c).unwrap() + d
                    });
                    Observation::Camera { centers_3d: noisy, centers_2d: px }
                }
            };
            observations.insert(i, obs);
        }
        out.push(SequenceObservations { sequence: q as u32, observations });
    }
    out
}

/// Observations for a simulated scene, visible sensors only.
pub fn scene_observations(scene: &Scene, sensors: &[SensorInfo], noise: (f64, f64), seed: u64) -> Vec<SequenceObservations> {
    let poses: Vec<RigidTransform> = scene.layout.sensors.iter().map(|s| s.pose()).collect();
    let centers = scene.spec.circle_centers_board();
    observations_from_world(sensors, &poses, &scene.boards, &|i, q| scene.sees(i, q), &centers, noise, seed)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
