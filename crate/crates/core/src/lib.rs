//! Extrinsic calibration of multi-LiDAR, multi-camera rigs from a
//! checkerboard target with four circular holes.

pub mod camera;
pub mod cli;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod lidar;
pub mod lm;
pub mod optimizer;
pub mod pipeline;
pub mod sensor;
pub mod sim;
pub mod target;
