//! Calibration board geometry.
//!
//! The board is a ChArUco checkerboard with four circular through-holes near
//! its corners. Board frame: origin at the geometric center, x right, y up,
//! z out of the printed face.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TargetError {
    #[error("invalid target spec: {0}")]
    Invalid(String),
    #[error("sample pitch {pitch} must be in (0, circle_radius/2 = {max}]")]
    BadPitch { pitch: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub squares_x: u32,
    pub squares_y: u32,
    pub square_size: f64,
    pub board_width: f64,
    pub board_height: f64,
    /// Hole centers relative to the board center, in canonical order:
    /// top-left, top-right, bottom-right, bottom-left.
    pub circle_offsets: [[f64; 2]; 4],
    pub circle_radius: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            squares_x: 8,
            squares_y: 8,
            square_size: 0.1,
            board_width: 1.0,
            board_height: 1.0,
            circle_offsets: [[-0.38, 0.38], [0.38, 0.38], [0.38, -0.38], [-0.38, -0.38]],
            circle_radius: 0.06,
        }
    }
}

pub const DEFAULT_MASK_PITCH: f64 = 0.01;

impl TargetSpec {
    pub fn validate(&self) -> Result<(), TargetError> {
        let invalid = |m: &str| Err(TargetError::Invalid(m.to_string()));
        if self.squares_x < 2 || self.squares_y < 2 {
            return invalid("need at least 2 squares per side");
        }
        if !(self.square_size > 0.0) {
            return invalid("square_size must be positive");
        }
        if !(self.circle_radius > 0.0) {
            return invalid("circle_radius must be positive");
        }
        let (hw, hh) = (0.5 * self.board_width, 0.5 * self.board_height);
        if self.board_width < self.squares_x as f64 * self.square_size - 1e-12
            || self.board_height < self.squares_y as f64 * self.square_size - 1e-12
        {
            return invalid("board is smaller than its checker pattern");
        }
        for o in &self.circle_offsets {
            if o[0].abs() + self.circle_radius > hw + 1e-12 || o[1].abs() + self.circle_radius > hh + 1e-12 {
                return invalid("circle extends past the board boundary");
            }
        }
        for i in 0..4 {
            for j in i + 1..4 {
                let (a, b) = (self.circle_offsets[i], self.circle_offsets[j]);
                if (a[0] - b[0]).hypot(a[1] - b[1]) < 1e-9 {
                    return invalid("circle offsets must be distinct");
                }
            }
        }
        Ok(())
    }

    pub fn circle_centers_board(&self) -> [Point3; 4] {
        self.circle_offsets.map(|o| Point3::new(o[0], o[1], 0.0))
    }

    pub fn corner_count(&self) -> usize {
        ((self.squares_x - 1) * (self.squares_y - 1)) as usize
    }

    /// Board-frame position of inner corner `id` (row-major from the top-left).
    pub fn corner_position(&self, id: u32) -> Option<Point3> {
        let cols = self.squares_x - 1;
        if id as usize >= self.corner_count() {
            return None;
        }
        let (col, row) = (id % cols, id / cols);
        let x = (col as f64 + 1.0 - 0.5 * self.squares_x as f64) * self.square_size;
        let y = (0.5 * self.squares_y as f64 - 1.0 - row as f64) * self.square_size;
        Some(Point3::new(x, y, 0.0))
    }

    pub fn checker_corners_board(&self) -> Vec<(u32, Point3)> {
        (0..self.corner_count() as u32).map(|id| (id, self.corner_position(id).unwrap())).collect()
    }

    /// True when the board-frame point (z ignored) lies on the board and
    /// outside every hole.
    pub fn is_solid(&self, x: f64, y: f64) -> bool {
        if x.abs() > 0.5 * self.board_width || y.abs() > 0.5 * self.board_height {
            return false;
        }
        let r2 = self.circle_radius * self.circle_radius;
        self.circle_offsets.iter().all(|o| (x - o[0]).powi(2) + (y - o[1]).powi(2) >= r2)
    }
}

/// Grid samples of the board plane with the four holes removed, board frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCloud {
    pub points: Vec<Point3>,
    pub pitch: f64,
}

pub fn generate_mask_cloud(spec: &TargetSpec, sample_pitch: f64) -> Result<MaskCloud, TargetError> {
    spec.validate()?;
    let max = 0.5 * spec.circle_radius;
    if !(sample_pitch > 0.0 && sample_pitch <= max + 1e-12) {
        return Err(TargetError::BadPitch { pitch: sample_pitch, max });
    }
    let nx = (spec.board_width / sample_pitch).round().max(1.0) as usize;
    let ny = (spec.board_height / sample_pitch).round().max(1.0) as usize;
    // Spread samples so the outermost rows sit exactly on the board edges.
    let (sx, sy) = (spec.board_width / nx as f64, spec.board_height / ny as f64);
    let (x0, y0) = (-0.5 * spec.board_width, -0.5 * spec.board_height);
    // Nodes lying exactly on a hole rim are kept.
    let r2 = spec.circle_radius * spec.circle_radius - 1e-12;
    let mut points = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = y0 + j as f64 * sy;
        for i in 0..=nx {
            let x = x0 + i as f64 * sx;
            if spec.circle_offsets.iter().all(|o| (x - o[0]).powi(2) + (y - o[1]).powi(2) >= r2) {
                points.push(Point3::new(x, y, 0.0));
            }
        }
    }
    Ok(MaskCloud { points, pitch: sample_pitch })
}
