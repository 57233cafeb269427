//! Occupancy raster of the flattened board and the hole search on it.
//!
//! Cell `(i, j)` covers `[origin + i/res, origin + (i+1)/res)` along x and
//! the same along y; `i` indexes x, `j` indexes y.

use super::LidarError;
use crate::geometry::Point3;
use crate::target::TargetSpec;

/// Hole search radius around each design offset, in cells.
pub const CIRCLE_SEARCH_CELLS: i64 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub origin: [f64; 2],
    /// Cells per meter.
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(origin: [f64; 2], resolution: f64, nx: usize, ny: usize) -> Self {
        Self { origin, resolution, nx, ny, cells: vec![false; nx * ny] }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i + self.nx * j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[i + self.nx * j] = v;
    }

    /// Occupancy at signed indices; outside the raster counts as empty.
    pub fn get_signed(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.nx && (j as usize) < self.ny && self.get(i as usize, j as usize)
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Cell index of a metric coordinate.
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        // The epsilon keeps points that sit exactly on a cell boundary from
        // dropping into the previous cell through rounding.
        (
            ((x - self.origin[0]) * self.resolution + 1e-9).floor() as i64,
            ((y - self.origin[1]) * self.resolution + 1e-9).floor() as i64,
        )
    }

    /// Metric position of a continuous cell coordinate.
    pub fn to_metric(&self, u: f64, v: f64) -> [f64; 2] {
        [self.origin[0] + u / self.resolution, self.origin[1] + v / self.resolution]
    }

    fn prefix_sums(&self) -> Vec<u32> {
        let w = self.nx + 1;
        let mut s = vec![0u32; w * (self.ny + 1)];
        for j in 0..self.ny {
            for i in 0..self.nx {
                s[(i + 1) + w * (j + 1)] = s[i + w * (j + 1)] + s[(i + 1) + w * j] - s[i + w * j] + self.get(i, j) as u32;
            }
        }
        s
    }
}

pub fn build_occupancy(flat_pts: &[Point3], res: f64) -> OccupancyGrid {
    if flat_pts.is_empty() {
        return OccupancyGrid::empty([0.0, 0.0], res, 0, 0);
    }
    let (mut xmin, mut ymin, mut xmax, mut ymax) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in flat_pts {
        xmin = xmin.min(p.x);
        ymin = ymin.min(p.y);
        xmax = xmax.max(p.x);
        ymax = ymax.max(p.y);
    }
    let cell = 1.0 / res;
    let origin = [xmin - cell, ymin - cell];
    let nx = ((xmax - origin[0]) * res + 1e-9).floor() as usize + 2;
    let ny = ((ymax - origin[1]) * res + 1e-9).floor() as usize + 2;
    let mut grid = OccupancyGrid::empty(origin, res, nx, ny);
    for p in flat_pts {
        let (i, j) = grid.cell_of(p.x, p.y);
        grid.set(i as usize, j as usize, true);
    }
    grid
}

/// Window size in cells for a board of the given metric size.
pub fn window_cells(g: &OccupancyGrid, width: f64, height: f64) -> (usize, usize) {
    ((width * g.resolution).round() as usize, (height * g.resolution).round() as usize)
}

/// Occupied-cell count of every window position, indexed `i + (nx−w+1)·j`.
fn window_counts(g: &OccupancyGrid, w: usize, h: usize) -> Result<(Vec<u32>, usize, usize), LidarError> {
    if w == 0 || h == 0 || w > g.nx || h > g.ny {
        return Err(LidarError::GridTooSmall { grid: (g.nx, g.ny), window: (w, h) });
    }
    let s = g.prefix_sums();
    let sw = g.nx + 1;
    let (ni, nj) = (g.nx - w + 1, g.ny - h + 1);
    let mut out = vec![0u32; ni * nj];
    for j in 0..nj {
        for i in 0..ni {
            out[i + ni * j] = s[(i + w) + sw * (j + h)] + s[i + sw * j] - s[i + sw * (j + h)] - s[(i + w) + sw * j];
        }
    }
    Ok((out, ni, nj))
}

/// Top-left cell of the `width × height` window holding the most occupied
/// cells. Ties go to the smallest `i`, then the smallest `j`.
pub fn find_target_region(g: &OccupancyGrid, width: f64, height: f64) -> Result<(usize, usize), LidarError> {
    let (w, h) = window_cells(g, width, height);
    let (counts, ni, nj) = window_counts(g, w, h)?;
    let mut best = (0usize, 0usize, 0u32);
    let mut first = true;
    for i in 0..ni {
        for j in 0..nj {
            let c = counts[i + ni * j];
            if first || c > best.2 {
                best = (i, j, c);
                first = false;
            }
        }
    }
    Ok((best.0, best.1))
}

/// Center of the plateau of maximal windows around `start`.
///
/// A board scanned in horizontal lines leaves slack between the window edge
/// and the outermost line, so several positions share the maximal count.
/// Returns the midpoint of those within `reach` cells of `start`.
pub fn plateau_center(g: &OccupancyGrid, width: f64, height: f64, start: (usize, usize), reach: usize) -> Result<(usize, usize), LidarError> {
    let (w, h) = window_cells(g, width, height);
    let (counts, ni, nj) = window_counts(g, w, h)?;
    let best = counts[start.0 + ni * start.1];
    let (mut imin, mut imax, mut jmin, mut jmax) = (start.0, start.0, start.1, start.1);
    for j in start.1.saturating_sub(reach)..(start.1 + reach + 1).min(nj) {
        for i in start.0.saturating_sub(reach)..(start.0 + reach + 1).min(ni) {
            if counts[i + ni * j] == best {
                imin = imin.min(i);
                imax = imax.max(i);
                jmin = jmin.min(j);
                jmax = jmax.max(j);
            }
        }
    }
    Ok(((imin + imax) / 2, (jmin + jmax) / 2))
}

/// Cell offsets whose centers fall inside a disc of `radius_cells` around
/// a point at `frac` within its cell.
fn disc_cells(radius_cells: f64, frac: (f64, f64)) -> Vec<(i64, i64)> {
    let r = radius_cells.ceil() as i64 + 1;
    let mut out = Vec::new();
    for dj in -r..=r {
        for di in -r..=r {
            let dx = di as f64 + 0.5 - frac.0;
            let dy = dj as f64 + 0.5 - frac.1;
            if dx * dx + dy * dy <= radius_cells * radius_cells {
                out.push((di, dj));
            }
        }
    }
    out
}

/// Refines the four hole centers inside the window with top-left cell
/// `window`. Returns continuous cell coordinates in canonical order.
///
/// Each center starts at the window center plus the design offset and is
/// moved by whole cells (up to [`CIRCLE_SEARCH_CELLS`]) to minimise the
/// number of occupied cells inside a disc of the hole radius. Among equally
/// good displacements the one nearest their centroid is kept.
pub fn refine_circles(g: &OccupancyGrid, window: (usize, usize), spec: &TargetSpec) -> Result<[[f64; 2]; 4], LidarError> {
    let (w, h) = window_cells(g, spec.board_width, spec.board_height);
    if window.0 + w > g.nx || window.1 + h > g.ny {
        return Err(LidarError::GridTooSmall { grid: (g.nx, g.ny), window: (w, h) });
    }
    let res = g.resolution;
    let radius = spec.circle_radius * res;
    let center = (window.0 as f64 + 0.5 * w as f64, window.1 as f64 + 0.5 * h as f64);
    let mut out = [[0.0; 2]; 4];
    for (k, o) in spec.circle_offsets.iter().enumerate() {
        let init = (center.0 + o[0] * res, center.1 + o[1] * res);
        let base = (init.0.floor(), init.1.floor());
        let frac = (init.0 - base.0, init.1 - base.1);
        let mask = disc_cells(radius, frac);
        let mut best = u32::MAX;
        let mut ties: Vec<(i64, i64)> = Vec::new();
        for dj in -CIRCLE_SEARCH_CELLS..=CIRCLE_SEARCH_CELLS {
            for di in -CIRCLE_SEARCH_CELLS..=CIRCLE_SEARCH_CELLS {
                let (ci, cj) = (base.0 as i64 + di, base.1 as i64 + dj);
                let count = mask.iter().filter(|(mi, mj)| g.get_signed(ci + mi, cj + mj)).count() as u32;
                if count < best {
                    best = count;
                    ties.clear();
                }
                if count == best {
                    ties.push((di, dj));
                }
            }
        }
        if best as f64 > 0.5 * mask.len() as f64 {
            return Err(LidarError::NoVoidFound { circle: k, occupied_fraction: best as f64 / mask.len() as f64 });
        }
        let n = ties.len() as f64;
        let mean = (ties.iter().map(|t| t.0 as f64).sum::<f64>() / n, ties.iter().map(|t| t.1 as f64).sum::<f64>() / n);
        let chosen = ties
            .iter()
            .copied()
            .min_by(|a, b| {
                let da = (a.0 as f64 - mean.0).powi(2) + (a.1 as f64 - mean.1).powi(2);
                let db = (b.0 as f64 - mean.0).powi(2) + (b.1 as f64 - mean.1).powi(2);
                da.total_cmp(&db)
            })
            .expect("search window is non-empty");
        out[k] = [init.0 + chosen.0 as f64, init.1 + chosen.1 as f64];
    }
    Ok(out)
}
