//! Measurement grid maps: inverse sensor model plus per-cell binary Bayes
//! fusion of all beams of one time step.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{GridSpec, MeasurementGrid};
use crate::sim::{LidarScan, Vec2, NO_RETURN};

/// Probabilities are clamped to this interval before fusion so odds never
/// overflow; unmeasured cells stay exactly 0.5.
pub const P_CLAMP: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseSensorConfig {
    /// Occupancy probability at a beam reflection (> 0.5).
    pub p_hit: f64,
    /// Occupancy probability of traversed cells before the reflection (< 0.5).
    pub p_free: f64,
    /// Number of cells marked occupied at the return point, along the ray.
    pub hit_thickness: usize,
}

impl Default for InverseSensorConfig {
    fn default() -> Self {
        InverseSensorConfig {
            p_hit: 0.7,
            p_free: 0.3,
            hit_thickness: 1,
        }
    }
}

impl InverseSensorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_hit > 0.5 && self.p_hit < 1.0) {
            return Err(CoreError::InvalidConfig(format!(
                "p_hit {} must lie in (0.5, 1)",
                self.p_hit
            )));
        }
        if !(self.p_free > 0.0 && self.p_free < 0.5) {
            return Err(CoreError::InvalidConfig(format!(
                "p_free {} must lie in (0, 0.5)",
                self.p_free
            )));
        }
        if self.hit_thickness == 0 {
            return Err(CoreError::InvalidConfig("hit_thickness must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Binary Bayes fusion of two occupancy probabilities in odds form:
/// `odds(out) = odds(prior) · odds(measurement)`. 0.5 is the neutral element.
pub fn fuse_cell(prior: f64, measurement: f64) -> Result<f64> {
    for v in [prior, measurement] {
        if !(v > 0.0 && v < 1.0) {
            return Err(CoreError::ProbabilityRange { value: v });
        }
    }
    let odds = (prior / (1.0 - prior)) * (measurement / (1.0 - measurement));
    Ok(odds / (1.0 + odds))
}

/// Cells a beam touches, with the probability the inverse sensor model
/// assigns to each. Cells beyond the return point are absent (stay 0.5).
pub fn trace_beam(
    azimuth: f64,
    range: f64,
    max_range: f64,
    sensor: Vec2,
    spec: &GridSpec,
    cfg: &InverseSensorConfig,
) -> Vec<((usize, usize), f64)> {
    let dir = Vec2::new(azimuth.cos(), azimuth.sin());
    let has_return = range != NO_RETURN && range.is_finite();
    let trace_len = if has_return { range } else { max_range };
    let cells = walk_cells(sensor, dir, trace_len, spec);
    let mut out = Vec::with_capacity(cells.len() + cfg.hit_thickness);
    // Skip the sensor's own cell; everything up to the return cell is free.
    for (row, col) in cells.iter().skip(1) {
        out.push(((*row, *col), cfg.p_free));
    }
    if has_return {
        // The cell containing the return point (last in the walk) plus
        // hit_thickness−1 more along the ray become occupied.
        let hit_cells = hit_run(sensor, dir, range, spec, cfg.hit_thickness);
        for hc in &hit_cells {
            if let Some(pos) = out.iter().position(|(c, _)| c == hc) {
                out[pos].1 = cfg.p_hit;
            } else {
                out.push((*hc, cfg.p_hit));
            }
        }
    }
    out
}

/// Exact grid-line crossing walk from `origin` out to `length` meters along
/// `dir`. Visits every cell the ray geometrically intersects, in order,
/// starting with the cell containing the origin. Leaves the grid at most once.
fn walk_cells(origin: Vec2, dir: Vec2, length: f64, spec: &GridSpec) -> Vec<(usize, usize)> {
    let n = spec.cells_per_side() as isize;
    let cs = spec.cell_size();
    let (oe, on) = spec.origin();
    // Continuous cell coordinates of the start point.
    let fx = (origin.east - oe) / cs;
    let fy = (origin.north - on) / cs;
    let mut cx = fx.floor() as isize;
    let mut cy = fy.floor() as isize;
    let t_max_total = length / cs; // walk parameter measured in cells
    let step_x: isize = if dir.east > 0.0 { 1 } else { -1 };
    let step_y: isize = if dir.north > 0.0 { 1 } else { -1 };
    let inv_dx = if dir.east != 0.0 {
        1.0 / dir.east.abs()
    } else {
        f64::INFINITY
    };
    let inv_dy = if dir.north != 0.0 {
        1.0 / dir.north.abs()
    } else {
        f64::INFINITY
    };
    // Distance (in cells along the ray) to the first x/y grid line.
    let frac_x = if dir.east > 0.0 {
        (cx as f64 + 1.0) - fx
    } else {
        fx - cx as f64
    };
    let frac_y = if dir.north > 0.0 {
        (cy as f64 + 1.0) - fy
    } else {
        fy - cy as f64
    };
    let mut t_next_x = frac_x * inv_dx;
    let mut t_next_y = frac_y * inv_dy;
    let dt_x = inv_dx;
    let dt_y = inv_dy;

    let mut cells = Vec::new();
    let in_grid = |x: isize, y: isize| x >= 0 && x < n && y >= 0 && y < n;
    if in_grid(cx, cy) {
        cells.push((cy as usize, cx as usize));
    }
    let mut t = 0.0;
    while t < t_max_total {
        if t_next_x < t_next_y {
            t = t_next_x;
            t_next_x += dt_x;
            cx += step_x;
        } else {
            t = t_next_y;
            t_next_y += dt_y;
            cy += step_y;
        }
        if t >= t_max_total {
            break;
        }
        if in_grid(cx, cy) {
            cells.push((cy as usize, cx as usize));
        } else if !cells.is_empty() {
            break; // left a convex region, never comes back
        }
    }
    cells
}

/// Cells marked occupied at a beam return: the cell containing the endpoint
/// plus `thickness − 1` following cells along the ray.
fn hit_run(
    origin: Vec2,
    dir: Vec2,
    range: f64,
    spec: &GridSpec,
    thickness: usize,
) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(thickness);
    let cs = spec.cell_size();
    for k in 0..thickness {
        let d = range + k as f64 * cs;
        let p = Vec2::new(origin.east + dir.east * d, origin.north + dir.north * d);
        if let Some(cell) = spec.world_to_cell(p.east, p.north) {
            if !out.contains(&cell) {
                out.push(cell);
            }
        }
    }
    out
}

/// Builds the measurement grid of one scan: per cell, the first touching
/// beam's probability is the prior and every later touching beam is fused
/// with the binary Bayes rule. Untouched cells hold exactly 0.5.
pub fn build_measurement_grid(
    scan: &LidarScan,
    spec: &GridSpec,
    max_range: f64,
    cfg: &InverseSensorConfig,
) -> Result<MeasurementGrid> {
    cfg.validate()?;
    let n = spec.n_cells();
    // f64 working buffer; NaN marks "never touched".
    let mut acc = vec![f64::NAN; n];
    let clamp = |p: f64| p.clamp(P_CLAMP.0, P_CLAMP.1);
    for (azimuth, range) in &scan.beams {
        for ((row, col), p) in trace_beam(*azimuth, *range, max_range, scan.sensor_pose, spec, cfg)
        {
            let idx = spec.index(row, col);
            let m = clamp(p);
            acc[idx] = if acc[idx].is_nan() {
                m
            } else {
                fuse_cell(acc[idx], m)?
            };
        }
    }
    let p_occ: Vec<f32> = acc
        .into_iter()
        .map(|v| if v.is_nan() { 0.5 } else { v as f32 })
        .collect();
    MeasurementGrid::new(*spec, p_occ)
}

/// Splits an occupancy probability into (occupied, free) evidence masses:
/// `m_occ = max(0, 2p − 1)`, `m_free = max(0, 1 − 2p)`. Both are zero at
/// p = 0.5 and the pair inverts back to p through the mass→probability rule.
pub fn mass_channels(grid: &MeasurementGrid) -> [Vec<f32>; 2] {
    let mut m_occ = Vec::with_capacity(grid.p_occ().len());
    let mut m_free = Vec::with_capacity(grid.p_occ().len());
    for &p in grid.p_occ() {
        m_occ.push((2.0 * p - 1.0).max(0.0));
        m_free.push((1.0 - 2.0 * p).max(0.0));
    }
    [m_occ, m_free]
}
