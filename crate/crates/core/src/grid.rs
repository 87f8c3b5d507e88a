//! Grid geometry, the shared grid data types and velocity-aware rotation.
//!
//! All grids are square and axis-aligned: columns run east, rows run north.
//! That alignment is what makes per-cell velocity channels (east/north
//! components) meaningful, so it is enforced structurally rather than stored.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const MIN_CELLS_PER_SIDE: usize = 8;

/// Geometry shared by every grid: cell count, cell size and the world
/// coordinates (meters east/north) of the south-west corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    cells_per_side: usize,
    cell_size: f64,
    origin_east: f64,
    origin_north: f64,
}

impl GridSpec {
    pub fn new(
        cells_per_side: usize,
        cell_size: f64,
        origin_east: f64,
        origin_north: f64,
    ) -> Result<Self> {
        if cells_per_side < MIN_CELLS_PER_SIDE {
            return Err(CoreError::InvalidGridSpec(format!(
                "cells_per_side {cells_per_side} < {MIN_CELLS_PER_SIDE}"
            )));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(CoreError::InvalidGridSpec(format!(
                "cell_size {cell_size} must be positive and finite"
            )));
        }
        if !origin_east.is_finite() || !origin_north.is_finite() {
            return Err(CoreError::InvalidGridSpec("origin must be finite".into()));
        }
        Ok(GridSpec {
            cells_per_side,
            cell_size,
            origin_east,
            origin_north,
        })
    }

    /// Spec centered so that the world origin (0, 0) falls on the center of
    /// cell (n/2, n/2). Keeps a sensor at (0, 0) away from cell boundaries.
    pub fn centered(cells_per_side: usize, cell_size: f64) -> Result<Self> {
        let half = cells_per_side as f64 / 2.0;
        let origin = -(half + 0.5) * cell_size;
        GridSpec::new(cells_per_side, cell_size, origin, origin)
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.origin_east, self.origin_north)
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    /// World extent covered by the grid: [origin, origin + side_length).
    pub fn side_length(&self) -> f64 {
        self.cells_per_side as f64 * self.cell_size
    }

    /// World point the grid rotates about: origin + (n/2)·cell_size on both axes.
    pub fn center_world(&self) -> (f64, f64) {
        let half = self.cells_per_side as f64 / 2.0 * self.cell_size;
        (self.origin_east + half, self.origin_north + half)
    }

    /// Map world coordinates to a (row, col) cell index, or `None` when the
    /// point lies outside the grid. Floor semantics, exclusive upper bound.
    pub fn world_to_cell(&self, east: f64, north: f64) -> Option<(usize, usize)> {
        let col = ((east - self.origin_east) / self.cell_size).floor();
        let row = ((north - self.origin_north) / self.cell_size).floor();
        let n = self.cells_per_side as f64;
        if col < 0.0 || col >= n || row < 0.0 || row >= n {
            None
        } else {
            Some((row as usize, col as usize))
        }
    }

    /// World coordinates of the center of cell (row, col).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_east + (col as f64 + 0.5) * self.cell_size,
            self.origin_north + (row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cells_per_side + col
    }

    pub fn same_geometry(&self, other: &GridSpec) -> bool {
        self == other
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(CoreError::GridSpecMismatch(format!(
                "{what}: {self:?} vs {other:?}"
            )))
        }
    }
}

/// Occupancy probability from Dempster-Shafer masses:
/// `P_O = m_occ + 0.5·(1 − m_occ − m_free)`.
pub fn occupancy_from_masses(m_occ: f64, m_free: f64) -> Result<f64> {
    check_masses(m_occ, m_free, 0, 0)?;
    Ok(m_occ + 0.5 * (1.0 - m_occ - m_free))
}

fn check_masses(m_occ: f64, m_free: f64, row: usize, col: usize) -> Result<()> {
    let valid = (0.0..=1.0).contains(&m_occ)
        && (0.0..=1.0).contains(&m_free)
        && m_occ + m_free <= 1.0 + 1e-6;
    if valid {
        Ok(())
    } else {
        Err(CoreError::MassConstraint {
            row,
            col,
            m_occ,
            m_free,
        })
    }
}

/// Occupancy grid built from a single time step's sensor data.
/// Cells never touched by any beam hold exactly 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementGrid {
    spec: GridSpec,
    p_occ: Vec<f32>,
}

impl MeasurementGrid {
    pub fn new(spec: GridSpec, p_occ: Vec<f32>) -> Result<Self> {
        if p_occ.len() != spec.n_cells() {
            return Err(CoreError::GridSpecMismatch(format!(
                "measurement grid data length {} != {} cells",
                p_occ.len(),
                spec.n_cells()
            )));
        }
        if let Some(bad) = p_occ.iter().find(|p| !(0.0..=1.0).contains(&(**p as f64))) {
            return Err(CoreError::ProbabilityRange { value: *bad as f64 });
        }
        Ok(MeasurementGrid { spec, p_occ })
    }

    pub fn unobserved(spec: GridSpec) -> Self {
        let n = spec.n_cells();
        MeasurementGrid {
            spec,
            p_occ: vec![0.5; n],
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn p_occ(&self) -> &[f32] {
        &self.p_occ
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.p_occ[self.spec.index(row, col)]
    }
}

/// Per-cell velocity second moments, populated by the particle-filter baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityStats {
    pub var_east: Vec<f32>,
    pub var_north: Vec<f32>,
    pub cov: Vec<f32>,
}

/// The common output type of both estimators: occupied/free masses plus a
/// 2-D velocity per cell, with optional velocity variances.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGrid {
    spec: GridSpec,
    pub m_occ: Vec<f32>,
    pub m_free: Vec<f32>,
    pub vel_east: Vec<f32>,
    pub vel_north: Vec<f32>,
    pub stats: Option<VelocityStats>,
}

impl DynamicGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.n_cells();
        DynamicGrid {
            spec,
            m_occ: vec![0.0; n],
            m_free: vec![0.0; n],
            vel_east: vec![0.0; n],
            vel_north: vec![0.0; n],
            stats: None,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Checks the Dempster-Shafer mass constraint on every cell, naming the
    /// first offending cell.
    pub fn validate_masses(&self) -> Result<()> {
        let n = self.spec.cells_per_side();
        for row in 0..n {
            for col in 0..n {
                let i = self.spec.index(row, col);
                check_masses(self.m_occ[i] as f64, self.m_free[i] as f64, row, col)?;
            }
        }
        Ok(())
    }

    /// Occupancy probability of one cell derived from its masses.
    pub fn p_occ_at(&self, idx: usize) -> f32 {
        let m_o = self.m_occ[idx] as f64;
        let m_f = self.m_free[idx] as f64;
        (m_o + 0.5 * (1.0 - m_o - m_f)) as f32
    }

    pub fn p_occ_plane(&self) -> Vec<f32> {
        (0..self.spec.n_cells()).map(|i| self.p_occ_at(i)).collect()
    }
}

/// Estimator output in probability form: per-cell `P_O` plus velocities in m/s.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    spec: GridSpec,
    pub p_occ: Vec<f32>,
    pub vel_east: Vec<f32>,
    pub vel_north: Vec<f32>,
}

impl PredictionGrid {
    pub fn new(
        spec: GridSpec,
        p_occ: Vec<f32>,
        vel_east: Vec<f32>,
        vel_north: Vec<f32>,
    ) -> Result<Self> {
        let n = spec.n_cells();
        if p_occ.len() != n || vel_east.len() != n || vel_north.len() != n {
            return Err(CoreError::GridSpecMismatch(
                "prediction channel length mismatch".into(),
            ));
        }
        Ok(PredictionGrid {
            spec,
            p_occ,
            vel_east,
            vel_north,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Zeroes velocities wherever `P_O ≤ threshold`. Idempotent.
    pub fn apply_deployment_mask(&mut self, threshold: f32) {
        for i in 0..self.p_occ.len() {
            if self.p_occ[i] <= threshold {
                self.vel_east[i] = 0.0;
                self.vel_north[i] = 0.0;
            }
        }
    }
}

/// Occupancy threshold used to gate velocity output at deployment.
pub const DEPLOYMENT_P_O_THRESHOLD: f32 = 0.55;

fn exact_sincos(angle_deg: f64) -> (f64, f64) {
    // Quarter turns must be exact so that rotation is a pure index permutation.
    let a = angle_deg.rem_euclid(360.0);
    if a == 0.0 {
        (0.0, 1.0)
    } else if a == 90.0 {
        (1.0, 0.0)
    } else if a == 180.0 {
        (0.0, -1.0)
    } else if a == 270.0 {
        (-1.0, 0.0)
    } else {
        let r = a.to_radians();
        (r.sin(), r.cos())
    }
}

/// Index map of a nearest-neighbor rotation about the grid center.
/// `map[dest] = Some(src)` or `None` when the source falls outside the grid.
pub fn rotation_index_map(cells_per_side: usize, angle_deg: f64) -> Vec<Option<usize>> {
    let n = cells_per_side;
    let (sin_t, cos_t) = exact_sincos(angle_deg);
    let half = n as f64 / 2.0;
    let mut map = vec![None; n * n];
    for row in 0..n {
        let v = row as f64 + 0.5 - half;
        for col in 0..n {
            let u = col as f64 + 0.5 - half;
            // Rotate the destination center by −θ to find the source point.
            let us = u * cos_t + v * sin_t;
            let vs = -u * sin_t + v * cos_t;
            let sc = (us + half - 0.5).round();
            let sr = (vs + half - 0.5).round();
            if sc >= 0.0 && sr >= 0.0 && (sc as usize) < n && (sr as usize) < n {
                map[row * n + col] = Some(sr as usize * n + sc as usize);
            }
        }
    }
    map
}

/// Rotate one scalar plane; cells sampled from outside the source get `fill`.
pub fn rotate_scalar_plane(
    plane: &[f32],
    cells_per_side: usize,
    angle_deg: f64,
    fill: f32,
) -> Vec<f32> {
    let map = rotation_index_map(cells_per_side, angle_deg);
    map.iter()
        .map(|src| src.map_or(fill, |s| plane[s]))
        .collect()
}

/// Rotate a velocity channel pair: cells are resampled like scalars and the
/// vectors themselves are rotated by the same angle.
pub fn rotate_velocity_planes(
    vel_east: &[f32],
    vel_north: &[f32],
    cells_per_side: usize,
    angle_deg: f64,
) -> (Vec<f32>, Vec<f32>) {
    let map = rotation_index_map(cells_per_side, angle_deg);
    let (sin_t, cos_t) = exact_sincos(angle_deg);
    let mut out_e = vec![0.0f32; map.len()];
    let mut out_n = vec![0.0f32; map.len()];
    for (dst, src) in map.iter().enumerate() {
        if let Some(s) = src {
            let ve = vel_east[*s] as f64;
            let vn = vel_north[*s] as f64;
            out_e[dst] = (ve * cos_t - vn * sin_t) as f32;
            out_n[dst] = (ve * sin_t + vn * cos_t) as f32;
        }
    }
    (out_e, out_n)
}

/// Rotate a measurement grid; unobserved fill is 0.5.
pub fn rotate_measurement(grid: &MeasurementGrid, angle_deg: f64) -> MeasurementGrid {
    let n = grid.spec.cells_per_side();
    MeasurementGrid {
        spec: grid.spec,
        p_occ: rotate_scalar_plane(&grid.p_occ, n, angle_deg, 0.5),
    }
}

/// Rotate a dynamic grid: masses resample as scalars (zero fill), velocity
/// pairs rotate as vectors, variances resample as scalars.
pub fn rotate_dynamic(grid: &DynamicGrid, angle_deg: f64) -> DynamicGrid {
    let n = grid.spec.cells_per_side();
    let (vel_east, vel_north) =
        rotate_velocity_planes(&grid.vel_east, &grid.vel_north, n, angle_deg);
    DynamicGrid {
        spec: grid.spec,
        m_occ: rotate_scalar_plane(&grid.m_occ, n, angle_deg, 0.0),
        m_free: rotate_scalar_plane(&grid.m_free, n, angle_deg, 0.0),
        vel_east,
        vel_north,
        stats: grid.stats.as_ref().map(|s| VelocityStats {
            var_east: rotate_scalar_plane(&s.var_east, n, angle_deg, 0.0),
            var_north: rotate_scalar_plane(&s.var_north, n, angle_deg, 0.0),
            cov: rotate_scalar_plane(&s.cov, n, angle_deg, 0.0),
        }),
    }
}
