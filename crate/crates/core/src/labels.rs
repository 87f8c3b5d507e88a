//! Automatic label generation: occupancy labels from the filter baseline,
//! static/dynamic masks, uniform per-object velocity labels and the per-cell
//! loss weight grid.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{rotate_scalar_plane, rotate_velocity_planes, DynamicGrid, GridSpec};
use crate::sim::GtBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    /// Steps of filter history used by the static classifier.
    pub window_len: usize,
    /// A cell is static when its mean occupancy over the window exceeds this.
    pub mean_threshold: f64,
    /// ... and its occupancy variance stays below this.
    pub var_threshold: f64,
    /// Occupancy needed for a box cell to count as dynamic.
    pub occ_threshold: f64,
    pub lambda_static: f32,
    pub lambda_dynamic: f32,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            window_len: 10,
            mean_threshold: 0.6,
            var_threshold: 0.01,
            occ_threshold: 0.55,
            lambda_static: 5.0,
            lambda_dynamic: 20.0,
        }
    }
}

/// One training target: occupancy label, velocity label and loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    spec: GridSpec,
    pub occupancy: Vec<f32>,
    pub vel_east: Vec<f32>,
    pub vel_north: Vec<f32>,
    pub weight: Vec<f32>,
}

impl LabelSet {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn from_channels(
        spec: GridSpec,
        occupancy: Vec<f32>,
        vel_east: Vec<f32>,
        vel_north: Vec<f32>,
        weight: Vec<f32>,
    ) -> Result<Self> {
        let n = spec.n_cells();
        if occupancy.len() != n || vel_east.len() != n || vel_north.len() != n || weight.len() != n
        {
            return Err(CoreError::GridSpecMismatch(
                "label channel length mismatch".into(),
            ));
        }
        Ok(LabelSet {
            spec,
            occupancy,
            vel_east,
            vel_north,
            weight,
        })
    }
}

/// Static classifier: a cell is static iff its occupancy probability stayed
/// high (mean > threshold) and steady (variance < threshold) over the window.
pub fn static_mask(history: &[&DynamicGrid], cfg: &LabelConfig) -> Result<Vec<bool>> {
    if history.len() < cfg.window_len || cfg.window_len < 2 {
        return Err(CoreError::WindowTooShort {
            got: history.len(),
            need: cfg.window_len.max(2),
        });
    }
    let window = &history[history.len() - cfg.window_len..];
    let spec = *window[0].spec();
    for g in window {
        spec.ensure_same(g.spec(), "static_mask history")?;
    }
    let n = spec.n_cells();
    let mut mask = vec![false; n];
    let len = window.len() as f64;
    for i in 0..n {
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        for g in window {
            let p = g.p_occ_at(i) as f64;
            sum += p;
            sum_sq += p * p;
        }
        let mean = sum / len;
        let var = (sum_sq / len - mean * mean).max(0.0);
        mask[i] = mean > cfg.mean_threshold && var < cfg.var_threshold;
    }
    Ok(mask)
}

/// Dynamic classifier: cell center inside some ground-truth box and the
/// occupancy label above the threshold.
pub fn dynamic_mask(
    boxes: &[GtBox],
    occupancy_label: &[f32],
    spec: &GridSpec,
    occ_threshold: f64,
) -> Vec<bool> {
    let side = spec.cells_per_side();
    let mut mask = vec![false; spec.n_cells()];
    for b in boxes {
        for row in 0..side {
            for col in 0..side {
                let idx = spec.index(row, col);
                if mask[idx] || (occupancy_label[idx] as f64) <= occ_threshold {
                    continue;
                }
                let (e, n) = spec.cell_center(row, col);
                if b.contains(crate::sim::Vec2::new(e, n)) {
                    mask[idx] = true;
                }
            }
        }
    }
    mask
}

/// Full label generation for one time step.
///
/// The occupancy label is the filter's occupancy probability of the current
/// step (last grid of the history window). Cells claimed by both masks
/// resolve to dynamic, so the masks handed to the velocity labeler are
/// disjoint.
pub fn generate_labels(
    history: &[&DynamicGrid],
    boxes: &[GtBox],
    cfg: &LabelConfig,
) -> Result<LabelSet> {
    let current = *history.last().ok_or(CoreError::WindowTooShort {
        got: 0,
        need: cfg.window_len,
    })?;
    let spec = *current.spec();
    let occupancy = current.p_occ_plane();
    let mut is_static = static_mask(history, cfg)?;
    let is_dynamic = dynamic_mask(boxes, &occupancy, &spec, cfg.occ_threshold);
    for i in 0..is_static.len() {
        if is_dynamic[i] {
            is_static[i] = false;
        }
    }
    let (vel_east, vel_north) = velocity_labels(boxes, &is_dynamic, &spec);
    let weight = build_weight_mask(&is_static, &is_dynamic, cfg);
    LabelSet::from_channels(spec, occupancy, vel_east, vel_north, weight)
}

/// Velocity labels: every dynamic cell of an object carries that object's
/// exact script velocity; static and unlabeled cells carry (0, 0).
pub fn velocity_labels(
    boxes: &[GtBox],
    dynamic: &[bool],
    spec: &GridSpec,
) -> (Vec<f32>, Vec<f32>) {
    let side = spec.cells_per_side();
    let mut vel_east = vec![0.0f32; spec.n_cells()];
    let mut vel_north = vec![0.0f32; spec.n_cells()];
    for b in boxes {
        for row in 0..side {
            for col in 0..side {
                let idx = spec.index(row, col);
                if !dynamic[idx] {
                    continue;
                }
                let (e, n) = spec.cell_center(row, col);
                if b.contains(crate::sim::Vec2::new(e, n)) {
                    vel_east[idx] = b.velocity.east as f32;
                    vel_north[idx] = b.velocity.north as f32;
                }
            }
        }
    }
    (vel_east, vel_north)
}

/// λ_d on dynamic cells, else λ_s on static cells, else 0.
pub fn build_weight_mask(is_static: &[bool], is_dynamic: &[bool], cfg: &LabelConfig) -> Vec<f32> {
    is_static
        .iter()
        .zip(is_dynamic)
        .map(|(s, d)| {
            if *d {
                cfg.lambda_dynamic
            } else if *s {
                cfg.lambda_static
            } else {
                0.0
            }
        })
        .collect()
}

/// Rotates a full label set: occupancy resamples with 0.5 fill (unobserved),
/// velocities rotate as vectors, weights resample with zero fill.
pub fn rotate_labels(labels: &LabelSet, angle_deg: f64) -> LabelSet {
    let n = labels.spec.cells_per_side();
    let (vel_east, vel_north) =
        rotate_velocity_planes(&labels.vel_east, &labels.vel_north, n, angle_deg);
    LabelSet {
        spec: labels.spec,
        occupancy: rotate_scalar_plane(&labels.occupancy, n, angle_deg, 0.5),
        vel_east,
        vel_north,
        weight: rotate_scalar_plane(&labels.weight, n, angle_deg, 0.0),
    }
}

/// Rotates ground-truth boxes about the grid center: centers orbit, headings
/// and velocity vectors turn by the same angle.
pub fn rotate_boxes(boxes: &[GtBox], spec: &GridSpec, angle_deg: f64) -> Vec<GtBox> {
    let (ce, cn) = spec.center_world();
    let rad = angle_deg.to_radians();
    let (sin_t, cos_t) = if angle_deg.rem_euclid(360.0) == 90.0 {
        (1.0, 0.0)
    } else if angle_deg.rem_euclid(360.0) == 180.0 {
        (0.0, -1.0)
    } else if angle_deg.rem_euclid(360.0) == 270.0 {
        (-1.0, 0.0)
    } else if angle_deg.rem_euclid(360.0) == 0.0 {
        (0.0, 1.0)
    } else {
        rad.sin_cos()
    };
    boxes
        .iter()
        .map(|b| {
            let de = b.center.east - ce;
            let dn = b.center.north - cn;
            GtBox {
                id: b.id.clone(),
                center: crate::sim::Vec2::new(
                    ce + de * cos_t - dn * sin_t,
                    cn + de * sin_t + dn * cos_t,
                ),
                length: b.length,
                width: b.width,
                heading_rad: b.heading_rad + rad,
                velocity: crate::sim::Vec2::new(
                    b.velocity.east * cos_t - b.velocity.north * sin_t,
                    b.velocity.east * sin_t + b.velocity.north * cos_t,
                ),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::rotate_dynamic;
    use crate::sim::Vec2;

    fn spec() -> GridSpec {
        GridSpec::centered(32, 0.5).unwrap()
    }

    fn uniform_grid(spec: &GridSpec, p: f32) -> DynamicGrid {
        let mut g = DynamicGrid::zeros(*spec);
        // Masses that give exactly p everywhere.
        let m_occ = (2.0 * p - 1.0).max(0.0);
        let m_free = (1.0 - 2.0 * p).max(0.0);
        g.m_occ = vec![m_occ; spec.n_cells()];
        g.m_free = vec![m_free; spec.n_cells()];
        g
    }

    #[test]
    fn static_mask_constant_high_cell() {
        let s = spec();
        let grids: Vec<DynamicGrid> = (0..10).map(|_| uniform_grid(&s, 0.9)).collect();
        let refs: Vec<&DynamicGrid> = grids.iter().collect();
        let mask = static_mask(&refs, &LabelConfig::default()).unwrap();
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn static_mask_alternating_cell_rejected() {
        let s = spec();
        let grids: Vec<DynamicGrid> = (0..10)
            .map(|k| uniform_grid(&s, if k % 2 == 0 { 0.2 } else { 0.9 }))
            .collect();
        let refs: Vec<&DynamicGrid> = grids.iter().collect();
        let mask = static_mask(&refs, &LabelConfig::default()).unwrap();
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn static_mask_unobserved_rejected() {
        let s = spec();
        let grids: Vec<DynamicGrid> = (0..10).map(|_| uniform_grid(&s, 0.5)).collect();
        let refs: Vec<&DynamicGrid> = grids.iter().collect();
        let mask = static_mask(&refs, &LabelConfig::default()).unwrap();
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn static_mask_short_window_errors() {
        let s = spec();
        let g = uniform_grid(&s, 0.9);
        let refs = vec![&g; 4];
        assert!(matches!(
            static_mask(&refs, &LabelConfig::default()),
            Err(CoreError::WindowTooShort { .. })
        ));
    }

    fn car_box(center: Vec2, vel: Vec2) -> GtBox {
        GtBox {
            id: "car".into(),
            center,
            length: 3.0,
            width: 2.0,
            heading_rad: 0.0,
            velocity: vel,
        }
    }

    #[test]
    fn dynamic_mask_rules() {
        let s = spec();
        let b = car_box(Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0));
        let mut occ = vec![0.5f32; s.n_cells()];
        let (r_in, c_in) = s.world_to_cell(0.0, 0.0).unwrap();
        let (r_out, c_out) = s.world_to_cell(6.0, 6.0).unwrap();
        occ[s.index(r_in, c_in)] = 0.9;
        occ[s.index(r_out, c_out)] = 0.9; // occupied but outside the box
        let mask = dynamic_mask(&[b], &occ, &s, 0.55);
        assert!(mask[s.index(r_in, c_in)]);
        assert!(!mask[s.index(r_out, c_out)]);
        // In-box cell at exactly 0.5 stays out.
        let (r2, c2) = s.world_to_cell(0.5, 0.0).unwrap();
        assert!(!mask[s.index(r2, c2)]);
    }

    fn history_with_object(s: &GridSpec, occ_val: f32, obj: &GtBox, len: usize) -> Vec<DynamicGrid> {
        (0..len)
            .map(|_| {
                let mut g = uniform_grid(s, 0.5);
                let side = s.cells_per_side();
                for row in 0..side {
                    for col in 0..side {
                        let (e, n) = s.cell_center(row, col);
                        if obj.contains(Vec2::new(e, n)) {
                            let idx = s.index(row, col);
                            g.m_occ[idx] = (2.0 * occ_val - 1.0).max(0.0);
                            g.m_free[idx] = 0.0;
                        }
                    }
                }
                g
            })
            .collect()
    }

    #[test]
    fn labels_uniform_velocity_per_object() {
        let s = spec();
        let b = car_box(Vec2::new(1.0, -2.0), Vec2::new(5.0, 0.0));
        let grids = history_with_object(&s, 0.9, &b, 10);
        let refs: Vec<&DynamicGrid> = grids.iter().collect();
        let labels = generate_labels(&refs, &[b], &LabelConfig::default()).unwrap();
        let mut vels = std::collections::BTreeSet::new();
        for i in 0..s.n_cells() {
            if labels.weight[i] == 20.0 {
                vels.insert((labels.vel_east[i].to_bits(), labels.vel_north[i].to_bits()));
            }
        }
        assert_eq!(vels.len(), 1, "dynamic cells must share one velocity");
        assert!(vels.contains(&(5.0f32.to_bits(), 0.0f32.to_bits())));
    }

    #[test]
    fn overlap_resolves_to_dynamic() {
        let s = spec();
        let b = car_box(Vec2::new(0.0, 0.0), Vec2::new(3.0, 1.0));
        // Object sits still long enough that its cells also pass the static
        // test; box evidence must win.
        let grids = history_with_object(&s, 0.9, &b, 10);
        let refs: Vec<&DynamicGrid> = grids.iter().collect();
        let labels = generate_labels(&refs, &[b.clone()], &LabelConfig::default()).unwrap();
        let (r, c) = s.world_to_cell(0.0, 0.0).unwrap();
        let idx = s.index(r, c);
        assert_eq!(labels.weight[idx], 20.0);
        assert_eq!(labels.vel_east[idx], 3.0);
        assert_eq!(labels.vel_north[idx], 1.0);
    }

    #[test]
    fn weight_mask_values() {
        let cfg = LabelConfig::default();
        let w = build_weight_mask(
            &[true, false, false, true],
            &[false, true, false, true],
            &cfg,
        );
        assert_eq!(w, vec![5.0, 20.0, 0.0, 20.0]);
    }

    #[test]
    fn static_cells_zero_velocity_label() {
        let s = spec();
        let b = car_box(Vec2::new(4.0, 4.0), Vec2::new(2.0, 0.0));
        // Wall region: constant high occupancy outside the box.
        let grids = history_with_object(&s, 0.9, &b, 10);
        let refs: Vec<&DynamicGrid> = grids.iter().collect();
        let labels = generate_labels(&refs, &[b], &LabelConfig::default()).unwrap();
        for i in 0..s.n_cells() {
            if labels.weight[i] == 5.0 {
                assert_eq!(labels.vel_east[i], 0.0);
                assert_eq!(labels.vel_north[i], 0.0);
            }
        }
    }

    #[test]
    fn rotation_commutes_with_label_generation_at_quarter_turn() {
        let s = spec();
        // Box edges kept off the cell-center lattice so containment
        // decisions cannot sit on a knife edge.
        let b = car_box(Vec2::new(2.13, -1.57), Vec2::new(4.0, 1.0));
        let grids = history_with_object(&s, 0.9, &b, 10);
        let refs: Vec<&DynamicGrid> = grids.iter().collect();
        let cfg = LabelConfig::default();

        // Route A: generate labels, then rotate them.
        let labels_then_rotate = rotate_labels(&generate_labels(&refs, &[b.clone()], &cfg).unwrap(), 90.0);

        // Route B: rotate filter grids and boxes, then generate labels.
        let rotated_grids: Vec<DynamicGrid> = grids.iter().map(|g| rotate_dynamic(g, 90.0)).collect();
        let rotated_refs: Vec<&DynamicGrid> = rotated_grids.iter().collect();
        let rotated_boxes = rotate_boxes(&[b], &s, 90.0);
        let rotate_then_labels = generate_labels(&rotated_refs, &rotated_boxes, &cfg).unwrap();

        assert_eq!(labels_then_rotate.occupancy, rotate_then_labels.occupancy);
        assert_eq!(labels_then_rotate.weight, rotate_then_labels.weight);
        for i in 0..s.n_cells() {
            assert!(
                (labels_then_rotate.vel_east[i] - rotate_then_labels.vel_east[i]).abs() < 1e-5,
                "cell {i} east"
            );
            assert!(
                (labels_then_rotate.vel_north[i] - rotate_then_labels.vel_north[i]).abs() < 1e-5,
                "cell {i} north"
            );
        }
    }
}
