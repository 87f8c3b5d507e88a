//! Per-object cell statistics, sequence-level error summaries and the
//! two-approach comparison table.
//!
//! Orientations use circular statistics throughout: arithmetic means of
//! angles break at the 0°/360° wraparound and would corrupt any scenario
//! that turns through north.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{DynamicGrid, GridSpec, PredictionGrid};
use crate::sim::{GtBox, RefSample, Vec2};

/// Anything that exposes per-cell occupancy probability and velocity.
pub trait VelocityField {
    fn spec(&self) -> &GridSpec;
    fn p_occ_at(&self, idx: usize) -> f32;
    fn velocity_at(&self, idx: usize) -> (f32, f32);
}

impl VelocityField for DynamicGrid {
    fn spec(&self) -> &GridSpec {
        DynamicGrid::spec(self)
    }

    fn p_occ_at(&self, idx: usize) -> f32 {
        DynamicGrid::p_occ_at(self, idx)
    }

    fn velocity_at(&self, idx: usize) -> (f32, f32) {
        (self.vel_east[idx], self.vel_north[idx])
    }
}

impl VelocityField for PredictionGrid {
    fn spec(&self) -> &GridSpec {
        PredictionGrid::spec(self)
    }

    fn p_occ_at(&self, idx: usize) -> f32 {
        self.p_occ[idx]
    }

    fn velocity_at(&self, idx: usize) -> (f32, f32) {
        (self.vel_east[idx], self.vel_north[idx])
    }
}

/// Cell selection rule for "cells belonging to one object".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectCellRule {
    pub occ_threshold: f64,
    /// Optional speed floor; off by default (the display threshold is a
    /// rendering concern, not an evaluation one).
    pub min_speed: Option<f64>,
}

impl Default for ObjectCellRule {
    fn default() -> Self {
        ObjectCellRule {
            occ_threshold: 0.55,
            min_speed: None,
        }
    }
}

/// Cells whose center lies inside the box and whose occupancy passes the
/// threshold (plus the optional speed floor).
pub fn object_cells<F: VelocityField>(field: &F, b: &GtBox, rule: &ObjectCellRule) -> Vec<usize> {
    let spec = field.spec();
    let side = spec.cells_per_side();
    let mut out = Vec::new();
    for row in 0..side {
        for col in 0..side {
            let idx = spec.index(row, col);
            if (field.p_occ_at(idx) as f64) <= rule.occ_threshold {
                continue;
            }
            let (e, n) = spec.cell_center(row, col);
            if !b.contains(Vec2::new(e, n)) {
                continue;
            }
            if let Some(floor) = rule.min_speed {
                let (ve, vn) = field.velocity_at(idx);
                if (ve as f64).hypot(vn as f64) <= floor {
                    continue;
                }
            }
            out.push(idx);
        }
    }
    out
}

/// Statistics of one object in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectFrameStats {
    pub t: f64,
    pub mean_speed: f64,
    /// Circular mean of per-cell velocity orientations, degrees in [0, 360).
    pub mean_orientation_deg: f64,
    pub sigma_speed: f64,
    /// Circular standard deviation, degrees.
    pub sigma_orientation_deg: f64,
    pub n_cells: usize,
}

/// Computes per-frame statistics over the selected cells' velocities.
/// Returns `None` for an empty cell set (frame invalid, excluded upstream).
pub fn frame_stats(velocities: &[(f64, f64)], t: f64) -> Option<ObjectFrameStats> {
    if velocities.is_empty() {
        return None;
    }
    let n = velocities.len() as f64;
    let mut speed_sum = 0.0;
    let mut speed_sq = 0.0;
    let mut cos_sum = 0.0;
    let mut sin_sum = 0.0;
    for (ve, vn) in velocities {
        let speed = ve.hypot(*vn);
        speed_sum += speed;
        speed_sq += speed * speed;
        let ori = vn.atan2(*ve);
        cos_sum += ori.cos();
        sin_sum += ori.sin();
    }
    let mean_speed = speed_sum / n;
    let sigma_speed = (speed_sq / n - mean_speed * mean_speed).max(0.0).sqrt();
    let mean_orientation = sin_sum.atan2(cos_sum).to_degrees().rem_euclid(360.0);
    let r_bar = (cos_sum / n).hypot(sin_sum / n).min(1.0);
    let sigma_orientation = if r_bar > 1e-12 {
        (-2.0 * r_bar.ln()).max(0.0).sqrt().to_degrees()
    } else {
        360.0
    };
    Some(ObjectFrameStats {
        t,
        mean_speed,
        mean_orientation_deg: mean_orientation,
        sigma_speed,
        sigma_orientation_deg: sigma_orientation,
        n_cells: velocities.len(),
    })
}

/// Smallest absolute angular distance in degrees, always ≤ 180.
pub fn angular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Sequence-level summary mirroring the evaluation table columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub approach: String,
    pub scenario: String,
    pub duration_s: f64,
    pub mae_vel: f64,
    pub mae_ori_deg: f64,
    pub mean_sigma_vel: f64,
    pub mean_sigma_ori_deg: f64,
    pub valid_frames: usize,
    pub skipped_frames: usize,
}

/// Aggregates per-frame stats against the reference trajectory.
/// Frames are joined to the reference by nearest timestamp (max gap one
/// step); invalid frames (`None`) are skipped and counted.
pub fn sequence_summary(
    approach: &str,
    scenario: &str,
    frames: &[Option<ObjectFrameStats>],
    times: &[f64],
    reference: &[RefSample],
    max_gap_s: f64,
) -> Result<SequenceReport> {
    if frames.len() != times.len() {
        return Err(CoreError::InvalidConfig(
            "frames and times length mismatch".into(),
        ));
    }
    let mut mae_vel = 0.0;
    let mut mae_ori = 0.0;
    let mut sigma_vel = 0.0;
    let mut sigma_ori = 0.0;
    let mut valid = 0usize;
    let mut skipped = 0usize;
    for (frame, t) in frames.iter().zip(times) {
        let Some(stats) = frame else {
            skipped += 1;
            continue;
        };
        let nearest = reference
            .iter()
            .min_by(|a, b| {
                (a.t - t).abs().partial_cmp(&(b.t - t).abs()).unwrap()
            })
            .filter(|r| (r.t - t).abs() <= max_gap_s);
        let Some(r) = nearest else {
            skipped += 1;
            continue;
        };
        mae_vel += (stats.mean_speed - r.speed).abs();
        mae_ori += angular_distance_deg(stats.mean_orientation_deg, r.orientation_deg);
        sigma_vel += stats.sigma_speed;
        sigma_ori += stats.sigma_orientation_deg;
        valid += 1;
    }
    if valid == 0 {
        return Err(CoreError::NoValidFrames(format!(
            "{approach}/{scenario}: no frame matched the reference"
        )));
    }
    let n = valid as f64;
    let duration = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    Ok(SequenceReport {
        approach: approach.to_string(),
        scenario: scenario.to_string(),
        duration_s: duration,
        mae_vel: mae_vel / n,
        mae_ori_deg: mae_ori / n,
        mean_sigma_vel: sigma_vel / n,
        mean_sigma_ori_deg: sigma_ori / n,
        valid_frames: valid,
        skipped_frames: skipped,
    })
}

pub const REPORT_CSV_HEADER: &str =
    "approach,scenario,duration,MAE_vel,MAE_ori,σ̄_vel,σ̄_ori,valid_frames,skipped_frames";

/// Deterministic CSV mirroring the comparison table layout.
pub fn report_csv(reports: &[SequenceReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{:.1},{:.3},{:.3},{:.3},{:.3},{},{}\n",
            r.approach,
            r.scenario,
            r.duration_s,
            r.mae_vel,
            r.mae_ori_deg,
            r.mean_sigma_vel,
            r.mean_sigma_ori_deg,
            r.valid_frames,
            r.skipped_frames
        ));
    }
    out
}

/// Aligned plain-text table for terminals.
pub fn report_table(reports: &[SequenceReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:<12} {:>9} {:>9} {:>9} {:>8} {:>8}\n",
        "approach", "scenario", "dur [s]", "MAE_vel", "MAE_ori", "σ̄_vel", "σ̄_ori"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<10} {:<12} {:>9.1} {:>9.3} {:>9.3} {:>8.3} {:>8.3}\n",
            r.approach,
            r.scenario,
            r.duration_s,
            r.mae_vel,
            r.mae_ori_deg,
            r.mean_sigma_vel,
            r.mean_sigma_ori_deg
        ));
    }
    out
}

/// Pairs (approach, scenario) rows for the final comparison; errors when a
/// scenario misses one of the approaches.
pub fn compare_report(reports: &[SequenceReport]) -> Result<String> {
    let mut scenarios: Vec<&str> = reports.iter().map(|r| r.scenario.as_str()).collect();
    scenarios.sort();
    scenarios.dedup();
    let approaches: Vec<&str> = {
        let mut a: Vec<&str> = reports.iter().map(|r| r.approach.as_str()).collect();
        a.sort();
        a.dedup();
        a
    };
    for s in &scenarios {
        for a in &approaches {
            if !reports
                .iter()
                .any(|r| r.scenario == *s && r.approach == *a)
            {
                return Err(CoreError::NoValidFrames(format!(
                    "missing report for approach {a} on scenario {s}"
                )));
            }
        }
    }
    Ok(report_csv(reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_stats_uniform_field() {
        let cells = vec![(3.0, 4.0); 6];
        let s = frame_stats(&cells, 0.0).unwrap();
        assert!((s.mean_speed - 5.0).abs() < 1e-12);
        assert!(s.sigma_speed.abs() < 1e-9);
        assert!((s.mean_orientation_deg - 53.13010235415598).abs() < 1e-9);
        assert!(s.sigma_orientation_deg.abs() < 1e-6);
    }

    #[test]
    fn circular_mean_wraps_at_north() {
        let v359 = (359.0f64.to_radians().cos(), 359.0f64.to_radians().sin());
        let v1 = (1.0f64.to_radians().cos(), 1.0f64.to_radians().sin());
        let s = frame_stats(&[v359, v1], 0.0).unwrap();
        assert!(
            s.mean_orientation_deg < 1e-9 || (360.0 - s.mean_orientation_deg) < 1e-9,
            "wraparound mean must be 0°, got {}",
            s.mean_orientation_deg
        );
    }

    #[test]
    fn circular_mean_of_unit_axes_is_45() {
        let s = frame_stats(&[(1.0, 0.0), (0.0, 1.0)], 0.0).unwrap();
        assert!((s.mean_orientation_deg - 45.0).abs() < 1e-9);
    }

    #[test]
    fn velocity_scaling_property() {
        let cells = vec![(1.0, 2.0), (2.0, -0.5), (0.3, 0.4)];
        let scaled: Vec<(f64, f64)> = cells.iter().map(|(a, b)| (3.0 * a, 3.0 * b)).collect();
        let s1 = frame_stats(&cells, 0.0).unwrap();
        let s2 = frame_stats(&scaled, 0.0).unwrap();
        assert!((s2.mean_speed - 3.0 * s1.mean_speed).abs() < 1e-9);
        assert!((s2.sigma_speed - 3.0 * s1.sigma_speed).abs() < 1e-9);
        assert!((s2.mean_orientation_deg - s1.mean_orientation_deg).abs() < 1e-9);
    }

    #[test]
    fn frame_stats_order_invariant() {
        let mut cells = vec![(1.0, 0.2), (0.5, -1.0), (2.0, 2.0), (-0.3, 0.9)];
        let s1 = frame_stats(&cells, 0.0).unwrap();
        cells.reverse();
        let s2 = frame_stats(&cells, 0.0).unwrap();
        assert!((s1.mean_speed - s2.mean_speed).abs() < 1e-12);
        assert!((s1.mean_orientation_deg - s2.mean_orientation_deg).abs() < 1e-9);
    }

    #[test]
    fn angular_distance_bounds() {
        assert!((angular_distance_deg(350.0, 10.0) - 20.0).abs() < 1e-12);
        assert!((angular_distance_deg(0.0, 180.0) - 180.0).abs() < 1e-12);
        for a in [0.0, 90.0, 243.0] {
            for b in [17.0, 181.0, 359.0] {
                let d = angular_distance_deg(a, b);
                assert!((0.0..=180.0).contains(&d));
                assert!((d - angular_distance_deg(b, a)).abs() < 1e-12);
            }
        }
    }

    fn reference_const(speed: f64, ori: f64, n: usize, dt: f64) -> Vec<RefSample> {
        (0..n)
            .map(|k| RefSample {
                t: k as f64 * dt,
                position: Vec2::new(0.0, 0.0),
                speed,
                orientation_deg: ori,
            })
            .collect()
    }

    #[test]
    fn summary_zero_error_when_identical() {
        let reference = reference_const(5.0, 90.0, 10, 0.1);
        let frames: Vec<Option<ObjectFrameStats>> = reference
            .iter()
            .map(|r|

                frame_stats(
                    &[(
                        r.speed * r.orientation_deg.to_radians().cos(),
                        r.speed * r.orientation_deg.to_radians().sin(),
                    )],
                    r.t,
                )
            )
            .collect();
        let times: Vec<f64> = reference.iter().map(|r| r.t).collect();
        let rep = sequence_summary("ours", "straight", &frames, &times, &reference, 0.1).unwrap();
        assert!(rep.mae_vel < 1e-9);
        assert!(rep.mae_ori_deg < 1e-9);
    }

    #[test]
    fn summary_constant_speed_bias() {
        let reference = reference_const(5.0, 0.0, 10, 0.1);
        let frames: Vec<Option<ObjectFrameStats>> = reference
            .iter()
            .map(|r| frame_stats(&[(5.5, 0.0)], r.t))
            .collect();
        let times: Vec<f64> = reference.iter().map(|r| r.t).collect();
        let rep = sequence_summary("pf", "straight", &frames, &times, &reference, 0.1).unwrap();
        assert!((rep.mae_vel - 0.5).abs() < 1e-9);
    }

    #[test]
    fn summary_single_frame_exact() {
        let reference = reference_const(2.0, 45.0, 1, 0.1);
        let frames = vec![frame_stats(&[(2.0, 0.0)], 0.0)];
        let rep =
            sequence_summary("pf", "s", &frames, &[0.0], &reference, 0.1).unwrap();
        assert!((rep.mae_ori_deg - 45.0).abs() < 1e-9);
        assert!(rep.mae_vel.abs() < 1e-9);
        assert_eq!(rep.valid_frames, 1);
    }

    #[test]
    fn summary_errors_without_valid_frames() {
        let reference = reference_const(1.0, 0.0, 3, 0.1);
        let frames: Vec<Option<ObjectFrameStats>> = vec![None, None, None];
        assert!(matches!(
            sequence_summary("x", "y", &frames, &[0.0, 0.1, 0.2], &reference, 0.1),
            Err(CoreError::NoValidFrames(_))
        ));
    }

    #[test]
    fn report_csv_layout() {
        let rep = SequenceReport {
            approach: "ours".into(),
            scenario: "circles".into(),
            duration_s: 13.0,
            mae_vel: 0.5,
            mae_ori_deg: 6.0,
            mean_sigma_vel: 0.3,
            mean_sigma_ori_deg: 4.0,
            valid_frames: 100,
            skipped_frames: 2,
        };
        let mut rep_pf = rep.clone();
        rep_pf.approach = "pf".into();
        let csv = compare_report(&[rep.clone(), rep_pf]).unwrap();
        assert!(csv.starts_with(REPORT_CSV_HEADER));
        assert!(csv.contains("MAE_vel"));
        assert!(csv.contains("σ̄_ori"));
        assert_eq!(csv.lines().count(), 3);
        // Byte-identical regeneration.
        let mut rep_pf2 = rep.clone();
        rep_pf2.approach = "pf".into();
        assert_eq!(csv, compare_report(&[rep, rep_pf2]).unwrap());
    }

    #[test]
    fn compare_report_missing_pairing() {
        let rep = SequenceReport {
            approach: "ours".into(),
            scenario: "circles".into(),
            duration_s: 1.0,
            mae_vel: 0.0,
            mae_ori_deg: 0.0,
            mean_sigma_vel: 0.0,
            mean_sigma_ori_deg: 0.0,
            valid_frames: 1,
            skipped_frames: 0,
        };
        let mut other = rep.clone();
        other.approach = "pf".into();
        other.scenario = "straight".into();
        assert!(compare_report(&[rep, other]).is_err());
    }

    #[test]
    fn object_cells_rules() {
        let spec = GridSpec::centered(16, 0.5).unwrap();
        let n = spec.n_cells();
        let mut grid = DynamicGrid::zeros(spec);
        let b = GtBox {
            id: "car".into(),
            center: Vec2::new(0.0, 0.0),
            length: 2.0,
            width: 2.0,
            heading_rad: 0.0,
            velocity: Vec2::new(1.0, 0.0),
        };
        // Occupied patch partly inside the box, partly outside.
        for i in 0..n {
            grid.m_occ[i] = 0.0;
        }
        let inside = spec.world_to_cell(0.1, 0.1).unwrap();
        let outside = spec.world_to_cell(3.0, 3.0).unwrap();
        grid.m_occ[spec.index(inside.0, inside.1)] = 0.9;
        grid.m_occ[spec.index(outside.0, outside.1)] = 0.9;
        let cells = object_cells(&grid, &b, &ObjectCellRule::default());
        assert_eq!(cells, vec![spec.index(inside.0, inside.1)]);
        // Box over free space → empty set → invalid frame.
        let far_box = GtBox {
            center: Vec2::new(-3.0, -3.0),
            ..b
        };
        assert!(object_cells(&grid, &far_box, &ObjectCellRule::default()).is_empty());
        assert!(frame_stats(&[], 0.0).is_none());
    }
}
