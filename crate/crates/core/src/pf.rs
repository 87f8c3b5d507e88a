//! Particle-filter dynamic occupancy grid baseline.
//!
//! Constant-velocity particles carry occupied mass through time. Each update
//! combines the predicted per-cell mass with the measurement's evidence
//! masses (Dempster's rule on the {occupied, free, unknown} frame), rescales
//! resident particle weights to the fused mass and spawns fresh particles in
//! measured-occupied cells without support. Free mass is taken from the
//! current measurement, so `M_O + M_F ≤ 1` holds by construction.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{DynamicGrid, GridSpec, MeasurementGrid, VelocityStats};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pos_east: f64,
    pub pos_north: f64,
    pub vel_east: f64,
    pub vel_north: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfConfig {
    pub particles_per_cell_birth: usize,
    pub max_particles: usize,
    /// Std-dev of the per-step Gaussian velocity perturbation, m/s.
    pub process_noise_sigma_v: f64,
    /// Std-dev of birth particle velocities, m/s per component.
    pub birth_velocity_sigma: f64,
    /// Weight survival factor applied in prediction.
    pub persistence_prob: f64,
}

impl Default for PfConfig {
    fn default() -> Self {
        PfConfig {
            particles_per_cell_birth: 10,
            max_particles: 200_000,
            process_noise_sigma_v: 0.5,
            birth_velocity_sigma: 4.0,
            persistence_prob: 0.99,
        }
    }
}

impl PfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles_per_cell_birth == 0 || self.max_particles == 0 {
            return Err(CoreError::InvalidConfig(
                "particle counts must be positive".into(),
            ));
        }
        if self.process_noise_sigma_v < 0.0 || self.birth_velocity_sigma <= 0.0 {
            return Err(CoreError::InvalidConfig("noise sigmas invalid".into()));
        }
        if !(0.0 < self.persistence_prob && self.persistence_prob <= 1.0) {
            return Err(CoreError::InvalidConfig(
                "persistence_prob must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Cells with less occupied mass than this keep zeroed velocity statistics;
/// below it the weighted moments are noise.
pub const VELOCITY_STATS_MIN_MASS: f64 = 0.1;

/// Particle budget per unit of total occupied mass used when resampling.
const RESAMPLE_PARTICLES_PER_MASS: f64 = 120.0;

/// Minimum resample budget so sparse scenes keep a usable population.
const RESAMPLE_MIN: usize = 512;

/// Fraction of newborn particles spawned from the near-zero "static world"
/// velocity prior. Pure wide-Gaussian births almost never produce the slow
/// genomes a static surface needs, so cells would churn with fast newborns
/// forever; the mixture mirrors the static/dynamic birth split common in
/// grid filters. The static prior keeps a small spread so stale newborns
/// stranded in occluded space disperse instead of living forever.
const STATIC_BIRTH_FRACTION: f64 = 0.3;

/// Extra per-step weight decay in cells with no measurement evidence.
/// Particles stranded in occluded space (including stale zero-velocity
/// births) fade instead of living forever on persistence alone.
const OCCLUSION_DECAY: f64 = 0.85;

/// Advances every particle by its velocity, perturbs velocities with process
/// noise, scales weights by the persistence probability and drops particles
/// that left the grid.
pub fn pf_predict(
    particles: &mut Vec<Particle>,
    dt: f64,
    spec: &GridSpec,
    cfg: &PfConfig,
    rng: &mut ChaCha8Rng,
) {
    debug_assert!(dt > 0.0);
    let noise = Normal::new(0.0, cfg.process_noise_sigma_v).unwrap();
    let (oe, on) = spec.origin();
    let side = spec.side_length();
    particles.retain_mut(|p| {
        p.pos_east += p.vel_east * dt;
        p.pos_north += p.vel_north * dt;
        if cfg.process_noise_sigma_v > 0.0 {
            p.vel_east += noise.sample(rng);
            p.vel_north += noise.sample(rng);
        }
        p.weight *= cfg.persistence_prob;
        let in_grid = p.pos_east >= oe
            && p.pos_east < oe + side
            && p.pos_north >= on
            && p.pos_north < on + side;
        in_grid && p.weight > 1e-12
    });
}

/// Dempster combination of a particle-mass prior (occupied mass only, the
/// rest is ignorance) with the measurement masses. Returns (M_O, M_F).
fn fuse_masses(m_occ_pred: f64, m_occ_meas: f64, m_free_meas: f64) -> (f64, f64) {
    let theta_meas = 1.0 - m_occ_meas - m_free_meas;
    let conflict = m_occ_pred * m_free_meas;
    let denom = 1.0 - conflict;
    let m_o = (m_occ_pred * (m_occ_meas + theta_meas) + (1.0 - m_occ_pred) * m_occ_meas) / denom;
    let m_f = ((1.0 - m_occ_pred) * m_free_meas) / denom;
    (m_o, m_f)
}

/// Weight update against one measurement grid. Returns the fused dynamic
/// grid (masses, per-cell mean velocities and velocity second moments).
pub fn pf_update(
    particles: &mut Vec<Particle>,
    meas: &MeasurementGrid,
    spec: &GridSpec,
    cfg: &PfConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DynamicGrid> {
    spec.ensure_same(meas.spec(), "pf_update measurement grid")?;
    let n = spec.n_cells();
    let side = spec.cells_per_side();

    // Bin particles by cell.
    let mut cell_of = vec![usize::MAX; particles.len()];
    let mut counts = vec![0u32; n];
    for (i, p) in particles.iter().enumerate() {
        if let Some((r, c)) = spec.world_to_cell(p.pos_east, p.pos_north) {
            let idx = r * side + c;
            cell_of[i] = idx;
            counts[idx] += 1;
        }
    }
    let mut start = vec![0usize; n + 1];
    for i in 0..n {
        start[i + 1] = start[i] + counts[i] as usize;
    }
    let mut order = vec![0usize; particles.len()];
    let mut cursor = start.clone();
    for (i, &cell) in cell_of.iter().enumerate() {
        if cell != usize::MAX {
            order[cursor[cell]] = i;
            cursor[cell] += 1;
        }
    }

    let mut grid = DynamicGrid::zeros(*spec);
    let mut stats = VelocityStats {
        var_east: vec![0.0; n],
        var_north: vec![0.0; n],
        cov: vec![0.0; n],
    };
    let mut births: Vec<Particle> = Vec::new();
    let birth_vel = Normal::new(0.0, cfg.birth_velocity_sigma).unwrap();

    for idx in 0..n {
        let p_meas = (meas.p_occ()[idx] as f64).clamp(0.01, 0.99);
        let m_occ_meas = (2.0 * p_meas - 1.0).max(0.0);
        let m_free_meas = (1.0 - 2.0 * p_meas).max(0.0);
        let slice = &order[start[idx]..start[idx + 1]];
        let w_pred: f64 = slice.iter().map(|&i| particles[i].weight).sum();
        let m_occ_pred = w_pred.min(0.999);
        let (m_o, m_f) = fuse_masses(m_occ_pred, m_occ_meas, m_free_meas);

        let birth_from = births.len();
        // Persistent particles track the fused mass, but their collective
        // weight may at most quadruple per step; a lone passer-by must not
        // inherit a whole surface's mass and carry it away. Cells without
        // any evidence decay instead.
        let neutral = m_occ_meas <= 1e-3 && m_free_meas <= 1e-3;
        let scale = if neutral {
            OCCLUSION_DECAY
        } else if w_pred > 0.0 {
            (m_o / w_pred).min(4.0)
        } else {
            0.0
        };
        for &i in slice {
            particles[i].weight *= scale;
        }
        let covered = w_pred * scale;
        if m_occ_meas > 1e-3 && covered < 0.25 * m_o {
            // Occupied evidence not yet carried by particles: spawn fresh
            // ones with velocities from the birth prior to fill the deficit.
            let missing = m_o - covered;
            let nb = cfg.particles_per_cell_birth;
            let w_each = missing / nb as f64;
            let row = idx / side;
            let col = idx % side;
            let (ce, cn) = spec.cell_center(row, col);
            let cs = spec.cell_size();
            let nb_static = (nb as f64 * STATIC_BIRTH_FRACTION).round() as usize;
            for j in 0..nb {
                let (ve, vn) = if j < nb_static {
                    (0.0, 0.0)
                } else {
                    (birth_vel.sample(rng), birth_vel.sample(rng))
                };
                births.push(Particle {
                    pos_east: ce + (rng.gen::<f64>() - 0.5) * cs,
                    pos_north: cn + (rng.gen::<f64>() - 0.5) * cs,
                    vel_east: ve,
                    vel_north: vn,
                    weight: w_each,
                });
            }
        }
        let cell_mass = covered
            + births[birth_from..]
                .iter()
                .map(|p| p.weight)
                .sum::<f64>();

        grid.m_occ[idx] = cell_mass.min(1.0) as f32;
        grid.m_free[idx] = m_f.min(1.0 - cell_mass.min(1.0)) as f32;

        // Velocity statistics over the full post-update cell population:
        // surviving residents plus this cell's newborn particles.
        if cell_mass > VELOCITY_STATS_MIN_MASS {
            let mut w_sum = 0.0;
            let (mut se, mut sn) = (0.0f64, 0.0f64);
            let (mut see, mut snn, mut sen) = (0.0f64, 0.0f64, 0.0f64);
            let residents = slice.iter().map(|&i| &particles[i]);
            for p in residents.chain(births[birth_from..].iter()) {
                w_sum += p.weight;
                se += p.weight * p.vel_east;
                sn += p.weight * p.vel_north;
                see += p.weight * p.vel_east * p.vel_east;
                snn += p.weight * p.vel_north * p.vel_north;
                sen += p.weight * p.vel_east * p.vel_north;
            }
            if w_sum > 1e-12 {
                let me = se / w_sum;
                let mn = sn / w_sum;
                grid.vel_east[idx] = me as f32;
                grid.vel_north[idx] = mn as f32;
                stats.var_east[idx] = ((see / w_sum - me * me).max(0.0)) as f32;
                stats.var_north[idx] = ((snn / w_sum - mn * mn).max(0.0)) as f32;
                stats.cov[idx] = (sen / w_sum - me * mn) as f32;
            }
        }
    }

    particles.retain(|p| p.weight > 1e-12);
    particles.extend(births);
    grid.stats = Some(stats);
    Ok(grid)
}

/// Systematic (low-variance) resampling to exactly `target` particles.
/// Total weight is preserved; each survivor carries weight total/target.
/// Returns an empty set when all weight is gone (lost track).
pub fn systematic_resample(
    particles: &[Particle],
    target: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Particle> {
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    if total <= 0.0 || particles.is_empty() || target == 0 {
        return Vec::new();
    }
    let step = total / target as f64;
    let mut offset = rng.gen::<f64>() * step;
    let w_each = total / target as f64;
    let mut out = Vec::with_capacity(target);
    let mut acc = 0.0;
    let mut i = 0;
    for _ in 0..target {
        while acc + particles[i].weight < offset && i + 1 < particles.len() {
            acc += particles[i].weight;
            i += 1;
        }
        let mut p = particles[i];
        p.weight = w_each;
        out.push(p);
        offset += step;
    }
    out
}

/// Resampling entry matching the filter contract: caps the population at
/// `max_particles` and equalizes weights.
pub fn pf_resample(
    particles: &[Particle],
    cfg: &PfConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Particle> {
    let target = particles.len().min(cfg.max_particles);
    systematic_resample(particles, target, rng)
}

/// The predict → update → resample state machine.
#[derive(Debug, Clone)]
pub struct ParticleFilter {
    spec: GridSpec,
    cfg: PfConfig,
    particles: Vec<Particle>,
    rng: ChaCha8Rng,
}

impl ParticleFilter {
    pub fn new(spec: GridSpec, cfg: PfConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(ParticleFilter {
            spec,
            cfg,
            particles: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn config(&self) -> &PfConfig {
        &self.cfg
    }

    /// One full filter cycle against the next measurement grid.
    pub fn step(&mut self, meas: &MeasurementGrid, dt: f64) -> Result<DynamicGrid> {
        pf_predict(&mut self.particles, dt, &self.spec, &self.cfg, &mut self.rng);
        let grid = pf_update(
            &mut self.particles,
            meas,
            &self.spec,
            &self.cfg,
            &mut self.rng,
        )?;
        // Resample to the mass-proportional budget every step. This both
        // caps the population and splits heavy particles into copies that
        // process noise then diversifies.
        let total: f64 = self.particles.iter().map(|p| p.weight).sum();
        if total > 0.0 {
            let budget = ((total * RESAMPLE_PARTICLES_PER_MASS) as usize)
                .max(RESAMPLE_MIN)
                .min(self.cfg.max_particles);
            self.particles = systematic_resample(&self.particles, budget, &mut self.rng);
        }
        Ok(grid)
    }
}

/// Runs the filter over a measurement grid sequence, one output per step.
pub fn run_pf_sequence(
    grids: &[MeasurementGrid],
    spec: &GridSpec,
    cfg: &PfConfig,
    seed: u64,
    dt: f64,
) -> Result<Vec<DynamicGrid>> {
    if grids.is_empty() {
        return Err(CoreError::InvalidConfig(
            "pf sequence needs at least one grid".into(),
        ));
    }
    let mut filter = ParticleFilter::new(*spec, *cfg, seed)?;
    grids.iter().map(|g| filter.step(g, dt)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meas::{build_measurement_grid, InverseSensorConfig};
    use crate::sim::{LidarScan, Vec2, NO_RETURN};

    fn spec() -> GridSpec {
        GridSpec::centered(64, 0.25).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn predict_moves_and_conserves() {
        let s = spec();
        let cfg = PfConfig {
            process_noise_sigma_v: 0.0,
            persistence_prob: 1.0,
            ..PfConfig::default()
        };
        let mut particles = vec![Particle {
            pos_east: 0.0,
            pos_north: 0.0,
            vel_east: 5.0,
            vel_north: 0.0,
            weight: 0.4,
        }];
        let mut r = rng(1);
        pf_predict(&mut particles, 0.1, &s, &cfg, &mut r);
        assert!((particles[0].pos_east - 0.5).abs() < 1e-12);
        assert!((particles[0].weight - 0.4).abs() < 1e-15);
    }

    #[test]
    fn predict_drops_departures() {
        let s = spec();
        let cfg = PfConfig::default();
        // Just inside the east edge, moving east.
        let (oe, _) = s.origin();
        let mut particles = vec![Particle {
            pos_east: oe + s.side_length() - 0.01,
            pos_north: 0.0,
            vel_east: 5.0,
            vel_north: 0.0,
            weight: 1.0,
        }];
        let mut r = rng(2);
        pf_predict(&mut particles, 0.1, &s, &cfg, &mut r);
        assert!(particles.is_empty());
    }

    fn neutral_grid(s: &GridSpec) -> MeasurementGrid {
        MeasurementGrid::unobserved(*s)
    }

    fn occupied_scan(ranges: &[(f64, f64)]) -> LidarScan {
        LidarScan {
            sensor_pose: Vec2::new(0.0, 0.0),
            timestamp: 0.0,
            beams: ranges.to_vec(),
        }
    }

    #[test]
    fn neutral_input_decays_mass() {
        let s = spec();
        let cfg = PfConfig::default();
        let mut filter = ParticleFilter::new(s, cfg, 3).unwrap();
        // Converge on an occupied patch first.
        let scan = occupied_scan(&[(0.0, 4.0), (0.02, 4.0), (0.04, 4.0)]);
        let meas = build_measurement_grid(&scan, &s, 40.0, &InverseSensorConfig::default()).unwrap();
        for _ in 0..5 {
            filter.step(&meas, 0.1).unwrap();
        }
        let neutral = neutral_grid(&s);
        let mut prev_total: f64 = filter.particles.iter().map(|p| p.weight).sum();
        assert!(prev_total > 0.1);
        let mut last_max = 1.0f32;
        for _ in 0..40 {
            let grid = filter.step(&neutral, 0.1).unwrap();
            let total: f64 = filter.particles.iter().map(|p| p.weight).sum();
            assert!(total <= prev_total + 1e-9, "weight must not grow");
            prev_total = total;
            last_max = grid.m_occ.iter().cloned().fold(0.0, f32::max);
        }
        assert!(last_max < 0.5, "mass should decay toward 0, got {last_max}");
    }

    #[test]
    fn static_cell_velocity_converges_to_zero() {
        let s = spec();
        let cfg = PfConfig {
            process_noise_sigma_v: 0.0,
            ..PfConfig::default()
        };
        // Finite wall at 5 m east seen by a full 360° sweep, zero noise:
        // beams that miss the wall report no return, so the free space
        // around the wall is observed and kills drifting particles.
        let beams: Vec<(f64, f64)> = (0..360)
            .map(|i| {
                let az = i as f64 * std::f64::consts::TAU / 360.0;
                let (c, sn) = (az.cos(), az.sin());
                // Wall spans north ∈ [-2, 2] at east = 5.
                if c > 0.0 {
                    let t = 5.0 / c;
                    let north = sn * t;
                    if (-2.0..=2.0).contains(&north) && t <= 40.0 {
                        return (az, t);
                    }
                }
                (az, NO_RETURN)
            })
            .collect();
        let meas = build_measurement_grid(
            &occupied_scan(&beams),
            &s,
            40.0,
            &InverseSensorConfig::default(),
        )
        .unwrap();
        let mut filter = ParticleFilter::new(s, cfg, 11).unwrap();
        let mut grid = DynamicGrid::zeros(s);
        for _ in 0..20 {
            grid = filter.step(&meas, 0.1).unwrap();
        }
        let mut worst: f64 = 0.0;
        for i in 0..s.n_cells() {
            // Observed wall cells: measured occupied and converged.
            if grid.m_occ[i] > 0.5 && meas.p_occ()[i] > 0.5 {
                let v = (grid.vel_east[i] as f64).hypot(grid.vel_north[i] as f64);
                worst = worst.max(v);
            }
        }
        assert!(worst < 0.3, "static speed estimate {worst} ≥ 0.3");
    }

    #[test]
    fn translating_object_velocity_converges() {
        let s = spec();
        let cfg = PfConfig::default();
        let mut filter = ParticleFilter::new(s, cfg, 17).unwrap();
        // A 2 m-wide flat target moving east at 5 m/s in the northern half of
        // the grid; beams hit sample points spread along its south face.
        let mut grid = DynamicGrid::zeros(s);
        for k in 0..20 {
            let t = k as f64 * 0.1;
            let center_e = -5.0 + 5.0 * t;
            let beams: Vec<(f64, f64)> = (-20..=20)
                .map(|j| {
                    let east = center_e + j as f64 * 0.05;
                    let north = 4.0f64;
                    (north.atan2(east), (east * east + north * north).sqrt())
                })
                .collect();
            let scan = LidarScan {
                sensor_pose: Vec2::new(0.0, 0.0),
                timestamp: t,
                beams,
            };
            let meas =
                build_measurement_grid(&scan, &s, 40.0, &InverseSensorConfig::default()).unwrap();
            grid = filter.step(&meas, 0.1).unwrap();
        }
        // Weighted mean v_E over occupied cells.
        let mut v_sum = 0.0f64;
        let mut w_sum = 0.0f64;
        for i in 0..s.n_cells() {
            if grid.m_occ[i] > 0.3 {
                v_sum += grid.m_occ[i] as f64 * grid.vel_east[i] as f64;
                w_sum += grid.m_occ[i] as f64;
            }
        }
        assert!(w_sum > 0.0);
        let mean_ve = v_sum / w_sum;
        assert!(
            (4.0..=6.0).contains(&mean_ve),
            "mean v_E {mean_ve} outside [4, 6]"
        );
    }

    #[test]
    fn resample_uniform_keeps_count_and_equalizes() {
        let particles: Vec<Particle> = (0..100)
            .map(|i| Particle {
                pos_east: i as f64,
                pos_north: 0.0,
                vel_east: 0.0,
                vel_north: 0.0,
                weight: 0.01,
            })
            .collect();
        let cfg = PfConfig::default();
        let mut r = rng(5);
        let out = pf_resample(&particles, &cfg, &mut r);
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|p| (p.weight - 0.01).abs() < 1e-15));
    }

    #[test]
    fn resample_concentrated_weight_copies_state() {
        let mut particles: Vec<Particle> = (0..50)
            .map(|i| Particle {
                pos_east: i as f64,
                pos_north: 1.0,
                vel_east: 0.0,
                vel_north: 0.0,
                weight: 0.0,
            })
            .collect();
        particles[17].weight = 2.5;
        let cfg = PfConfig::default();
        let mut r = rng(6);
        let out = pf_resample(&particles, &cfg, &mut r);
        assert_eq!(out.len(), 50);
        assert!(out.iter().all(|p| p.pos_east == 17.0));
        let total: f64 = out.iter().map(|p| p.weight).sum();
        assert!((total - 2.5).abs() < 1e-9);
    }

    #[test]
    fn resample_conserves_weight() {
        let mut r = rng(7);
        for trial in 0..20 {
            let n = 10 + trial * 37;
            let particles: Vec<Particle> = (0..n)
                .map(|i| Particle {
                    pos_east: i as f64 * 0.1,
                    pos_north: 0.0,
                    vel_east: 0.0,
                    vel_north: 0.0,
                    weight: r.gen::<f64>() + 1e-6,
                })
                .collect();
            let before: f64 = particles.iter().map(|p| p.weight).sum();
            let out = systematic_resample(&particles, 64 + trial, &mut r);
            let after: f64 = out.iter().map(|p| p.weight).sum();
            assert!(
                ((before - after) / before).abs() < 1e-9,
                "weight drifted: {before} → {after}"
            );
        }
    }

    #[test]
    fn resample_zero_weight_returns_empty() {
        let particles = vec![Particle {
            pos_east: 0.0,
            pos_north: 0.0,
            vel_east: 0.0,
            vel_north: 0.0,
            weight: 0.0,
        }];
        let mut r = rng(8);
        assert!(pf_resample(&particles, &PfConfig::default(), &mut r).is_empty());
    }

    #[test]
    fn emitted_grids_satisfy_mass_constraint() {
        let s = spec();
        let scan = occupied_scan(&[(0.0, 3.0), (1.0, 5.0), (2.0, NO_RETURN), (3.0, 2.0)]);
        let meas = build_measurement_grid(&scan, &s, 10.0, &InverseSensorConfig::default()).unwrap();
        let grids = run_pf_sequence(
            &vec![meas; 8],
            &s,
            &PfConfig::default(),
            21,
            0.1,
        )
        .unwrap();
        for g in &grids {
            g.validate_masses().unwrap();
            for i in 0..s.n_cells() {
                let p = g.p_occ_at(i);
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn determinism_under_fixed_seed() {
        let s = spec();
        let scan = occupied_scan(&[(0.0, 3.0), (0.5, 4.0)]);
        let meas = build_measurement_grid(&scan, &s, 10.0, &InverseSensorConfig::default()).unwrap();
        let run = || {
            run_pf_sequence(&vec![meas.clone(); 6], &s, &PfConfig::default(), 42, 0.1).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (ga, gb) in a.iter().zip(&b) {
            assert_eq!(ga, gb);
        }
    }
}
