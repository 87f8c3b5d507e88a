//! Synthetic 2-D world and lidar raycaster.
//!
//! The ego sensor sits still at the world origin while rectangular agents
//! follow scripted trajectories among convex polygon obstacles. Beams are
//! cast against every obstacle and agent edge; the nearest intersection wins.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::GridSpec;

pub const NO_RETURN: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub east: f64,
    pub north: f64,
}

impl Vec2 {
    pub fn new(east: f64, north: f64) -> Self {
        Vec2 { east, north }
    }

    pub fn norm(&self) -> f64 {
        self.east.hypot(self.north)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading_rad: f64,
}

/// Scripted motion of one agent. Poses are closed-form in time, so scene
/// stepping is exact and trivially deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// Constant velocity along a fixed heading.
    StraightCv {
        start: Vec2,
        heading_deg: f64,
        speed: f64,
    },
    /// Straight line with a piecewise-linear speed-vs-time profile.
    StopAndGo {
        start: Vec2,
        heading_deg: f64,
        /// (time s, speed m/s) knots, times strictly increasing.
        profile: Vec<(f64, f64)>,
    },
    /// Circular motion at constant angular speed (rad/s, CCW positive).
    Circle {
        center: Vec2,
        radius: f64,
        angular_speed: f64,
        phase_deg: f64,
    },
}

impl Trajectory {
    pub fn pose(&self, t: f64) -> Pose {
        match self {
            Trajectory::StraightCv {
                start,
                heading_deg,
                speed,
            } => {
                let h = heading_deg.to_radians();
                Pose {
                    position: Vec2::new(
                        start.east + speed * t * h.cos(),
                        start.north + speed * t * h.sin(),
                    ),
                    heading_rad: h,
                }
            }
            Trajectory::StopAndGo {
                start,
                heading_deg,
                profile,
            } => {
                let h = heading_deg.to_radians();
                let s = profile_distance(profile, t);
                Pose {
                    position: Vec2::new(start.east + s * h.cos(), start.north + s * h.sin()),
                    heading_rad: h,
                }
            }
            Trajectory::Circle {
                center,
                radius,
                angular_speed,
                phase_deg,
            } => {
                let phi = phase_deg.to_radians() + angular_speed * t;
                let tangent = phi + std::f64::consts::FRAC_PI_2 * angular_speed.signum();
                Pose {
                    position: Vec2::new(
                        center.east + radius * phi.cos(),
                        center.north + radius * phi.sin(),
                    ),
                    heading_rad: tangent,
                }
            }
        }
    }

    /// Exact velocity of the trajectory script at time t.
    pub fn velocity(&self, t: f64) -> Vec2 {
        match self {
            Trajectory::StraightCv {
                heading_deg, speed, ..
            } => {
                let h = heading_deg.to_radians();
                Vec2::new(speed * h.cos(), speed * h.sin())
            }
            Trajectory::StopAndGo {
                heading_deg,
                profile,
                ..
            } => {
                let h = heading_deg.to_radians();
                let s = profile_speed(profile, t);
                Vec2::new(s * h.cos(), s * h.sin())
            }
            Trajectory::Circle {
                radius,
                angular_speed,
                phase_deg,
                ..
            } => {
                let phi = phase_deg.to_radians() + angular_speed * t;
                Vec2::new(
                    -radius * angular_speed * phi.sin(),
                    radius * angular_speed * phi.cos(),
                )
            }
        }
    }
}

fn profile_speed(profile: &[(f64, f64)], t: f64) -> f64 {
    if profile.is_empty() {
        return 0.0;
    }
    if t <= profile[0].0 {
        return profile[0].1;
    }
    for w in profile.windows(2) {
        let (t0, s0) = w[0];
        let (t1, s1) = w[1];
        if t <= t1 {
            let a = (t - t0) / (t1 - t0);
            return s0 + a * (s1 - s0);
        }
    }
    profile.last().unwrap().1
}

/// Distance travelled up to time t: exact integral of the piecewise-linear
/// speed profile (trapezoids).
fn profile_distance(profile: &[(f64, f64)], t: f64) -> f64 {
    if profile.is_empty() {
        return 0.0;
    }
    let mut dist = 0.0;
    if t <= profile[0].0 {
        return profile[0].1 * t.max(0.0).min(profile[0].0);
    }
    // Speed before the first knot is held constant.
    dist += profile[0].1 * profile[0].0;
    for w in profile.windows(2) {
        let (t0, s0) = w[0];
        let (t1, s1) = w[1];
        if t >= t1 {
            dist += 0.5 * (s0 + s1) * (t1 - t0);
        } else {
            let st = profile_speed(profile, t);
            dist += 0.5 * (s0 + st) * (t - t0);
            return dist;
        }
    }
    let (t_last, s_last) = *profile.last().unwrap();
    dist + s_last * (t - t_last)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub id: String,
    pub length: f64,
    pub width: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub n_beams: usize,
    pub max_range: f64,
    pub range_noise_sigma: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            n_beams: 360,
            max_range: 40.0,
            range_noise_sigma: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub cells_per_side: usize,
    pub cell_size: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cells_per_side: 128,
            cell_size: 0.25,
        }
    }
}

impl GridConfig {
    pub fn to_spec(&self) -> Result<GridSpec> {
        GridSpec::centered(self.cells_per_side, self.cell_size)
    }
}

/// Full scenario description: world content, sensor, timing and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub name: String,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    /// Convex polygons, CCW vertex lists in world meters.
    pub obstacles: Vec<Vec<Vec2>>,
    pub agents: Vec<AgentConfig>,
    pub seed: u64,
    pub duration_s: f64,
    pub rate_hz: f64,
}

impl SceneConfig {
    pub fn n_steps(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }
}

/// One full 360° sweep. Azimuths are strictly increasing over [0, 2π);
/// a range of `NO_RETURN` marks a beam without an echo.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub sensor_pose: Vec2,
    pub timestamp: f64,
    pub beams: Vec<(f64, f64)>,
}

/// Oriented ground-truth box with the exact script velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub id: String,
    pub center: Vec2,
    pub length: f64,
    pub width: f64,
    pub heading_rad: f64,
    pub velocity: Vec2,
}

impl GtBox {
    pub fn corners(&self) -> [Vec2; 4] {
        rect_corners(self.center, self.length, self.width, self.heading_rad)
    }

    /// Point-in-rectangle test in the box frame.
    pub fn contains(&self, p: Vec2) -> bool {
        let c = self.heading_rad.cos();
        let s = self.heading_rad.sin();
        let de = p.east - self.center.east;
        let dn = p.north - self.center.north;
        let local_x = de * c + dn * s;
        let local_y = -de * s + dn * c;
        local_x.abs() <= self.length / 2.0 && local_y.abs() <= self.width / 2.0
    }
}

fn rect_corners(center: Vec2, length: f64, width: f64, heading: f64) -> [Vec2; 4] {
    let c = heading.cos();
    let s = heading.sin();
    let hl = length / 2.0;
    let hw = width / 2.0;
    let mk = |x: f64, y: f64| Vec2::new(center.east + x * c - y * s, center.north + x * s + y * c);
    [mk(hl, hw), mk(-hl, hw), mk(-hl, -hw), mk(hl, -hw)]
}

#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

/// Ray/segment intersection distance from `origin` along unit `dir`,
/// or `None` when they miss.
pub fn ray_segment_distance(origin: Vec2, dir: Vec2, seg: &Segment) -> Option<f64> {
    let ex = seg.b.east - seg.a.east;
    let ey = seg.b.north - seg.a.north;
    let denom = dir.east * ey - dir.north * ex;
    if denom.abs() < 1e-12 {
        return None;
    }
    let ax = seg.a.east - origin.east;
    let ay = seg.a.north - origin.north;
    let t = (ax * ey - ay * ex) / denom;
    let s = (ax * dir.north - ay * dir.east) / denom;
    if t >= 1e-9 && (-1e-12..=1.0 + 1e-12).contains(&s) {
        Some(t)
    } else {
        None
    }
}

/// Simulation state: the config plus current time and the noise stream.
#[derive(Debug, Clone)]
pub struct Scene {
    config: SceneConfig,
    time: f64,
    rng: ChaCha8Rng,
}

impl Scene {
    pub fn new(config: SceneConfig) -> Result<Self> {
        if config.rate_hz <= 0.0 || config.duration_s <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "rate_hz and duration_s must be positive".into(),
            ));
        }
        if config.sensor.n_beams < 4 {
            return Err(CoreError::InvalidConfig("n_beams must be ≥ 4".into()));
        }
        if config.sensor.max_range <= 0.0 {
            return Err(CoreError::InvalidConfig("max_range must be positive".into()));
        }
        for poly in &config.obstacles {
            if poly.len() < 3 {
                return Err(CoreError::InvalidConfig(
                    "obstacle polygons need at least 3 vertices".into(),
                ));
            }
        }
        // Agents must not start inside a static obstacle.
        for agent in &config.agents {
            let pose = agent.trajectory.pose(0.0);
            let corners = rect_corners(pose.position, agent.length, agent.width, pose.heading_rad);
            for poly in &config.obstacles {
                if convex_overlap(&corners, poly) {
                    return Err(CoreError::InvalidConfig(format!(
                        "agent {} starts overlapping a static obstacle",
                        agent.id
                    )));
                }
            }
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Scene {
            config,
            time: 0.0,
            rng,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Advances all agents along their scripts by dt.
    pub fn step(&mut self, dt: f64) {
        debug_assert!(dt > 0.0);
        self.time += dt;
    }

    pub fn agent_pose(&self, id: &str) -> Result<Pose> {
        let agent = self
            .config
            .agents
            .iter()
            .find(|a| a.id == id)
            .ok_or_else(|| CoreError::UnknownAgent(id.to_string()))?;
        Ok(agent.trajectory.pose(self.time))
    }

    /// All edges visible to the sensor at current time.
    pub fn segments(&self) -> Vec<Segment> {
        let mut segs = Vec::new();
        for poly in &self.config.obstacles {
            for i in 0..poly.len() {
                segs.push(Segment {
                    a: poly[i],
                    b: poly[(i + 1) % poly.len()],
                });
            }
        }
        for agent in &self.config.agents {
            let pose = agent.trajectory.pose(self.time);
            let corners = rect_corners(pose.position, agent.length, agent.width, pose.heading_rad);
            for i in 0..4 {
                segs.push(Segment {
                    a: corners[i],
                    b: corners[(i + 1) % 4],
                });
            }
        }
        segs
    }

    /// Casts one full sweep from the stationary ego at the world origin.
    /// Ranges get Gaussian noise (clamped to (0, max_range]); beams that hit
    /// nothing within max_range are `NO_RETURN`.
    pub fn cast_lidar(&mut self) -> LidarScan {
        let sensor = self.config.sensor;
        let origin = Vec2::new(0.0, 0.0);
        let segments = self.segments();
        let noise = Normal::new(0.0, sensor.range_noise_sigma.max(0.0)).unwrap();
        let mut beams = Vec::with_capacity(sensor.n_beams);
        for i in 0..sensor.n_beams {
            let azimuth = i as f64 * std::f64::consts::TAU / sensor.n_beams as f64;
            let dir = Vec2::new(azimuth.cos(), azimuth.sin());
            let mut nearest = NO_RETURN;
            for seg in &segments {
                if let Some(t) = ray_segment_distance(origin, dir, seg) {
                    if t < nearest {
                        nearest = t;
                    }
                }
            }
            let range = if nearest <= sensor.max_range {
                if sensor.range_noise_sigma > 0.0 {
                    (nearest + noise.sample(&mut self.rng))
                        .max(1e-3)
                        .min(sensor.max_range)
                } else {
                    nearest
                }
            } else {
                NO_RETURN
            };
            beams.push((azimuth, range));
        }
        LidarScan {
            sensor_pose: origin,
            timestamp: self.time,
            beams,
        }
    }

    /// One oracle box per agent with exact pose and script velocity.
    pub fn ground_truth_boxes(&self) -> Vec<GtBox> {
        self.config
            .agents
            .iter()
            .map(|agent| {
                let pose = agent.trajectory.pose(self.time);
                GtBox {
                    id: agent.id.clone(),
                    center: pose.position,
                    length: agent.length,
                    width: agent.width,
                    heading_rad: pose.heading_rad,
                    velocity: agent.trajectory.velocity(self.time),
                }
            })
            .collect()
    }
}

/// Ground-truth motion of one agent sampled at the simulation rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RefSample {
    pub t: f64,
    pub position: Vec2,
    pub speed: f64,
    pub orientation_deg: f64,
}

/// Reference time series for one agent over the whole scenario.
/// Orientation is the heading of the velocity vector; while the agent is
/// stopped it holds the trajectory heading.
pub fn reference_trajectory(config: &SceneConfig, agent_id: &str) -> Result<Vec<RefSample>> {
    let agent = config
        .agents
        .iter()
        .find(|a| a.id == agent_id)
        .ok_or_else(|| CoreError::UnknownAgent(agent_id.to_string()))?;
    let dt = config.dt();
    let mut out = Vec::with_capacity(config.n_steps());
    for k in 0..config.n_steps() {
        let t = k as f64 * dt;
        let vel = agent.trajectory.velocity(t);
        let speed = vel.norm();
        let orientation = if speed > 1e-9 {
            vel.north.atan2(vel.east)
        } else {
            agent.trajectory.pose(t).heading_rad
        };
        out.push(RefSample {
            t,
            position: agent.trajectory.pose(t).position,
            speed,
            orientation_deg: orientation.to_degrees().rem_euclid(360.0),
        });
    }
    Ok(out)
}

/// Separating-axis overlap test between a rectangle and a convex polygon.
fn convex_overlap(rect: &[Vec2; 4], poly: &[Vec2]) -> bool {
    let shapes: [&[Vec2]; 2] = [rect, poly];
    for shape in shapes {
        let n = shape.len();
        for i in 0..n {
            let a = shape[i];
            let b = shape[(i + 1) % n];
            let axis = Vec2::new(-(b.north - a.north), b.east - a.east);
            let project = |pts: &[Vec2]| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for p in pts {
                    let d = p.east * axis.east + p.north * axis.north;
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
                (lo, hi)
            };
            let (lo_a, hi_a) = project(rect);
            let (lo_b, hi_b) = project(poly);
            if hi_a < lo_b || hi_b < lo_a {
                return false;
            }
        }
    }
    true
}
