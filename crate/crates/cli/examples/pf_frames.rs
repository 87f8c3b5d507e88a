use dogm_core::meas::{build_measurement_grid, InverseSensorConfig};
use dogm_core::metrics::*;
use dogm_core::pf::{ParticleFilter, PfConfig};
use dogm_core::scenarios;
use dogm_core::sim::Scene;

fn main() {
    let cfg = scenarios::straight_scenario(11);
    let spec = cfg.grid.to_spec().unwrap();
    let mut scene = Scene::new(cfg.clone()).unwrap();
    let mut filter = ParticleFilter::new(spec, PfConfig::default(), 5).unwrap();
    let isc = InverseSensorConfig { hit_thickness: 2, ..InverseSensorConfig::default() };
    let dt = cfg.dt();
    let rule = ObjectCellRule::default();
    for step in 0..cfg.n_steps() {
        let scan = scene.cast_lidar();
        let meas = build_measurement_grid(&scan, &spec, cfg.sensor.max_range, &isc).unwrap();
        let grid = filter.step(&meas, dt).unwrap();
        let t = step as f64 * dt;
        if t >= 2.0 {
            let boxes = scene.ground_truth_boxes();
            let cells = object_cells(&grid, &boxes[0], &rule);
            let vels: Vec<(f64, f64)> = cells.iter()
                .map(|&i| (grid.vel_east[i] as f64, grid.vel_north[i] as f64)).collect();
            if let Some(f) = frame_stats(&vels, t) {
                // Histogram of per-cell speeds.
                let mut slow = 0; let mut mid = 0; let mut good = 0; let mut fast = 0;
                for (ve, vn) in &vels {
                    let s = ve.hypot(*vn);
                    if s < 2.0 { slow += 1 } else if s < 4.0 { mid += 1 }
                    else if s < 6.0 { good += 1 } else { fast += 1 }
                }
                println!("t={t:.1} n={:3} mean_v={:.2} ori={:6.1} σv={:.2} σori={:5.1} | <2:{slow} 2-4:{mid} 4-6:{good} >6:{fast}",
                    f.n_cells, f.mean_speed, f.mean_orientation_deg, f.sigma_speed, f.sigma_orientation_deg);
            }
        }
        scene.step(dt);
    }
}
