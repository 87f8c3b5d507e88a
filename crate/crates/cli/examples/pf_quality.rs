// Diagnostic: PF-only sequence metrics on the three evaluation scenarios.
use dogm_core::meas::{build_measurement_grid, InverseSensorConfig};
use dogm_core::metrics::*;
use dogm_core::pf::{ParticleFilter, PfConfig};
use dogm_core::scenarios;
use dogm_core::sim::{reference_trajectory, Scene};

fn main() {
    for cfg in [
        scenarios::straight_scenario(11),
        scenarios::stop_and_go_scenario(12),
        scenarios::circles_scenario(13),
    ] {
        let spec = cfg.grid.to_spec().unwrap();
        let mut scene = Scene::new(cfg.clone()).unwrap();
        let mut filter = ParticleFilter::new(spec, PfConfig::default(), 5).unwrap();
        let isc = InverseSensorConfig { hit_thickness: 2, ..InverseSensorConfig::default() };
        let reference = reference_trajectory(&cfg, "ref").unwrap();
        let dt = cfg.dt();
        let rule = ObjectCellRule::default();
        let mut frames = Vec::new();
        let mut times = Vec::new();
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
                frames.push(frame_stats(&vels, t));
                times.push(t);
            }
            scene.step(dt);
        }
        let rep = sequence_summary("pf", &cfg.name, &frames, &times, &reference, dt * 1.5).unwrap();
        println!(
            "{:<12} MAE_vel {:.3}  MAE_ori {:.2}°  σ̄_vel {:.3}  σ̄_ori {:.2}°  frames {}/{}",
            rep.scenario, rep.mae_vel, rep.mae_ori_deg, rep.mean_sigma_vel, rep.mean_sigma_ori_deg,
            rep.valid_frames, rep.valid_frames + rep.skipped_frames
        );
    }
}
