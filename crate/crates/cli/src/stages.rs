//! Pipeline stages. Each stage is a pure function of its input files and
//! flags; outputs are written atomically so interrupted runs never leave
//! truncated files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use dogm_core::grid::{DynamicGrid, GridSpec, MeasurementGrid, DEPLOYMENT_P_O_THRESHOLD};
use dogm_core::io::{
    read_dynamic, read_measurement, read_prediction, step_file_name, write_atomic, write_dynamic,
    write_measurement, write_prediction,
};
use dogm_core::labels::{generate_labels, LabelConfig, LabelSet};
use dogm_core::meas::{build_measurement_grid, mass_channels, InverseSensorConfig};
use dogm_core::metrics::{
    compare_report, frame_stats, object_cells, report_table, sequence_summary, ObjectCellRule,
    ObjectFrameStats, SequenceReport, VelocityField,
};
use dogm_core::pf::{ParticleFilter, PfConfig};
use dogm_core::sim::{GtBox, LidarScan, RefSample, Scene, SceneConfig, Vec2, NO_RETURN};
use dogm_nn::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use dogm_nn::loss::LossConfig;
use dogm_nn::model::{Forward, Model, ModelConfig};
use dogm_nn::train::{loss_curve_csv, train, TrainConfig, TrainSample};
use dogm_nn::{AdamConfig, AdamState, Tensor};

use crate::manifest::{GridGeom, Manifest};

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------- simulate

pub fn run_simulate(config_path: &Path, out_dir: &Path) -> Result<()> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading scenario config {}", config_path.display()))?;
    let config: SceneConfig = serde_json::from_str(&text)
        .map_err(|e| dogm_core::CoreError::format(config_path.display().to_string(), e.to_string()))?;
    simulate_to_dir(&config, out_dir)
}

pub fn simulate_to_dir(config: &SceneConfig, out_dir: &Path) -> Result<()> {
    let mut scene = Scene::new(config.clone())?;
    let spec = config.grid.to_spec()?;
    let steps = config.n_steps();
    let dt = config.dt();

    fs::create_dir_all(out_dir.join("scans"))?;
    fs::create_dir_all(out_dir.join("boxes"))?;
    fs::create_dir_all(out_dir.join("ref"))?;

    for step in 0..steps {
        let scan = scene.cast_lidar();
        write_text(
            &out_dir.join("scans").join(step_file_name(step, "csv")),
            &scan_to_csv(&scan),
        )?;
        let boxes = scene.ground_truth_boxes();
        let json = serde_json::to_string_pretty(&boxes)?;
        write_text(&out_dir.join("boxes").join(step_file_name(step, "json")), &json)?;
        scene.step(dt);
    }

    for agent in &config.agents {
        let samples = dogm_core::sim::reference_trajectory(config, &agent.id)?;
        write_text(
            &out_dir.join("ref").join(format!("{}.csv", agent.id)),
            &ref_to_csv(&samples),
        )?;
    }

    Manifest {
        kind: "simulation".into(),
        steps,
        rate_hz: config.rate_hz,
        grid: GridGeom::from_spec(&spec),
        first_step: 0,
        scenario: Some(config.name.clone()),
        sensor: Some(config.sensor),
        agents: config.agents.iter().map(|a| a.id.clone()).collect(),
        scene: Some(config.clone()),
    }
    .save(out_dir)?;
    Ok(())
}

fn scan_to_csv(scan: &LidarScan) -> String {
    let mut out = String::from("t,azimuth_rad,range_m\n");
    for (az, range) in &scan.beams {
        if *range == NO_RETURN {
            out.push_str(&format!("{:.6},{az:.9},\n", scan.timestamp));
        } else {
            out.push_str(&format!("{:.6},{az:.9},{range:.9}\n", scan.timestamp));
        }
    }
    out
}

fn scan_from_csv(path: &Path) -> Result<LidarScan> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading scan {}", path.display()))?;
    let mut beams = Vec::new();
    let mut timestamp = 0.0f64;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            bail!("{}: malformed line {}", path.display(), i + 1);
        }
        timestamp = fields[0].parse()?;
        let az: f64 = fields[1].parse()?;
        let range = if fields[2].is_empty() {
            NO_RETURN
        } else {
            fields[2].parse()?
        };
        beams.push((az, range));
    }
    Ok(LidarScan {
        sensor_pose: Vec2::new(0.0, 0.0),
        timestamp,
        beams,
    })
}

fn ref_to_csv(samples: &[RefSample]) -> String {
    let mut out = String::from("t,east,north,speed_mps,orientation_deg\n");
    for s in samples {
        out.push_str(&format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            s.t, s.position.east, s.position.north, s.speed, s.orientation_deg
        ));
    }
    out
}

fn ref_from_csv(path: &Path) -> Result<Vec<RefSample>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading reference {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            bail!("{}: malformed line {}", path.display(), i + 1);
        }
        out.push(RefSample {
            t: f[0].parse()?,
            position: Vec2::new(f[1].parse()?, f[2].parse()?),
            speed: f[3].parse()?,
            orientation_deg: f[4].parse()?,
        });
    }
    Ok(out)
}

fn boxes_from_json(path: &Path) -> Result<Vec<GtBox>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading boxes {}", path.display()))?;
    Ok(serde_json::from_str(&text)
        .map_err(|e| dogm_core::CoreError::format(path.display().to_string(), e.to_string()))?)
}

// ----------------------------------------------------------------- gridify

pub fn run_gridify(in_dir: &Path, out_dir: &Path, isc: &InverseSensorConfig) -> Result<()> {
    let manifest = Manifest::load(in_dir)?;
    manifest.expect_kind("simulation", in_dir)?;
    let spec = manifest.grid.to_spec()?;
    let sensor = manifest
        .sensor
        .ok_or_else(|| dogm_core::CoreError::format(in_dir.display().to_string(), "missing sensor config"))?;

    fs::create_dir_all(out_dir.join("grids"))?;
    for step in 0..manifest.steps {
        let scan = scan_from_csv(&in_dir.join("scans").join(step_file_name(step, "csv")))?;
        let grid = build_measurement_grid(&scan, &spec, sensor.max_range, isc)?;
        write_measurement(&out_dir.join("grids").join(step_file_name(step, "grid")), &grid)?;
    }

    Manifest {
        kind: "measurement".into(),
        steps: manifest.steps,
        rate_hz: manifest.rate_hz,
        grid: manifest.grid.clone(),
        first_step: 0,
        scenario: manifest.scenario.clone(),
        sensor: manifest.sensor,
        agents: manifest.agents.clone(),
        scene: None,
    }
    .save(out_dir)?;
    Ok(())
}

// ---------------------------------------------------------------------- pf

pub fn run_pf(in_dir: &Path, out_dir: &Path, cfg: &PfConfig, seed: u64) -> Result<()> {
    let manifest = Manifest::load(in_dir)?;
    manifest.expect_kind("measurement", in_dir)?;
    let spec = manifest.grid.to_spec()?;
    let dt = manifest.dt();
    let mut filter = ParticleFilter::new(spec, *cfg, seed)?;

    fs::create_dir_all(out_dir.join("grids"))?;
    for step in 0..manifest.steps {
        let meas = read_measurement(&in_dir.join("grids").join(step_file_name(step, "grid")))?;
        let grid = filter.step(&meas, dt)?;
        write_dynamic(&out_dir.join("grids").join(step_file_name(step, "grid")), &grid)?;
    }

    Manifest {
        kind: "dogm".into(),
        steps: manifest.steps,
        rate_hz: manifest.rate_hz,
        grid: manifest.grid.clone(),
        first_step: 0,
        scenario: manifest.scenario.clone(),
        sensor: manifest.sensor,
        agents: manifest.agents.clone(),
        scene: None,
    }
    .save(out_dir)?;
    Ok(())
}

// ------------------------------------------------------------------ labels

pub fn run_labels(
    grids_dir: &Path,
    pf_dir: &Path,
    boxes_dir: &Path,
    out_dir: &Path,
    cfg: &LabelConfig,
) -> Result<()> {
    let meas_manifest = Manifest::load(grids_dir)?;
    meas_manifest.expect_kind("measurement", grids_dir)?;
    let pf_manifest = Manifest::load(pf_dir)?;
    pf_manifest.expect_kind("dogm", pf_dir)?;
    let sim_manifest = Manifest::load(boxes_dir)?;
    sim_manifest.expect_kind("simulation", boxes_dir)?;
    if meas_manifest.grid != pf_manifest.grid {
        bail!("measurement and filter grids disagree on geometry");
    }
    let steps = pf_manifest.steps;

    fs::create_dir_all(out_dir.join("grids"))?;
    let mut window: Vec<DynamicGrid> = Vec::new();
    let mut first_written = None;
    for step in 0..steps {
        let grid = read_dynamic(&pf_dir.join("grids").join(step_file_name(step, "grid")))?;
        window.push(grid);
        if window.len() > cfg.window_len {
            window.remove(0);
        }
        if window.len() < cfg.window_len {
            continue;
        }
        let boxes = boxes_from_json(&boxes_dir.join("boxes").join(step_file_name(step, "json")))?;
        let refs: Vec<&DynamicGrid> = window.iter().collect();
        let labels = generate_labels(&refs, &boxes, cfg)?;
        write_label_grid(&out_dir.join("grids").join(step_file_name(step, "grid")), &labels)?;
        first_written.get_or_insert(step);
    }

    Manifest {
        kind: "labels".into(),
        steps,
        rate_hz: pf_manifest.rate_hz,
        grid: pf_manifest.grid.clone(),
        first_step: first_written.unwrap_or(steps),
        scenario: pf_manifest.scenario.clone(),
        sensor: None,
        agents: sim_manifest.agents.clone(),
        scene: None,
    }
    .save(out_dir)?;
    Ok(())
}

pub fn write_label_grid(path: &Path, labels: &LabelSet) -> Result<()> {
    dogm_core::io::write_grid_file(
        path,
        labels.spec(),
        &[
            &labels.occupancy,
            &labels.vel_east,
            &labels.vel_north,
            &labels.weight,
        ],
    )?;
    Ok(())
}

pub fn read_label_grid(path: &Path) -> Result<LabelSet> {
    let f = dogm_core::io::read_grid_file(path)?;
    if f.channels.len() != 4 {
        bail!(
            "{}: label grid needs 4 channels, found {}",
            path.display(),
            f.channels.len()
        );
    }
    let mut it = f.channels.into_iter();
    Ok(LabelSet::from_channels(
        f.spec,
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    )?)
}

// ------------------------------------------------------------------- train

/// A training scenario root: measurement grids plus labels.
pub struct ScenarioData {
    pub meas: PathBuf,
    pub labels: PathBuf,
}

/// Scans `data_dir` for scenario subdirectories laid out as
/// `<scenario>/meas` and `<scenario>/labels`.
pub fn discover_training_dirs(data_dir: &Path) -> Result<Vec<ScenarioData>> {
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(data_dir)
        .with_context(|| format!("reading {}", data_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for dir in entries {
        let meas = dir.join("meas");
        let labels = dir.join("labels");
        if meas.join("manifest.json").exists() && labels.join("manifest.json").exists() {
            out.push(ScenarioData { meas, labels });
        }
    }
    if out.is_empty() {
        bail!(
            "{}: no scenario subdirectories with meas/ and labels/ found",
            data_dir.display()
        );
    }
    Ok(out)
}

/// Builds sliding-window training samples from stage outputs. Windows end
/// at steps that have labels; `stride` thins overlapping windows.
pub fn load_training_samples(
    scenarios: &[ScenarioData],
    n_in: usize,
    stride: usize,
) -> Result<Vec<TrainSample>> {
    let mut samples = Vec::new();
    for sc in scenarios {
        let meas_manifest = Manifest::load(&sc.meas)?;
        meas_manifest.expect_kind("measurement", &sc.meas)?;
        let label_manifest = Manifest::load(&sc.labels)?;
        label_manifest.expect_kind("labels", &sc.labels)?;
        if meas_manifest.grid != label_manifest.grid {
            bail!("measurement and label grids disagree on geometry");
        }
        let start = label_manifest.first_step.max(n_in - 1);
        let mut step = start;
        while step < label_manifest.steps {
            let label =
                read_label_grid(&sc.labels.join("grids").join(step_file_name(step, "grid")))?;
            let mut inputs = Vec::with_capacity(n_in);
            for k in (step + 1 - n_in)..=step {
                let meas =
                    read_measurement(&sc.meas.join("grids").join(step_file_name(k, "grid")))?;
                inputs.push(mass_channels(&meas));
            }
            samples.push(TrainSample { inputs, label });
            step += stride.max(1);
        }
    }
    if samples.is_empty() {
        bail!("no training windows found (sequences shorter than n_in?)");
    }
    Ok(samples)
}

pub struct TrainArgs {
    pub data_dir: PathBuf,
    pub model_config: ModelConfig,
    pub loss_config: LossConfig,
    pub epochs: usize,
    pub seed: u64,
    pub stride: usize,
    pub grad_accum: usize,
    pub out_ckpt: PathBuf,
    pub resume: Option<PathBuf>,
    pub log_csv: Option<PathBuf>,
}

pub fn run_train(args: &TrainArgs) -> Result<()> {
    let scenarios = discover_training_dirs(&args.data_dir)?;
    let samples = load_training_samples(&scenarios, args.model_config.n_in, args.stride)?;

    let (mut model, mut adam) = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let config: ModelConfig = serde_json::from_str(&ckpt.config_json)
                .map_err(|e| dogm_core::CoreError::format(path.display().to_string(), e.to_string()))?;
            let model = Model {
                config,
                params: ckpt.params,
            };
            let adam = ckpt
                .adam
                .unwrap_or_else(|| AdamState::new(&model.params));
            (model, adam)
        }
        None => {
            let model = Model::init(args.model_config.clone(), args.seed)?;
            let adam = AdamState::new(&model.params);
            (model, adam)
        }
    };

    let report = train(
        &mut model,
        &samples,
        &args.loss_config,
        &AdamConfig::default(),
        &mut adam,
        &TrainConfig {
            epochs: args.epochs,
            seed: args.seed,
            grad_accum: args.grad_accum,
            augment: true,
        },
    )?;

    save_checkpoint(
        &args.out_ckpt,
        &Checkpoint {
            config_json: serde_json::to_string(&model.config)?,
            params: model.params.clone(),
            adam: Some(adam),
        },
    )?;
    if let Some(log) = &args.log_csv {
        write_text(log, &loss_curve_csv(&report))?;
    }
    for e in &report.epochs {
        eprintln!(
            "epoch {}: L_PO {:.5} L_v {:.5} total {:.5}",
            e.epoch, e.mean_occupancy_loss, e.mean_velocity_loss, e.mean_total_loss
        );
    }
    Ok(())
}

// ------------------------------------------------------------------- infer

pub fn run_infer(ckpt_path: &Path, in_dir: &Path, out_dir: &Path) -> Result<()> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let config: ModelConfig = serde_json::from_str(&ckpt.config_json)
        .map_err(|e| dogm_core::CoreError::format(ckpt_path.display().to_string(), e.to_string()))?;
    let model = Model {
        config,
        params: ckpt.params,
    };
    let manifest = Manifest::load(in_dir)?;
    manifest.expect_kind("measurement", in_dir)?;
    let spec = manifest.grid.to_spec()?;
    let cells = spec.cells_per_side();

    fs::create_dir_all(out_dir.join("grids"))?;
    // Stream the whole sequence through one recurrence; decode per step.
    let mut fwd = Forward::new(&model, false, 0)?;
    for step in 0..manifest.steps {
        let meas = read_measurement(&in_dir.join("grids").join(step_file_name(step, "grid")))?;
        let [m_occ, m_free] = mass_channels(&meas);
        let mut data = Vec::with_capacity(2 * m_occ.len());
        data.extend_from_slice(&m_occ);
        data.extend_from_slice(&m_free);
        fwd.push_input(Tensor::new(vec![2, cells, cells], data)?)?;
        let out = fwd.decode()?;
        let mut pred = fwd.prediction(&out, &spec)?;
        pred.apply_deployment_mask(DEPLOYMENT_P_O_THRESHOLD);
        write_prediction(&out_dir.join("grids").join(step_file_name(step, "grid")), &pred)?;
        // Periodically restart the graph to bound memory; state values are
        // re-seeded as constants.
        fwd = fwd.detached()?;
    }

    Manifest {
        kind: "prediction".into(),
        steps: manifest.steps,
        rate_hz: manifest.rate_hz,
        grid: manifest.grid.clone(),
        first_step: 0,
        scenario: manifest.scenario.clone(),
        sensor: None,
        agents: manifest.agents.clone(),
        scene: None,
    }
    .save(out_dir)?;
    Ok(())
}

// -------------------------------------------------------------------- eval

pub struct EvalArgs {
    pub pred_dir: PathBuf,
    pub pf_dir: PathBuf,
    pub sim_dir: PathBuf,
    pub out_csv: PathBuf,
    /// Frames before this time are excluded (both estimators start cold).
    pub warmup_s: f64,
}

fn collect_frames<F: VelocityField>(
    fields: &[(f64, F)],
    boxes_per_step: &[Vec<GtBox>],
    agent: &str,
    rule: &ObjectCellRule,
) -> (Vec<Option<ObjectFrameStats>>, Vec<f64>) {
    let mut frames = Vec::new();
    let mut times = Vec::new();
    for ((t, field), boxes) in fields.iter().zip(boxes_per_step) {
        times.push(*t);
        let Some(b) = boxes.iter().find(|b| b.id == agent) else {
            frames.push(None);
            continue;
        };
        let cells = object_cells(field, b, rule);
        let vels: Vec<(f64, f64)> = cells
            .iter()
            .map(|&i| {
                let (ve, vn) = field.velocity_at(i);
                (ve as f64, vn as f64)
            })
            .collect();
        frames.push(frame_stats(&vels, *t));
    }
    (frames, times)
}

pub fn run_eval(args: &EvalArgs) -> Result<String> {
    let pred_manifest = Manifest::load(&args.pred_dir)?;
    pred_manifest.expect_kind("prediction", &args.pred_dir)?;
    let pf_manifest = Manifest::load(&args.pf_dir)?;
    pf_manifest.expect_kind("dogm", &args.pf_dir)?;
    let sim_manifest = Manifest::load(&args.sim_dir)?;
    sim_manifest.expect_kind("simulation", &args.sim_dir)?;
    let scenario = sim_manifest.scenario.clone().unwrap_or_else(|| "scenario".into());
    let steps = sim_manifest.steps.min(pred_manifest.steps).min(pf_manifest.steps);
    let dt = sim_manifest.dt();
    let rule = ObjectCellRule::default();

    let mut boxes_per_step = Vec::with_capacity(steps);
    for step in 0..steps {
        boxes_per_step
            .push(boxes_from_json(&args.sim_dir.join("boxes").join(step_file_name(step, "json")))?);
    }

    // Keep only frames past warmup for both approaches.
    let keep: Vec<usize> = (0..steps)
        .filter(|s| *s as f64 * dt >= args.warmup_s)
        .collect();

    let mut preds = Vec::new();
    let mut pfs = Vec::new();
    for &step in &keep {
        let t = step as f64 * dt;
        preds.push((
            t,
            read_prediction(&args.pred_dir.join("grids").join(step_file_name(step, "grid")))?,
        ));
        pfs.push((
            t,
            read_dynamic(&args.pf_dir.join("grids").join(step_file_name(step, "grid")))?,
        ));
    }
    let kept_boxes: Vec<Vec<GtBox>> = keep.iter().map(|&s| boxes_per_step[s].clone()).collect();

    let mut reports: Vec<SequenceReport> = Vec::new();
    let mut frame_csvs: Vec<(String, String)> = Vec::new();
    for agent in &sim_manifest.agents {
        let reference = ref_from_csv(&args.sim_dir.join("ref").join(format!("{agent}.csv")))?;
        let max_gap = dt * 1.5;
        let (frames_rnn, times) = collect_frames(&preds, &kept_boxes, agent, &rule);
        let (frames_pf, _) = collect_frames(&pfs, &kept_boxes, agent, &rule);
        reports.push(sequence_summary(
            "ours", &scenario, &frames_rnn, &times, &reference, max_gap,
        )?);
        reports.push(sequence_summary(
            "pf", &scenario, &frames_pf, &times, &reference, max_gap,
        )?);
        for (name, frames) in [("ours", &frames_rnn), ("pf", &frames_pf)] {
            let mut csv = String::from("t,mean_speed,mean_orientation_deg,sigma_speed,sigma_orientation_deg,n_cells\n");
            for f in frames.iter().flatten() {
                csv.push_str(&format!(
                    "{:.3},{:.4},{:.4},{:.4},{:.4},{}\n",
                    f.t,
                    f.mean_speed,
                    f.mean_orientation_deg,
                    f.sigma_speed,
                    f.sigma_orientation_deg,
                    f.n_cells
                ));
            }
            frame_csvs.push((format!("frames_{name}_{agent}.csv"), csv));
        }
    }

    let csv = compare_report(&reports)?;
    write_text(&args.out_csv, &csv)?;
    let table = report_table(&reports);
    let txt_path = args.out_csv.with_extension("txt");
    write_text(&txt_path, &table)?;
    if let Some(parent) = args.out_csv.parent() {
        for (name, content) in frame_csvs {
            write_text(&parent.join(name), &content)?;
        }
    }
    Ok(table)
}

// ------------------------------------------------------------------ render

pub use crate::render::{run_render, RenderArgs, RenderMode};

// -------------------------------------------------------- shared utilities

/// Reads every measurement grid of a stage directory (test support).
pub fn read_measurement_series(dir: &Path) -> Result<(Manifest, Vec<MeasurementGrid>)> {
    let manifest = Manifest::load(dir)?;
    manifest.expect_kind("measurement", dir)?;
    let mut grids = Vec::with_capacity(manifest.steps);
    for step in 0..manifest.steps {
        grids.push(read_measurement(&dir.join("grids").join(step_file_name(step, "grid")))?);
    }
    Ok((manifest, grids))
}

/// Grid spec helper shared by stages.
pub fn manifest_spec(manifest: &Manifest) -> Result<GridSpec> {
    Ok(manifest.grid.to_spec()?)
}
