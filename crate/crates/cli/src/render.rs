//! Frame rendering. Occupancy maps use the grid-map convention: occupied
//! cells black, free space white, unobserved mid-gray. Velocity overlays
//! either color cells by orientation hue or draw red arrows, both gated by
//! a minimum speed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::{Rgb, RgbImage};

use dogm_core::grid::GridSpec;
use dogm_core::io::{read_dynamic, read_grid_file, read_measurement, read_prediction, step_file_name, write_atomic};
use dogm_core::metrics::VelocityField;

use crate::manifest::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// Grayscale occupancy only (PGM).
    Gray,
    /// Orientation mapped to hue over the occupancy image (PNG).
    Hue,
    /// Red velocity arrows over the occupancy image (PNG).
    Arrows,
}

pub struct RenderArgs {
    pub in_dir: PathBuf,
    pub out_dir: PathBuf,
    pub mode: RenderMode,
    /// Cells slower than this keep their plain occupancy color.
    pub min_speed: f64,
}

/// Occupancy probability to display gray: black occupied, white free.
fn p_to_gray(p: f32) -> u8 {
    (255.0 * (1.0 - p.clamp(0.0, 1.0))) as u8
}

/// Row 0 of the grid is the southernmost row; images have y down, so the
/// grid is flipped vertically into the image.
fn pixel_of(spec: &GridSpec, row: usize, col: usize) -> (u32, u32) {
    let n = spec.cells_per_side();
    (col as u32, (n - 1 - row) as u32)
}

fn hue_to_rgb(h_deg: f64) -> Rgb<u8> {
    let h = (h_deg.rem_euclid(360.0)) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
}

fn write_pgm(path: &Path, spec: &GridSpec, p_occ: &[f32]) -> Result<()> {
    let n = spec.cells_per_side();
    let mut bytes = format!("P5\n{n} {n}\n255\n").into_bytes();
    for row in (0..n).rev() {
        for col in 0..n {
            bytes.push(p_to_gray(p_occ[spec.index(row, col)]));
        }
    }
    write_atomic(path, &bytes)?;
    Ok(())
}

fn render_field<F: VelocityField>(
    field: &F,
    mode: RenderMode,
    min_speed: f64,
) -> RgbImage {
    let spec = field.spec();
    let n = spec.cells_per_side() as u32;
    let mut img = RgbImage::new(n, n);
    for row in 0..spec.cells_per_side() {
        for col in 0..spec.cells_per_side() {
            let idx = spec.index(row, col);
            let g = p_to_gray(field.p_occ_at(idx));
            let (px, py) = pixel_of(spec, row, col);
            img.put_pixel(px, py, Rgb([g, g, g]));
        }
    }
    match mode {
        RenderMode::Gray => img,
        RenderMode::Hue => {
            for row in 0..spec.cells_per_side() {
                for col in 0..spec.cells_per_side() {
                    let idx = spec.index(row, col);
                    let (ve, vn) = field.velocity_at(idx);
                    let speed = (ve as f64).hypot(vn as f64);
                    if speed > min_speed {
                        let ori = (vn as f64).atan2(ve as f64).to_degrees();
                        let (px, py) = pixel_of(spec, row, col);
                        img.put_pixel(px, py, hue_to_rgb(ori));
                    }
                }
            }
            img
        }
        RenderMode::Arrows => {
            let red = Rgb([220u8, 30, 30]);
            for row in 0..spec.cells_per_side() {
                for col in 0..spec.cells_per_side() {
                    let idx = spec.index(row, col);
                    let (ve, vn) = field.velocity_at(idx);
                    let speed = (ve as f64).hypot(vn as f64);
                    if speed <= min_speed {
                        continue;
                    }
                    let (px, py) = pixel_of(spec, row, col);
                    // Arrow length in pixels scales with speed (2 px per m/s).
                    let len = (speed * 2.0).min(12.0);
                    let dx = ve as f64 / speed * len;
                    let dy = -(vn as f64) / speed * len;
                    draw_line(&mut img, px as f64, py as f64, px as f64 + dx, py as f64 + dy, red);
                }
            }
            img
        }
    }
}

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let x = x0 + (x1 - x0) * t;
        let y = y0 + (y1 - y0) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

pub fn run_render(args: &RenderArgs) -> Result<()> {
    let manifest = Manifest::load(&args.in_dir)?;
    let spec = manifest.grid.to_spec()?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    for step in manifest.first_step..manifest.steps {
        let grid_path = args.in_dir.join("grids").join(step_file_name(step, "grid"));
        match (manifest.kind.as_str(), args.mode) {
            ("measurement", RenderMode::Gray) => {
                let grid = read_measurement(&grid_path)?;
                write_pgm(
                    &args.out_dir.join(step_file_name(step, "pgm")),
                    &spec,
                    grid.p_occ(),
                )?;
            }
            ("measurement", _) => bail!("measurement grids have no velocities to render"),
            ("dogm", RenderMode::Gray) => {
                let grid = read_dynamic(&grid_path)?;
                let p: Vec<f32> = (0..spec.n_cells()).map(|i| grid.p_occ_at(i)).collect();
                write_pgm(&args.out_dir.join(step_file_name(step, "pgm")), &spec, &p)?;
            }
            ("dogm", mode) => {
                let grid = read_dynamic(&grid_path)?;
                let img = render_field(&grid, mode, args.min_speed);
                img.save(args.out_dir.join(step_file_name(step, "png")))?;
            }
            ("prediction", RenderMode::Gray) => {
                let grid = read_prediction(&grid_path)?;
                write_pgm(
                    &args.out_dir.join(step_file_name(step, "pgm")),
                    &spec,
                    &grid.p_occ,
                )?;
            }
            ("prediction", mode) => {
                let grid = read_prediction(&grid_path)?;
                let img = render_field(&grid, mode, args.min_speed);
                img.save(args.out_dir.join(step_file_name(step, "png")))?;
            }
            ("labels", RenderMode::Gray) => {
                let f = read_grid_file(&grid_path)?;
                write_pgm(
                    &args.out_dir.join(step_file_name(step, "pgm")),
                    &spec,
                    &f.channels[0],
                )?;
            }
            (kind, _) => bail!("cannot render directory of kind {kind}"),
        }
    }
    Ok(())
}
