//! Binary grid files and atomic writes.
//!
//! Layout (all little-endian):
//! ```text
//! 0   8-byte magic "DOGMGRD\0"
//! 8   u32 version (= 1), u32 reserved (= 0)      -- 16-byte header total
//! 16  u32 cells_per_side, u32 channel_count
//! 24  f64 cell_size, f64 origin_east, f64 origin_north
//! 48  channel-major f32 cell data, row-major within each channel
//! ```

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::grid::{DynamicGrid, GridSpec, MeasurementGrid, PredictionGrid, VelocityStats};

pub const GRID_MAGIC: &[u8; 8] = b"DOGMGRD\0";
pub const GRID_VERSION: u32 = 1;

/// Writes via a temporary file in the same directory plus rename, so a
/// crashed stage never leaves a truncated output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir.display().to_string(), e))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = Path::new(&tmp);
    fs::write(tmp_path, bytes).map_err(|e| CoreError::io(tmp_path.display().to_string(), e))?;
    fs::rename(tmp_path, path).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn write_grid_file(path: &Path, spec: &GridSpec, channels: &[&[f32]]) -> Result<()> {
    let n = spec.n_cells();
    for (i, ch) in channels.iter().enumerate() {
        if ch.len() != n {
            return Err(CoreError::GridSpecMismatch(format!(
                "channel {i} has {} values, grid needs {n}",
                ch.len()
            )));
        }
    }
    let mut buf = Vec::with_capacity(48 + 4 * n * channels.len());
    buf.extend_from_slice(GRID_MAGIC);
    buf.extend_from_slice(&GRID_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&(spec.cells_per_side() as u32).to_le_bytes());
    buf.extend_from_slice(&(channels.len() as u32).to_le_bytes());
    buf.extend_from_slice(&spec.cell_size().to_le_bytes());
    let (oe, on) = spec.origin();
    buf.extend_from_slice(&oe.to_le_bytes());
    buf.extend_from_slice(&on.to_le_bytes());
    for ch in channels {
        for v in *ch {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

#[derive(Debug)]
pub struct GridFile {
    pub spec: GridSpec,
    pub channels: Vec<Vec<f32>>,
}

pub fn read_grid_file(path: &Path) -> Result<GridFile> {
    let display = path.display().to_string();
    let mut file = fs::File::open(path).map_err(|e| CoreError::io(&display, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| CoreError::io(&display, e))?;
    if bytes.len() < 48 {
        return Err(CoreError::format(&display, "file shorter than header"));
    }
    if &bytes[0..8] != GRID_MAGIC {
        return Err(CoreError::format(&display, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != GRID_VERSION {
        return Err(CoreError::format(
            &display,
            format!("unsupported version {version}"),
        ));
    }
    let cells = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let n_channels = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
    let cell_size = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let origin_east = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
    let origin_north = f64::from_le_bytes(bytes[40..48].try_into().unwrap());
    let spec = GridSpec::new(cells, cell_size, origin_east, origin_north)
        .map_err(|e| CoreError::format(&display, e.to_string()))?;
    let n = spec.n_cells();
    let expected = 48 + 4 * n * n_channels;
    if bytes.len() != expected {
        return Err(CoreError::format(
            &display,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut channels = Vec::with_capacity(n_channels);
    let mut off = 48;
    for _ in 0..n_channels {
        let mut ch = Vec::with_capacity(n);
        for _ in 0..n {
            ch.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        channels.push(ch);
    }
    Ok(GridFile { spec, channels })
}

pub fn write_measurement(path: &Path, grid: &MeasurementGrid) -> Result<()> {
    write_grid_file(path, grid.spec(), &[grid.p_occ()])
}

pub fn read_measurement(path: &Path) -> Result<MeasurementGrid> {
    let f = read_grid_file(path)?;
    if f.channels.len() != 1 {
        return Err(CoreError::format(
            path.display().to_string(),
            format!("measurement grid needs 1 channel, found {}", f.channels.len()),
        ));
    }
    MeasurementGrid::new(f.spec, f.channels.into_iter().next().unwrap())
}

pub fn write_dynamic(path: &Path, grid: &DynamicGrid) -> Result<()> {
    let mut channels: Vec<&[f32]> = vec![
        &grid.m_occ,
        &grid.m_free,
        &grid.vel_east,
        &grid.vel_north,
    ];
    if let Some(stats) = &grid.stats {
        channels.push(&stats.var_east);
        channels.push(&stats.var_north);
        channels.push(&stats.cov);
    }
    write_grid_file(path, grid.spec(), &channels)
}

pub fn read_dynamic(path: &Path) -> Result<DynamicGrid> {
    let f = read_grid_file(path)?;
    let display = path.display().to_string();
    if f.channels.len() != 4 && f.channels.len() != 7 {
        return Err(CoreError::format(
            display,
            format!("dynamic grid needs 4 or 7 channels, found {}", f.channels.len()),
        ));
    }
    let mut it = f.channels.into_iter();
    let mut grid = DynamicGrid::zeros(f.spec);
    grid.m_occ = it.next().unwrap();
    grid.m_free = it.next().unwrap();
    grid.vel_east = it.next().unwrap();
    grid.vel_north = it.next().unwrap();
    grid.stats = if let (Some(var_east), Some(var_north), Some(cov)) =
        (it.next(), it.next(), it.next())
    {
        Some(VelocityStats {
            var_east,
            var_north,
            cov,
        })
    } else {
        None
    };
    grid.validate_masses()?;
    Ok(grid)
}

pub fn write_prediction(path: &Path, grid: &PredictionGrid) -> Result<()> {
    write_grid_file(
        path,
        grid.spec(),
        &[&grid.p_occ, &grid.vel_east, &grid.vel_north],
    )
}

pub fn read_prediction(path: &Path) -> Result<PredictionGrid> {
    let f = read_grid_file(path)?;
    if f.channels.len() != 3 {
        return Err(CoreError::format(
            path.display().to_string(),
            format!("prediction grid needs 3 channels, found {}", f.channels.len()),
        ));
    }
    let mut it = f.channels.into_iter();
    PredictionGrid::new(
        f.spec,
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    )
}

/// Zero-padded per-step file name used by every stage directory.
pub fn step_file_name(step: usize, ext: &str) -> String {
    format!("step_{step:06}.{ext}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn grid_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.grid");
        let spec = GridSpec::new(8, 0.25, -1.0, -1.0).unwrap();
        let a: Vec<f32> = (0..64).map(|i| i as f32 / 64.0).collect();
        let b: Vec<f32> = (0..64).map(|i| (i as f32).sin()).collect();
        write_grid_file(&path, &spec, &[&a, &b]).unwrap();
        let f = read_grid_file(&path).unwrap();
        assert_eq!(f.spec, spec);
        assert_eq!(f.channels, vec![a, b]);
    }

    #[test]
    fn rejects_corrupt_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.grid");
        std::fs::write(&path, vec![0u8; 64]).unwrap();
        match read_grid_file(&path) {
            Err(CoreError::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.grid");
        let spec = GridSpec::new(8, 0.25, 0.0, 0.0).unwrap();
        let a = vec![0.5f32; 64];
        write_grid_file(&path, &spec, &[&a]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(read_grid_file(&path).is_err());
    }

    #[test]
    fn no_tmp_file_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.grid");
        let spec = GridSpec::new(8, 0.25, 0.0, 0.0).unwrap();
        write_grid_file(&path, &spec, &[&vec![0.0f32; 64]]).unwrap();
        let names: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }
}
