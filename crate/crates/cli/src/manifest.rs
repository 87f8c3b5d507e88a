//! Per-directory manifest: every stage output names its kind, step count and
//! grid geometry so the next stage can validate and resume from files alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use dogm_core::error::CoreError;
use dogm_core::grid::GridSpec;
use dogm_core::io::write_atomic;
use dogm_core::sim::{SceneConfig, SensorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeom {
    pub cells_per_side: usize,
    pub cell_size: f64,
    pub origin_east: f64,
    pub origin_north: f64,
}

impl GridGeom {
    pub fn from_spec(spec: &GridSpec) -> Self {
        let (origin_east, origin_north) = spec.origin();
        GridGeom {
            cells_per_side: spec.cells_per_side(),
            cell_size: spec.cell_size(),
            origin_east,
            origin_north,
        }
    }

    pub fn to_spec(&self) -> Result<GridSpec, CoreError> {
        GridSpec::new(
            self.cells_per_side,
            self.cell_size,
            self.origin_east,
            self.origin_north,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub steps: usize,
    pub rate_hz: f64,
    pub grid: GridGeom,
    /// Index of the first step present (labels start after the static
    /// classifier's window fills).
    #[serde(default)]
    pub first_step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensor: Option<SensorConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<String>,
    /// Full scenario config, embedded by the simulation stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneConfig>,
}

impl Manifest {
    pub fn save(&self, dir: &Path) -> Result<(), CoreError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::format(dir.display().to_string(), e.to_string()))?;
        write_atomic(&dir.join("manifest.json"), json.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, CoreError> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| CoreError::format(path.display().to_string(), e.to_string()))
    }

    pub fn expect_kind(&self, kind: &str, dir: &Path) -> Result<(), CoreError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(CoreError::format(
                dir.display().to_string(),
                format!("expected a {kind} directory, found kind {}", self.kind),
            ))
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }
}
