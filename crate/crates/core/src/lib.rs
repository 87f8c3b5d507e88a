//! Desk-scale dynamic occupancy grid laboratory: synthetic lidar scenes,
//! measurement grid maps, a particle-filter DOGM baseline, automatic label
//! generation and the evaluation metrics shared by all estimators.

pub mod error;
pub mod grid;
pub mod io;
pub mod labels;
pub mod meas;
pub mod metrics;
pub mod pf;
pub mod scenarios;
pub mod sim;

pub use error::{CoreError, Result};
pub use grid::{
    occupancy_from_masses, DynamicGrid, GridSpec, MeasurementGrid, PredictionGrid,
    DEPLOYMENT_P_O_THRESHOLD,
};
