//! Simulation and analysis toolkit for a pulsed free-precession vector
//! magnetometer driven by a fast rotating transverse field.
//!
//! Units throughout: nT, s, rad. Gyromagnetic ratios are stored in Hz/nT.

pub mod detection;
pub mod error;
pub mod fourshot;
pub mod harmonic_fit;
pub mod model;
pub mod sensitivity;
pub mod spin_sim;
pub mod systematics;
pub mod waveform;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use fourshot::{BlockSummary, Experiment, Panorama, ShotRecord};
pub use model::{CellParams, Constants, FieldConfig, Rotation, ShotPhaseConfig};
