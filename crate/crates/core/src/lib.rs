//! Temporal multiscale simulation of plaque growth in a 2-D channel.
//!
//! The slow wall-growth variable `U` is advanced with large macro steps; at
//! every macro step the time-periodic Navier-Stokes flow on the current
//! (front-tracked) channel is computed over one unit period and the
//! period-averaged wall-shear-dependent reaction rate drives the update.

pub mod config;
pub mod error;
pub mod fem;
pub mod growth;
pub mod mesh;
pub mod periodic;
pub mod sparse;
pub mod study;
pub mod vtk;

pub use config::{load_config, ConfigError, SimConfig};
pub use error::{Result, SimError};
pub use growth::{run_direct, run_multiscale, GrowthParams, MacroState};
