//! Software test bench for brain-inspired vision sensors.
//!
//! The pipeline mirrors a DMD-based optical bench:
//!
//! 1. [`stimulus`] produces normalized radiance frames on the sensor grid.
//! 2. [`encoder`] compiles them into binary micromirror planes.
//! 3. [`projector`] turns planes into expected photon counts per pixel.
//! 4. [`tianmouc`] and [`evs`] simulate the sensors under test.
//! 5. [`characterize`] runs measurement protocols and writes reports;
//!    [`dataset`] converts RGB footage into dual-pathway recordings.

pub(crate) mod binio;
pub mod bench;
pub mod characterize;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evs;
pub mod projector;
pub mod rng;
pub mod stimulus;
pub mod tianmouc;

pub use binio::{temp_file_in, write_atomic};
pub use error::{Error, Result};
