//! Rolling-shutter flicker toolkit.
//!
//! Synthesizes AC-driven banding onto clean linear-light images, builds burst
//! and green-screen datasets with full provenance, and inverts the same
//! multiplicative row-gain model to estimate and remove flicker from bursts.
//!
//! All pixel math happens in linear light on [`ImageBuffer`]; sRGB transfer is
//! applied only when reading or writing files (see [`color`] and [`io`]).

pub mod color;
pub mod composite;
pub mod dataset;
pub mod deflicker;
pub mod error;
pub mod estimate;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod seed;
pub mod synth;
pub mod warp;
pub mod waveform;

pub use error::{Error, Result};
pub use model::{FlickerSpec, WaveformMode};
pub use raster::{ImageBuffer, Matte};
pub use seed::RngSeed;
