//! Per-event optical flow for dynamic vision sensor (DVS) event streams.
//!
//! Events inside a short temporal window are turned into a Euclidean
//! distance transform (the *distance surface*). The distance surface obeys
//! the brightness-constancy flow equation exactly, so its spatial and
//! temporal derivatives can be fed to a robust Horn–Schunck solver. The
//! resulting dense velocity field is read back at the event pixels.
//!
//! The crate also ships a synthetic event simulator with analytic ground
//! truth, a gyroscope-based rotational ground-truth generator and the
//! AAE/RAEE error metrics used to score estimates.

pub mod denoise;
pub mod derivatives;
pub mod distance;
pub mod error;
pub mod event;
pub mod flo;
pub mod grid;
pub mod imu;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use event::{Event, EventStream, EventWindow, Pixel, Polarity, SensorGeometry};
pub use grid::Grid;
