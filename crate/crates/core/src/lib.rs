//! Inertial/DVL navigation with adaptive invariant and error-state Kalman filters.
//!
//! The estimator state lives on the extended pose group (attitude, velocity and
//! position in the Earth-fixed frame) augmented with gyro and accelerometer biases.
//! A learned regressor estimates the IMU noise variances from a sliding window of
//! raw samples, and the filter blends it with an innovation-based estimate.

pub mod adaptive;
pub mod bench;
pub mod dataio;
pub mod dynamics;
pub mod error;
pub mod filter;
pub mod geo;
pub mod neural;
pub mod simgen;

pub use error::{Error, Result};
