//! Simulation of a CMOS readout chain with per-region programmable gain and
//! pixel binning.
//!
//! The pipeline runs scene → [`sensor`] readout → photon estimate, with
//! [`gain`] and [`theory`] choosing per-region gain and bin size, and
//! [`metrics`] scoring the result against the noise-free scene.

// `!(x > 0.0)` is used on purpose: NaN must fail every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cli;
pub mod error;
pub mod gain;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod readout;
pub mod rng;
pub mod scene;
pub mod sensor;
pub mod theory;

pub use error::{Error, Result};
pub use gain::{gain_for_level, plan_gain_roi, GainMap, GainMode, PlanReport};
pub use grid::{Plane, RoiGrid};
pub use readout::{bin_capture, capture_spatially_varying, compose_from_gain_stack, BinMap, BinningMode};
pub use sensor::{
    estimate_photons, simulate_capture, simulate_pixel, PhotonEstimate, RadianceMap, RawCapture, Sensor, SensorConfig,
    ShotNoise,
};
pub use theory::{cutoff_frequency, optimal_pitch, ContrastForm, Cutoff, OptimalPitch, TheoryParams};
