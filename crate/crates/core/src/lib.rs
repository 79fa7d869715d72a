//! Multi-channel proximity classification toolkit.
//!
//! Implements a pipeline that turns raw BLE advertisement and IEEE 802.11
//! probe-request capture logs into proximity classifications:
//!
//! * [`signal`] — domain types and the threshold-based exposure pipeline
//!   (attenuation, scan windows, exposure scoring).
//! * [`ingest`] — log parsing, per-device trace recovery under MAC
//!   randomization, probe fingerprinting, and cross-channel matching.
//! * [`calibrate`] — per-device RSSI correction factors from distance
//!   profiles.
//! * [`dataset`] — balancing, stratified sampling, and train/test/eval
//!   splitting of matched samples.
//! * [`classifier`] — decision trees, random forests, grid search, and the
//!   13-model roster with specialized-vote combiners.
//! * [`metrics`] — confusion matrices and derived evaluation metrics.
//! * [`synth`] — path-loss models and synthetic capture-log generation used
//!   as test oracles and for dataset-free experiments.

pub mod calibrate;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub use ingest::MatchedSample;
pub use signal::{
    Address, AttenuationThresholds, DistanceClass, SignalKind, SignalRecord,
};
