//! Capture-log ingestion: parsing, per-device trace recovery under MAC
//! randomization, probe-request fingerprinting, and cross-channel matching
//! into joint samples.

mod fingerprint;
mod matching;
mod parse;
mod roll;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::signal::{distance_to_class, DistanceClass};

pub use fingerprint::{
    fingerprint_probe, group_wifi_by_device, FingerprintTable, GroupedWifi, ProbeCapabilities,
    ProbeFingerprint,
};
pub use matching::{
    export_matched, export_matched_file, import_matched, match_signals, MatchStats, RowContext,
    MATCHED_COLUMNS,
};
pub use parse::{
    parse_ble_log, parse_run_metadata, parse_wifi_log, write_ble_log, write_ble_log_file,
    write_run_metadata, write_run_metadata_file, write_wifi_log, write_wifi_log_file, WifiProbe,
    BLE_LOG_COLUMNS, METADATA_COLUMNS, WIFI_LOG_COLUMNS,
};
pub use roll::{
    assign_trace_devices, trace_address_rolls, AssignStats, BleSeedTable, BleTrace, RollConfig,
    RollStats, TraceSegment,
};

/// Measurement environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Environment {
    Office,
    Bus,
    Parking,
    Train,
}

impl Environment {
    pub const ALL: [Environment; 4] = [
        Environment::Office,
        Environment::Bus,
        Environment::Parking,
        Environment::Train,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Environment::Office => "office",
            Environment::Bus => "bus",
            Environment::Parking => "parking",
            Environment::Train => "train",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Environment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "office" => Ok(Environment::Office),
            "bus" => Ok(Environment::Bus),
            "parking" => Ok(Environment::Parking),
            "train" => Ok(Environment::Train),
            other => Err(Error::InvalidInput(format!("unknown environment `{other}`"))),
        }
    }
}

/// How a measurement run was collected: a single sender at a fixed distance,
/// or multiple senders placed in a realistic scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setup {
    GroundTruth,
    Scenario,
}

impl Setup {
    pub fn name(self) -> &'static str {
        match self {
            Setup::GroundTruth => "ground_truth",
            Setup::Scenario => "scenario",
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground_truth" => Ok(Setup::GroundTruth),
            "scenario" => Ok(Setup::Scenario),
            other => Err(Error::InvalidInput(format!("unknown setup `{other}`"))),
        }
    }
}

/// One (run, device) row of the run metadata file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub run_id: String,
    pub device: String,
    pub environment: Environment,
    /// Measured sender distance; absent when the placement is unknown.
    pub distance_cm: Option<f64>,
    /// Absent rows leave holdout partitioning unable to place the run.
    pub setup: Option<Setup>,
}

/// One joint feature row: BLE plus both 802.11 bands at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSample {
    pub run_id: String,
    pub device: String,
    pub environment: Environment,
    pub distance_cm: Option<f64>,
    pub label: Option<DistanceClass>,
    /// BLE timestamp of the row, microseconds.
    pub t_us: i64,
    pub ble_rssi: i32,
    pub wifi24_rssi: i32,
    pub wifi24_freq: u16,
    pub wifi5_rssi: i32,
    pub wifi5_freq: u16,
}

impl MatchedSample {
    /// Check band ranges and the label/distance consistency invariant.
    pub fn validate(&self) -> Result<()> {
        if !(2400..=2500).contains(&self.wifi24_freq) {
            return Err(Error::InvalidInput(format!(
                "wifi24_freq {} outside the 2.4 GHz band",
                self.wifi24_freq
            )));
        }
        if !(5150..=5900).contains(&self.wifi5_freq) {
            return Err(Error::InvalidInput(format!(
                "wifi5_freq {} outside the 5 GHz band",
                self.wifi5_freq
            )));
        }
        if let Some(d) = self.distance_cm {
            let expected = distance_to_class(d)?;
            match self.label {
                Some(label) if label != expected => {
                    return Err(Error::InvalidInput(format!(
                        "label {label} does not match distance {d} cm (expected {expected})"
                    )));
                }
                None => {
                    return Err(Error::InvalidInput(format!(
                        "distance {d} cm present but label missing"
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
