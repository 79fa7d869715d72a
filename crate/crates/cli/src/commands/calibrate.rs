//! `proxclass calibrate`: distance profiles from the ground-truth runs,
//! then the per-device correction solve.

use std::fs;

use proxclass_core::calibrate::{average_rssi_per_distance, solve_corrections};
use proxclass_core::dataset::holdout_scenarios;
use proxclass_core::ingest::{import_matched, parse_run_metadata};
use proxclass_core::signal::SignalKind;

use super::{ensure_parent, Artifacts, RunIndex};
use crate::config::PipelineConfig;
use crate::manifest::{require_artifact, Manifest};
use crate::CliError;

pub fn run(config: &PipelineConfig) -> Result<(), CliError> {
    let artifacts = Artifacts::new(config);
    let matched_path = artifacts.matched();
    require_artifact(&matched_path, "match")?;
    let runs_path = artifacts.normalized_runs();
    require_artifact(&runs_path, "ingest")?;

    let samples = import_matched(&matched_path)?;
    let index = RunIndex::new(parse_run_metadata(&runs_path)?);
    let (ground_truth, _scenario) = holdout_scenarios(&samples, &index.setups())?;

    for device in ground_truth
        .iter()
        .map(|s| s.device.clone())
        .collect::<std::collections::BTreeSet<_>>()
    {
        let (_, defaulted) = config.tx_power.get(&device);
        if defaulted {
            log::warn!(
                "no tx_power configured for {device}; using default {} dBm",
                config.tx_power.default_dbm
            );
        }
    }

    let profiles = average_rssi_per_distance(&ground_truth, SignalKind::Ble)?;
    let corrections = solve_corrections(&profiles, &config.tx_power, &config.thresholds)?;

    let out_path = artifacts.corrections();
    ensure_parent(&out_path)?;
    corrections.write(
        fs::File::create(&out_path).map_err(|e| CliError::Data(e.to_string()))?,
        &config.stamp(),
    )?;

    let mut manifest = Manifest::new("calibrate", config.digest(), config.seed);
    manifest.input(&matched_path)?;
    manifest.input(&runs_path)?;
    manifest.output(&out_path)?;
    manifest.stat("devices", corrections.map.len());
    manifest.stat("profiles", profiles.len());
    for (device, corr) in &corrections.map {
        manifest.stat(&format!("correction.{device}"), corr);
    }
    manifest.write(&artifacts.out_dir)?;

    for (device, corr) in &corrections.map {
        println!("calibrate: {device} correction {corr:.2} dB");
    }
    Ok(())
}
