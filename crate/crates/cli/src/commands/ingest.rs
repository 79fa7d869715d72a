//! `proxclass ingest`: parse the raw logs, validate, sort by time, and
//! write normalized copies for the downstream stages.

use std::fs;

use proxclass_core::ingest::{
    parse_ble_log, parse_run_metadata, parse_wifi_log, write_ble_log, write_run_metadata,
    write_wifi_log,
};

use super::{ensure_parent, required_input, Artifacts};
use crate::config::PipelineConfig;
use crate::manifest::Manifest;
use crate::CliError;

pub fn run(config: &PipelineConfig) -> Result<(), CliError> {
    let artifacts = Artifacts::new(config);
    let ble_path = required_input(&config.ble_log, "ble_log")?;
    let wifi_path = required_input(&config.wifi_log, "wifi_log")?;
    let meta_path = required_input(&config.run_metadata, "run_metadata")?;

    let mut ble = parse_ble_log(&ble_path)?;
    let mut wifi = parse_wifi_log(&wifi_path)?;
    let metadata = parse_run_metadata(&meta_path)?;

    ble.sort_by_key(|r| (r.timestamp_us, r.address));
    wifi.sort_by_key(|p| (p.record.timestamp_us, p.record.address));

    let out_ble = artifacts.normalized_ble();
    let out_wifi = artifacts.normalized_wifi();
    let out_runs = artifacts.normalized_runs();
    ensure_parent(&out_ble)?;
    write_ble_log(fs::File::create(&out_ble).map_err(io_err)?, &ble, &config.stamp())?;
    write_wifi_log(fs::File::create(&out_wifi).map_err(io_err)?, &wifi, &config.stamp())?;
    write_run_metadata(
        fs::File::create(&out_runs).map_err(io_err)?,
        &metadata,
        &config.stamp(),
    )?;

    let mut manifest = Manifest::new("ingest", config.digest(), config.seed);
    manifest.input(&ble_path)?;
    manifest.input(&wifi_path)?;
    manifest.input(&meta_path)?;
    manifest.output(&out_ble)?;
    manifest.output(&out_wifi)?;
    manifest.output(&out_runs)?;
    manifest.stat("ble_records", ble.len());
    manifest.stat("wifi_records", wifi.len());
    manifest.stat("metadata_rows", metadata.len());
    manifest.write(&artifacts.out_dir)?;

    println!(
        "ingest: {} BLE records, {} probes, {} metadata rows",
        ble.len(),
        wifi.len(),
        metadata.len()
    );
    Ok(())
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Data(e.to_string())
}
