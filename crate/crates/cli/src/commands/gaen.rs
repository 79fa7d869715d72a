//! `proxclass gaen`: run one device's BLE trace through the threshold
//! exposure pipeline: scan windows, attenuation aggregation, class
//! durations, exposure score, warn decision.

use std::fs;
use std::io::Write as _;

use proxclass_core::calibrate::CorrectionTable;
use proxclass_core::ingest::{
    assign_trace_devices, parse_ble_log, parse_run_metadata, trace_address_rolls, BleSeedTable,
};
use proxclass_core::signal::{
    attenuation, classify_attenuation, exposure_score, scan_window_stats, should_warn_at,
    DistanceClass, ExposureDurations,
};

use super::{correction_path, ensure_parent, Artifacts, RunIndex};
use crate::config::PipelineConfig;
use crate::manifest::{require_artifact, Manifest};
use crate::CliError;

pub fn run(config: &PipelineConfig, run_id: &str, device: Option<&str>) -> Result<(), CliError> {
    let artifacts = Artifacts::new(config);
    let ble_path = artifacts.normalized_ble();
    require_artifact(&ble_path, "ingest")?;
    let runs_path = artifacts.normalized_runs();
    require_artifact(&runs_path, "ingest")?;
    let corr_path = correction_path(config, &artifacts);
    require_artifact(&corr_path, "calibrate")?;

    let index = RunIndex::new(parse_run_metadata(&runs_path)?);
    let run_meta = index.devices_of(run_id);
    if run_meta.is_empty() {
        return Err(CliError::Data(format!("run {run_id} not in metadata")));
    }
    let device = match device {
        Some(d) => d.to_string(),
        None if run_meta.len() == 1 => run_meta[0].device.clone(),
        None => {
            return Err(CliError::Usage(format!(
                "run {run_id} has {} devices; pass --device",
                run_meta.len()
            )))
        }
    };

    let corrections = CorrectionTable::read(
        fs::File::open(&corr_path).map_err(|e| CliError::Data(e.to_string()))?,
    )?;
    let correction_db = corrections.correction_for(&device).ok_or_else(|| {
        CliError::Data(format!("device {device} not in {}", corr_path.display()))
    })?;
    let (tx_power_dbm, defaulted) = config.tx_power.get(&device);
    if defaulted {
        log::warn!("no tx_power configured for {device}; using default {tx_power_dbm} dBm");
    }

    let ble = parse_ble_log(&ble_path)?;
    let run_records: Vec<_> = ble.into_iter().filter(|r| r.run_id == run_id).collect();
    if run_records.is_empty() {
        return Err(CliError::Data(format!("run {run_id} has no BLE records")));
    }
    let (mut traces, _) = trace_address_rolls(&run_records, &config.roll);
    let seeds = match &config.ble_seed_table {
        Some(path) => BleSeedTable::read(
            fs::File::open(path).map_err(|e| CliError::Data(e.to_string()))?,
        )?,
        None => BleSeedTable::default(),
    };
    let fallback = (run_meta.len() == 1).then_some(device.as_str());
    assign_trace_devices(&mut traces, run_id, &seeds, fallback);
    let mut records: Vec<_> = traces
        .iter()
        .filter(|t| t.device.as_deref() == Some(device.as_str()))
        .flat_map(|t| t.records().cloned())
        .collect();
    records.sort_by_key(|r| r.timestamp_us);
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "no trace of {device} recovered in run {run_id}"
        )));
    }

    // Fixed windows from the first record; per window the minimum
    // attenuation is classified and the window length feeds the durations.
    let window_us = (config.gaen_window_s * 1e6).round() as i64;
    let t0 = records[0].timestamp_us;
    let mut durations = ExposureDurations::default();
    let out_path = artifacts.gaen_windows(run_id, &device);
    ensure_parent(&out_path)?;
    let mut out = fs::File::create(&out_path).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(out, "# config_digest={}", config.digest()).map_err(data)?;
    writeln!(
        out,
        "window_start_us,window_end_us,records,min_attenuation_db,avg_attenuation_db,class"
    )
    .map_err(data)?;

    let mut window_count = 0usize;
    let mut cursor = 0usize;
    let mut window_start = t0;
    while cursor < records.len() {
        let window_end = window_start + window_us;
        let mut attenuations = Vec::new();
        while cursor < records.len() && records[cursor].timestamp_us < window_end {
            attenuations.push(attenuation(
                tx_power_dbm,
                records[cursor].rssi_dbm as f64,
                correction_db,
            ));
            cursor += 1;
        }
        if !attenuations.is_empty() {
            let stats = scan_window_stats(&attenuations, config.gaen_window_s)?;
            let class = classify_attenuation(stats.min_attenuation_db, &config.thresholds);
            let minutes = config.gaen_window_s / 60.0;
            match class {
                DistanceClass::VeryClose => durations.very_close_min += minutes,
                DistanceClass::Close => durations.close_min += minutes,
                DistanceClass::Safe => {}
            }
            writeln!(
                out,
                "{},{},{},{},{},{}",
                window_start,
                window_end,
                attenuations.len(),
                stats.min_attenuation_db,
                stats.avg_attenuation_db,
                class
            )
            .map_err(data)?;
            window_count += 1;
        }
        window_start = window_end;
    }
    drop(out);

    let score = exposure_score(&durations);
    let warn = should_warn_at(score, config.warn_minutes);

    let mut manifest = Manifest::new("gaen", config.digest(), config.seed);
    manifest.input(&ble_path)?;
    manifest.input(&corr_path)?;
    manifest.output(&out_path)?;
    manifest.stat("run", run_id);
    manifest.stat("device", &device);
    manifest.stat("windows", window_count);
    manifest.stat("very_close_min", durations.very_close_min);
    manifest.stat("close_min", durations.close_min);
    manifest.stat("exposure_score", score);
    manifest.stat("warn", warn);
    manifest.write(&artifacts.out_dir)?;

    println!(
        "gaen: {run_id}/{device}: {window_count} windows, very close {:.1} min, close {:.1} min",
        durations.very_close_min, durations.close_min
    );
    println!("gaen: exposure score {score:.2} -> warn = {warn}");
    Ok(())
}

fn data(e: std::io::Error) -> CliError {
    CliError::Data(e.to_string())
}
