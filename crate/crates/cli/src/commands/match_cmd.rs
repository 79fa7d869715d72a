//! `proxclass match`: per run, recover BLE traces across address rolls,
//! group probes by fingerprint, and join the channels into matched samples.

use std::fs;

use proxclass_core::ingest::{
    assign_trace_devices, fingerprint_probe, export_matched, group_wifi_by_device, match_signals,
    parse_ble_log, parse_run_metadata, parse_wifi_log, trace_address_rolls, BleSeedTable,
    FingerprintTable, MatchedSample, RowContext, WifiProbe,
};
use proxclass_core::signal::{SignalKind, SignalRecord};

use super::{ensure_parent, required_input, Artifacts, RunIndex};
use crate::config::PipelineConfig;
use crate::manifest::{require_artifact, Manifest};
use crate::CliError;

pub fn run(config: &PipelineConfig) -> Result<(), CliError> {
    let artifacts = Artifacts::new(config);
    let ble_path = artifacts.normalized_ble();
    let wifi_path = artifacts.normalized_wifi();
    let runs_path = artifacts.normalized_runs();
    for p in [&ble_path, &wifi_path, &runs_path] {
        require_artifact(p, "ingest")?;
    }
    let fp_path = required_input(&config.fingerprint_table, "fingerprint_table")?;
    let table = FingerprintTable::read(fs::File::open(&fp_path).map_err(|e| {
        CliError::Data(format!("cannot open {}: {e}", fp_path.display()))
    })?)?;
    let seeds = match &config.ble_seed_table {
        Some(path) => BleSeedTable::read(fs::File::open(path).map_err(|e| {
            CliError::Data(format!("cannot open {}: {e}", path.display()))
        })?)?,
        None => BleSeedTable::default(),
    };

    let ble = parse_ble_log(&ble_path)?;
    let wifi = parse_wifi_log(&wifi_path)?;
    let index = RunIndex::new(parse_run_metadata(&runs_path)?);

    let mut samples: Vec<MatchedSample> = Vec::new();
    let mut dropped_24 = 0usize;
    let mut dropped_5 = 0usize;
    let mut unknown_probes = 0usize;
    let mut unfingerprintable = 0usize;
    let mut unassigned_traces = 0usize;

    for run_id in index.run_ids() {
        let run_meta = index.devices_of(&run_id);
        let ble_run: Vec<SignalRecord> = ble
            .iter()
            .filter(|r| r.run_id == run_id)
            .cloned()
            .collect();
        let wifi_run: Vec<WifiProbe> = wifi
            .iter()
            .filter(|p| p.record.run_id == run_id)
            .cloned()
            .collect();
        if ble_run.is_empty() && wifi_run.is_empty() {
            continue;
        }

        let (mut traces, _roll_stats) = trace_address_rolls(&ble_run, &config.roll);
        let fallback = if run_meta.len() == 1 {
            Some(run_meta[0].device.as_str())
        } else {
            None
        };
        let assign = assign_trace_devices(&mut traces, &run_id, &seeds, fallback);
        unassigned_traces += assign.unassigned;

        let fingerprintable: Vec<WifiProbe> = wifi_run
            .iter()
            .filter(|p| {
                let ok = fingerprint_probe(p).is_ok();
                if !ok {
                    unfingerprintable += 1;
                }
                ok
            })
            .cloned()
            .collect();
        let grouped = group_wifi_by_device(&fingerprintable, &table)?;
        unknown_probes += grouped.unknown.len();

        for meta in run_meta {
            let mut ble_records: Vec<SignalRecord> = traces
                .iter()
                .filter(|t| t.device.as_deref() == Some(meta.device.as_str()))
                .flat_map(|t| t.records().cloned())
                .collect();
            ble_records.sort_by_key(|r| r.timestamp_us);
            let device_probes = grouped
                .by_device
                .get(&meta.device)
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let split_band = |kind: SignalKind| -> Vec<SignalRecord> {
                device_probes
                    .iter()
                    .filter(|p| p.record.kind == kind)
                    .map(|p| p.record.clone())
                    .collect()
            };
            let wifi24 = split_band(SignalKind::Wifi24);
            let wifi5 = split_band(SignalKind::Wifi5);

            let ctx = RowContext {
                run_id: run_id.clone(),
                device: meta.device.clone(),
                environment: meta.environment,
                distance_cm: meta.distance_cm,
            };
            let (mut rows, stats) =
                match_signals(&ble_records, &wifi24, &wifi5, config.match_window_s, &ctx)?;
            dropped_24 += stats.dropped_missing_wifi24;
            dropped_5 += stats.dropped_missing_wifi5;
            samples.append(&mut rows);
        }
    }

    let out_path = artifacts.matched();
    ensure_parent(&out_path)?;
    export_matched(
        fs::File::create(&out_path).map_err(|e| CliError::Data(e.to_string()))?,
        &samples,
        &config.stamp(),
    )?;

    let mut manifest = Manifest::new("match", config.digest(), config.seed);
    manifest.input(&ble_path)?;
    manifest.input(&wifi_path)?;
    manifest.input(&runs_path)?;
    manifest.input(&fp_path)?;
    manifest.output(&out_path)?;
    manifest.stat("matched_rows", samples.len());
    manifest.stat("dropped_missing_wifi24", dropped_24);
    manifest.stat("dropped_missing_wifi5", dropped_5);
    manifest.stat("unknown_fingerprint_probes", unknown_probes);
    manifest.stat("unfingerprintable_probes", unfingerprintable);
    manifest.stat("unassigned_ble_traces", unassigned_traces);
    manifest.write(&artifacts.out_dir)?;

    println!(
        "match: {} rows ({} missing 2.4 GHz, {} missing 5 GHz, {} unknown probes)",
        samples.len(),
        dropped_24,
        dropped_5,
        unknown_probes
    );
    Ok(())
}
