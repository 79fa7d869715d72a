//! `proxclass train`: the 13-model roster per sending device, persisted
//! as one file per model.

use std::collections::BTreeSet;
use std::fs;

use proxclass_core::classifier::{build_roster, persist::save_roster, RosterConfig};
use proxclass_core::calibrate::CorrectionTable;
use proxclass_core::ingest::import_matched;

use super::{correction_path, Artifacts};
use crate::config::PipelineConfig;
use crate::manifest::{require_artifact, Manifest};
use crate::CliError;

pub fn run(config: &PipelineConfig) -> Result<(), CliError> {
    let artifacts = Artifacts::new(config);
    let train_path = artifacts.prep_split("train");
    let test_path = artifacts.prep_split("test");
    require_artifact(&train_path, "prep")?;
    require_artifact(&test_path, "prep")?;
    let corr_path = correction_path(config, &artifacts);
    require_artifact(&corr_path, "calibrate")?;

    let train = import_matched(&train_path)?;
    let test = import_matched(&test_path)?;
    let corrections = CorrectionTable::read(
        fs::File::open(&corr_path).map_err(|e| CliError::Data(e.to_string()))?,
    )?;

    let devices: BTreeSet<String> = train.iter().map(|s| s.device.clone()).collect();
    let mut manifest = Manifest::new("train", config.digest(), config.seed);
    manifest.input(&train_path)?;
    manifest.input(&test_path)?;
    manifest.input(&corr_path)?;

    for device in &devices {
        let device_train: Vec<_> = train.iter().filter(|s| &s.device == device).cloned().collect();
        let device_test: Vec<_> = test.iter().filter(|s| &s.device == device).cloned().collect();
        let (tx_power_dbm, defaulted) = config.tx_power.get(device);
        if defaulted {
            log::warn!("no tx_power configured for {device}; using default {tx_power_dbm} dBm");
        }
        let roster_config = RosterConfig {
            thresholds: config.thresholds,
            tx_power_dbm,
            correction_db: corrections.correction_for(device),
            grid: config.grid.clone(),
            seed: config.seed,
        };
        let roster = build_roster(device, &device_train, &device_test, &roster_config)?;
        let dir = artifacts.device_models_dir(device);
        save_roster(&roster, &dir)?;
        for no in roster.models.keys() {
            manifest.output(&dir.join(format!("model_{no:02}.txt")))?;
        }
        manifest.stat(&format!("models.{device}"), roster.models.len());
        println!("train: {device}: {} models", roster.models.len());
    }
    if devices.is_empty() {
        return Err(CliError::Data("train split has no rows".into()));
    }
    manifest.write(&artifacts.out_dir)?;
    Ok(())
}
