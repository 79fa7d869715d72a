pub mod calibrate;
pub mod eval;
pub mod gaen;
pub mod ingest;
pub mod match_cmd;
pub mod prep;
pub mod synth;
pub mod train;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use proxclass_core::ingest::{RunMeta, Setup};

use crate::config::PipelineConfig;
use crate::CliError;

/// Fixed artifact locations under the output directory.
pub struct Artifacts {
    pub out_dir: PathBuf,
}

impl Artifacts {
    pub fn new(config: &PipelineConfig) -> Artifacts {
        Artifacts {
            out_dir: config.out_dir.clone(),
        }
    }

    pub fn normalized_ble(&self) -> PathBuf {
        self.out_dir.join("normalized/ble.csv")
    }
    pub fn normalized_wifi(&self) -> PathBuf {
        self.out_dir.join("normalized/wifi.csv")
    }
    pub fn normalized_runs(&self) -> PathBuf {
        self.out_dir.join("normalized/runs.csv")
    }
    pub fn matched(&self) -> PathBuf {
        self.out_dir.join("matched.csv")
    }
    pub fn corrections(&self) -> PathBuf {
        self.out_dir.join("corrections.csv")
    }
    pub fn prep_split(&self, split: &str) -> PathBuf {
        self.out_dir.join(format!("prep/{split}.csv"))
    }
    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }
    pub fn device_models_dir(&self, device: &str) -> PathBuf {
        self.models_dir().join(device)
    }
    pub fn report_csv(&self) -> PathBuf {
        self.out_dir.join("reports/report.csv")
    }
    pub fn report_txt(&self) -> PathBuf {
        self.out_dir.join("reports/report.txt")
    }
    pub fn gaen_windows(&self, run: &str, device: &str) -> PathBuf {
        self.out_dir.join(format!("gaen/{run}_{device}.csv"))
    }
    pub fn synth_dir(&self) -> PathBuf {
        self.out_dir.join("synth")
    }
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    Ok(())
}

/// Input path from config, with the field name in the error.
pub fn required_input(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    path.clone()
        .ok_or_else(|| CliError::Usage(format!("config `{key}` is required for this stage")))
}

/// Correction-table path: explicit config value or the calibrate output.
pub fn correction_path(config: &PipelineConfig, artifacts: &Artifacts) -> PathBuf {
    config
        .correction_table
        .clone()
        .unwrap_or_else(|| artifacts.corrections())
}

/// Per-run metadata lookups used by several stages.
pub struct RunIndex {
    pub rows: Vec<RunMeta>,
}

impl RunIndex {
    pub fn new(rows: Vec<RunMeta>) -> RunIndex {
        RunIndex { rows }
    }

    pub fn run_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.rows.iter().map(|m| m.run_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn devices_of(&self, run_id: &str) -> Vec<&RunMeta> {
        self.rows.iter().filter(|m| m.run_id == run_id).collect()
    }

    pub fn setups(&self) -> BTreeMap<String, Option<Setup>> {
        let mut map = BTreeMap::new();
        for m in &self.rows {
            map.insert(m.run_id.clone(), m.setup);
        }
        map
    }
}
