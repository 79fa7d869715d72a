//! Pipeline configuration: a documented `key = value` text format.
//!
//! Every value has a default matching the reference pipeline constants, and
//! every value can be overridden on the command line with `--set key=value`.
//! The effective configuration (defaults plus file plus overrides) is
//! rendered canonically and hashed; that digest is stamped into every
//! artifact so reruns are attributable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use proxclass_core::calibrate::TxPowerTable;
use proxclass_core::classifier::{FeatureSubset, GridSpec};
use proxclass_core::dataset::PrepConfig;
use proxclass_core::ingest::RollConfig;
use proxclass_core::signal::AttenuationThresholds;
use proxclass_core::synth::{ChannelParams, ChannelProfile, GenConfig, GenRates, LnsmParams};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,

    pub ble_log: Option<PathBuf>,
    pub wifi_log: Option<PathBuf>,
    pub run_metadata: Option<PathBuf>,
    pub fingerprint_table: Option<PathBuf>,
    pub ble_seed_table: Option<PathBuf>,
    /// Correction table consumed by train/gaen; defaults to the calibrate
    /// stage output.
    pub correction_table: Option<PathBuf>,
    pub synth_plan: Option<PathBuf>,

    pub thresholds: AttenuationThresholds,
    pub warn_minutes: f64,
    pub gaen_window_s: f64,
    pub match_window_s: f64,
    pub roll: RollConfig,
    pub prep: PrepConfig,
    pub tx_power: TxPowerTable,
    pub grid: GridSpec,

    pub synth_duration_s: f64,
    pub synth_rates: GenRates,
    pub synth_base_t_us: i64,
    pub synth_profile: ChannelProfile,

    digest: String,
}

fn default_entries() -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("out_dir", "out".into());
    put("seed", "0".into());
    put("ble_log", String::new());
    put("wifi_log", String::new());
    put("run_metadata", String::new());
    put("fingerprint_table", String::new());
    put("ble_seed_table", String::new());
    put("correction_table", String::new());
    put("synth_plan", String::new());
    put("thresholds.very_close_db", "55".into());
    put("thresholds.close_db", "63".into());
    put("warn_minutes", "15".into());
    put("gaen.window_s", "60".into());
    put("match.window_s", "5".into());
    put("roll.filter_window_s", "30".into());
    put("roll.successor_horizon_s", "10".into());
    put("prep.n_per_class", "100000".into());
    put("prep.per_cell_target", String::new());
    put("prep.train_ratio", "0.6".into());
    put("prep.test_ratio", "0.2".into());
    put("prep.eval_ratio", "0.2".into());
    put("prep.split_first", "false".into());
    put("tx_power.default", "0".into());
    put("grid.max_depth", "3,5,8,12,none".into());
    put("grid.min_samples_leaf", "1,5,20".into());
    put("grid.n_trees", "10,50,100".into());
    put("grid.features_per_split", "all,sqrt".into());
    put("synth.duration_s", "900".into());
    put("synth.ble_interval_s", "0.25".into());
    put("synth.probe_interval_s", "3".into());
    put("synth.base_t_us", "1600000000000000".into());
    let default_profile = ChannelProfile::default();
    for (name, ch) in [
        ("ble", default_profile.ble),
        ("wifi24", default_profile.wifi24),
        ("wifi5", default_profile.wifi5),
    ] {
        put(&format!("synth.{name}.pl0_db"), ch.lnsm.pl0_db.to_string());
        put(&format!("synth.{name}.d0_m"), ch.lnsm.d0_m.to_string());
        put(&format!("synth.{name}.exponent"), ch.lnsm.exponent.to_string());
        put(&format!("synth.{name}.sigma_db"), ch.lnsm.sigma_db.to_string());
        put(&format!("synth.{name}.noise_db"), ch.noise_db.to_string());
    }
    m
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl PipelineConfig {
    /// Load, apply overrides, and type-check the configuration.
    pub fn load(
        file: Option<&Path>,
        seed_override: Option<u64>,
        out_override: Option<&Path>,
        sets: &[String],
    ) -> Result<PipelineConfig, CliError> {
        let mut entries = default_entries();
        let known: Vec<String> = entries.keys().cloned().collect();

        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            for (line_no, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    usage(format!(
                        "{}:{}: expected `key = value`",
                        path.display(),
                        line_no + 1
                    ))
                })?;
                let key = key.trim().to_string();
                check_key(&known, &key).map_err(|e| {
                    usage(format!("{}:{}: {e}", path.display(), line_no + 1))
                })?;
                entries.insert(key, value.trim().to_string());
            }
        }
        for set in sets {
            let (key, value) = set
                .split_once('=')
                .ok_or_else(|| usage(format!("--set `{set}`: expected key=value")))?;
            let key = key.trim().to_string();
            check_key(&known, &key).map_err(usage)?;
            entries.insert(key, value.trim().to_string());
        }
        if let Some(seed) = seed_override {
            entries.insert("seed".into(), seed.to_string());
        }
        if let Some(out) = out_override {
            entries.insert("out_dir".into(), out.display().to_string());
        }

        Self::from_entries(entries)
    }

    fn from_entries(entries: BTreeMap<String, String>) -> Result<PipelineConfig, CliError> {
        let canonical: String = entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let digest = crate::manifest::sha256_hex(canonical.as_bytes());

        let get = |key: &str| -> &str { entries.get(key).map(String::as_str).unwrap_or("") };
        let num = |key: &str| -> Result<f64, CliError> {
            get(key)
                .parse()
                .map_err(|_| usage(format!("config {key}: bad number `{}`", get(key))))
        };
        let int = |key: &str| -> Result<u64, CliError> {
            get(key)
                .parse()
                .map_err(|_| usage(format!("config {key}: bad integer `{}`", get(key))))
        };
        let flag = |key: &str| -> Result<bool, CliError> {
            match get(key) {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(usage(format!("config {key}: bad boolean `{other}`"))),
            }
        };
        let path = |key: &str| -> Option<PathBuf> {
            let v = get(key);
            (!v.is_empty()).then(|| PathBuf::from(v))
        };

        let seed = int("seed")?;
        let thresholds =
            AttenuationThresholds::new(num("thresholds.very_close_db")?, num("thresholds.close_db")?)
                .map_err(|e| usage(format!("config thresholds: {e}")))?;

        let mut tx_power = TxPowerTable {
            per_device: BTreeMap::new(),
            default_dbm: num("tx_power.default")?,
        };
        for (key, value) in &entries {
            if let Some(device) = key.strip_prefix("tx_power.") {
                if device != "default" {
                    tx_power.per_device.insert(
                        device.to_string(),
                        value
                            .parse()
                            .map_err(|_| usage(format!("config {key}: bad number `{value}`")))?,
                    );
                }
            }
        }

        let channel = |name: &str| -> Result<ChannelParams, CliError> {
            Ok(ChannelParams {
                lnsm: LnsmParams {
                    pl0_db: num(&format!("synth.{name}.pl0_db"))?,
                    d0_m: num(&format!("synth.{name}.d0_m"))?,
                    exponent: num(&format!("synth.{name}.exponent"))?,
                    sigma_db: num(&format!("synth.{name}.sigma_db"))?,
                },
                noise_db: num(&format!("synth.{name}.noise_db"))?,
            })
        };

        let per_cell_target = if get("prep.per_cell_target").is_empty() {
            None
        } else {
            Some(int("prep.per_cell_target")? as usize)
        };

        let config = PipelineConfig {
            out_dir: PathBuf::from(get("out_dir")),
            seed,
            ble_log: path("ble_log"),
            wifi_log: path("wifi_log"),
            run_metadata: path("run_metadata"),
            fingerprint_table: path("fingerprint_table"),
            ble_seed_table: path("ble_seed_table"),
            correction_table: path("correction_table"),
            synth_plan: path("synth_plan"),
            thresholds,
            warn_minutes: num("warn_minutes")?,
            gaen_window_s: num("gaen.window_s")?,
            match_window_s: num("match.window_s")?,
            roll: RollConfig {
                filter_window_s: num("roll.filter_window_s")?,
                successor_horizon_s: num("roll.successor_horizon_s")?,
            },
            prep: PrepConfig {
                n_per_class: int("prep.n_per_class")? as usize,
                per_cell_target,
                train_ratio: num("prep.train_ratio")?,
                test_ratio: num("prep.test_ratio")?,
                eval_ratio: num("prep.eval_ratio")?,
                split_first: flag("prep.split_first")?,
                seed,
            },
            tx_power,
            grid: parse_grid(&entries)?,
            synth_duration_s: num("synth.duration_s")?,
            synth_rates: GenRates {
                ble_interval_s: num("synth.ble_interval_s")?,
                probe_interval_s: num("synth.probe_interval_s")?,
            },
            synth_base_t_us: int("synth.base_t_us")? as i64,
            synth_profile: ChannelProfile {
                ble: channel("ble")?,
                wifi24: channel("wifi24")?,
                wifi5: channel("wifi5")?,
            },
            digest,
        };
        config
            .prep
            .validate()
            .map_err(|e| usage(format!("config prep: {e}")))?;
        config
            .synth_profile
            .validate()
            .map_err(|e| usage(format!("config synth: {e}")))?;
        Ok(config)
    }

    /// Digest of the effective configuration, stamped into artifacts.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            duration_s: self.synth_duration_s,
            rates: self.synth_rates,
            base_t_us: self.synth_base_t_us,
            seed: self.seed,
        }
    }

    /// The comment stamped into every artifact this configuration produces.
    pub fn stamp(&self) -> Vec<String> {
        vec![format!("config_digest={}", self.digest)]
    }
}

fn check_key(known: &[String], key: &str) -> Result<(), String> {
    if key.starts_with("tx_power.") || known.iter().any(|k| k == key) {
        Ok(())
    } else {
        Err(format!("unknown config key `{key}`"))
    }
}

fn parse_grid(entries: &BTreeMap<String, String>) -> Result<GridSpec, CliError> {
    let list = |key: &str| -> Vec<&str> {
        entries
            .get(key)
            .map(String::as_str)
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect()
    };
    let mut max_depths = Vec::new();
    for token in list("grid.max_depth") {
        max_depths.push(match token {
            "none" => None,
            n => Some(
                n.parse()
                    .map_err(|_| usage(format!("grid.max_depth: bad entry `{n}`")))?,
            ),
        });
    }
    let mut min_samples_leaf = Vec::new();
    for token in list("grid.min_samples_leaf") {
        min_samples_leaf.push(
            token
                .parse()
                .map_err(|_| usage(format!("grid.min_samples_leaf: bad entry `{token}`")))?,
        );
    }
    let mut n_trees = Vec::new();
    for token in list("grid.n_trees") {
        n_trees.push(
            token
                .parse()
                .map_err(|_| usage(format!("grid.n_trees: bad entry `{token}`")))?,
        );
    }
    let mut features_per_split = Vec::new();
    for token in list("grid.features_per_split") {
        features_per_split.push(match token {
            "all" => FeatureSubset::All,
            "sqrt" => FeatureSubset::Sqrt,
            n => FeatureSubset::Count(
                n.parse()
                    .map_err(|_| usage(format!("grid.features_per_split: bad entry `{n}`")))?,
            ),
        });
    }
    Ok(GridSpec {
        max_depths,
        min_samples_leaf,
        n_trees,
        features_per_split,
    })
}
