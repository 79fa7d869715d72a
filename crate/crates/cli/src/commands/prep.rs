//! `proxclass prep`: hold out scenario runs, balance and sample the
//! ground-truth pool, split 60/20/20, and persist the three splits.

use std::fs;

use proxclass_core::dataset::{holdout_scenarios, prepare};
use proxclass_core::ingest::{export_matched, import_matched, parse_run_metadata};

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
    let (ground_truth, scenario) = holdout_scenarios(&samples, &index.setups())?;
    let prepared = prepare(&ground_truth, &config.prep)?;

    let mut manifest = Manifest::new("prep", config.digest(), config.seed);
    manifest.input(&matched_path)?;
    manifest.input(&runs_path)?;
    for (split, rows) in [
        ("train", &prepared.train),
        ("test", &prepared.test),
        ("eval", &prepared.eval),
    ] {
        let path = artifacts.prep_split(split);
        ensure_parent(&path)?;
        export_matched(
            fs::File::create(&path).map_err(|e| CliError::Data(e.to_string()))?,
            rows,
            &config.stamp(),
        )?;
        manifest.output(&path)?;
        manifest.stat(&format!("{split}_rows"), rows.len());
    }
    manifest.stat("scenario_rows_held_out", scenario.len());
    manifest.stat("holdout_rows", prepared.leakage.holdout_rows);
    manifest.stat("leaked_rows", prepared.leakage.leaked_rows);
    manifest.stat("split_first", config.prep.split_first);
    for cell in &prepared.provenance {
        manifest.stat(
            &format!(
                "pool.{}.{}.{}",
                cell.label.name(),
                cell.environment,
                cell.distance_cm
            ),
            cell.count,
        );
    }
    manifest.write(&artifacts.out_dir)?;

    println!(
        "prep: {} train / {} test / {} eval rows ({} scenario rows held out, {} leaked of {} holdout)",
        prepared.train.len(),
        prepared.test.len(),
        prepared.eval.len(),
        scenario.len(),
        prepared.leakage.leaked_rows,
        prepared.leakage.holdout_rows,
    );
    Ok(())
}
