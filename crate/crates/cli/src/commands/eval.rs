//! `proxclass eval`: score every persisted model on the ground-truth eval
//! split and on the scenario holdout sets, per device.

use std::fs;

use proxclass_core::classifier::{features_of, persist::load_roster, roster};
use proxclass_core::dataset::holdout_scenarios;
use proxclass_core::ingest::{import_matched, parse_run_metadata, MatchedSample};
use proxclass_core::metrics::{render_report, write_report_csv, ConfusionMatrix, EvalReport};

use super::{ensure_parent, Artifacts, RunIndex};
use crate::config::PipelineConfig;
use crate::manifest::{require_artifact, Manifest};
use crate::CliError;

pub fn run(config: &PipelineConfig) -> Result<(), CliError> {
    let artifacts = Artifacts::new(config);
    let eval_path = artifacts.prep_split("eval");
    require_artifact(&eval_path, "prep")?;
    let matched_path = artifacts.matched();
    require_artifact(&matched_path, "match")?;
    let runs_path = artifacts.normalized_runs();
    require_artifact(&runs_path, "ingest")?;
    let models_dir = artifacts.models_dir();
    require_artifact(&models_dir, "train")?;

    let eval_rows = import_matched(&eval_path)?;
    let matched = import_matched(&matched_path)?;
    let index = RunIndex::new(parse_run_metadata(&runs_path)?);
    let (_, scenario) = holdout_scenarios(&matched, &index.setups())?;
    let scenario_labeled: Vec<MatchedSample> = scenario
        .iter()
        .filter(|s| s.label.is_some())
        .cloned()
        .collect();
    let unlabeled_scenario = scenario.len() - scenario_labeled.len();

    let mut device_dirs: Vec<_> = fs::read_dir(&models_dir)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", models_dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    device_dirs.sort();
    if device_dirs.is_empty() {
        return Err(CliError::Data(format!(
            "no model directories under {}; run `proxclass train` first",
            models_dir.display()
        )));
    }

    let specs = roster();
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut absent: Vec<String> = Vec::new();
    let mut manifest = Manifest::new("eval", config.digest(), config.seed);
    manifest.input(&eval_path)?;
    manifest.input(&matched_path)?;
    manifest.input(&runs_path)?;

    for dir in &device_dirs {
        let trained = load_roster(dir)?;
        let device = trained.device.clone();

        let mut datasets: Vec<(String, Vec<&MatchedSample>)> = Vec::new();
        datasets.push((
            "gt_eval".into(),
            eval_rows.iter().filter(|s| s.device == device).collect(),
        ));
        let mut environments: Vec<_> = scenario_labeled
            .iter()
            .filter(|s| s.device == device)
            .map(|s| s.environment)
            .collect();
        environments.sort();
        environments.dedup();
        for env in environments {
            datasets.push((
                format!("scenario:{env}"),
                scenario_labeled
                    .iter()
                    .filter(|s| s.device == device && s.environment == env)
                    .collect(),
            ));
        }
        let all_scenario: Vec<&MatchedSample> = scenario_labeled
            .iter()
            .filter(|s| s.device == device)
            .collect();
        if !all_scenario.is_empty() {
            datasets.push(("scenario:total".into(), all_scenario));
        }

        for spec in &specs {
            let Some(_) = trained.models.get(&spec.roster_no) else {
                absent.push(format!("{device}/model_{:02}", spec.roster_no));
                continue;
            };
            for (dataset, rows) in &datasets {
                if rows.is_empty() {
                    continue;
                }
                let pairs: Result<Vec<_>, CliError> = rows
                    .iter()
                    .map(|s| {
                        let truth = s.label.expect("eval rows are labeled");
                        let pred = trained.predict(spec.roster_no, &features_of(s))?;
                        Ok((truth, pred))
                    })
                    .collect();
                let matrix = ConfusionMatrix::from_pairs(pairs?)?;
                reports.push(EvalReport {
                    model_no: spec.roster_no,
                    model_name: spec.name.to_string(),
                    dataset: dataset.clone(),
                    device: device.clone(),
                    matrix,
                });
            }
        }
    }

    let csv_path = artifacts.report_csv();
    ensure_parent(&csv_path)?;
    let mut csv_file = fs::File::create(&csv_path).map_err(|e| CliError::Data(e.to_string()))?;
    use std::io::Write as _;
    writeln!(csv_file, "# config_digest={}", config.digest())
        .map_err(|e| CliError::Data(e.to_string()))?;
    write_report_csv(&reports, &mut csv_file)?;

    let txt_path = artifacts.report_txt();
    let mut text = format!("# config_digest={}\n", config.digest());
    if !absent.is_empty() {
        text.push_str(&format!("absent models: {}\n", absent.join(", ")));
    }
    if unlabeled_scenario > 0 {
        text.push_str(&format!(
            "{unlabeled_scenario} scenario rows without ground truth skipped\n"
        ));
    }
    text.push_str(&render_report(&reports));
    fs::write(&txt_path, &text).map_err(|e| CliError::Data(e.to_string()))?;

    manifest.output(&csv_path)?;
    manifest.output(&txt_path)?;
    manifest.stat("report_rows", reports.len());
    manifest.stat("absent_models", absent.len());
    manifest.stat("scenario_rows_unlabeled", unlabeled_scenario);
    manifest.write(&artifacts.out_dir)?;

    println!("eval: {} report rows -> {}", reports.len(), csv_path.display());
    if !absent.is_empty() {
        println!("eval: absent models: {}", absent.join(", "));
    }
    Ok(())
}
