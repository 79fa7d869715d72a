//! `proxclass synth`: generate capture logs plus ground-truth tables from
//! a scenario plan.

use std::fs;
use std::io::Write as _;

use proxclass_core::ingest::{write_ble_log, write_run_metadata, write_wifi_log};
use proxclass_core::synth::{generate, SynthPlan};

use super::{ensure_parent, required_input, Artifacts};
use crate::config::PipelineConfig;
use crate::manifest::Manifest;
use crate::CliError;

pub fn run(config: &PipelineConfig) -> Result<(), CliError> {
    let artifacts = Artifacts::new(config);
    let plan_path = required_input(&config.synth_plan, "synth_plan")?;
    let plan = SynthPlan::read(
        fs::File::open(&plan_path)
            .map_err(|e| CliError::Data(format!("cannot open {}: {e}", plan_path.display())))?,
    )?;
    let output = generate(&plan, &config.synth_profile, &config.gen_config())?;

    let dir = artifacts.synth_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(e.to_string()))?;
    let stamp = config.stamp();

    let ble_path = dir.join("ble.csv");
    ensure_parent(&ble_path)?;
    write_ble_log(fs::File::create(&ble_path).map_err(data)?, &output.ble, &stamp)?;
    let wifi_path = dir.join("wifi.csv");
    write_wifi_log(fs::File::create(&wifi_path).map_err(data)?, &output.wifi, &stamp)?;
    let runs_path = dir.join("runs.csv");
    write_run_metadata(fs::File::create(&runs_path).map_err(data)?, &output.metadata, &stamp)?;
    let fp_path = dir.join("fingerprints.csv");
    output
        .fingerprints
        .write(fs::File::create(&fp_path).map_err(data)?, &stamp)?;

    let seeds_path = dir.join("ble_seeds.csv");
    {
        let mut f = fs::File::create(&seeds_path).map_err(data)?;
        writeln!(f, "# config_digest={}", config.digest()).map_err(data)?;
        writeln!(f, "run_id,address,device").map_err(data)?;
        for (run, address, device) in &output.ble_seeds {
            writeln!(f, "{run},{address},{device}").map_err(data)?;
        }
    }
    let truth_path = dir.join("truth_traces.csv");
    {
        let mut f = fs::File::create(&truth_path).map_err(data)?;
        writeln!(f, "# config_digest={}", config.digest()).map_err(data)?;
        writeln!(f, "run_id,address,device,segment_index").map_err(data)?;
        for t in &output.truth {
            writeln!(f, "{},{},{},{}", t.run_id, t.address, t.device, t.segment_index)
                .map_err(data)?;
        }
    }

    let mut manifest = Manifest::new("synth", config.digest(), config.seed);
    manifest.input(&plan_path)?;
    for p in [&ble_path, &wifi_path, &runs_path, &fp_path, &seeds_path, &truth_path] {
        manifest.output(p)?;
    }
    manifest.stat("runs", plan.runs.len());
    manifest.stat("ble_records", output.ble.len());
    manifest.stat("wifi_records", output.wifi.len());
    manifest.stat("truth_segments", output.truth.len());
    manifest.write(&artifacts.out_dir)?;

    println!(
        "synth: {} runs -> {} BLE records, {} probes ({})",
        plan.runs.len(),
        output.ble.len(),
        output.wifi.len(),
        dir.display()
    );
    Ok(())
}

fn data(e: std::io::Error) -> CliError {
    CliError::Data(e.to_string())
}
