//! End-to-end library test: synthetic logs through trace recovery,
//! matching, calibration, preparation, training, and evaluation.

use std::collections::BTreeMap;

use proxclass_core::calibrate::{average_rssi_per_distance, solve_corrections, TxPowerTable};
use proxclass_core::classifier::{build_roster, features_of, FeatureSubset, GridSpec, RosterConfig};
use proxclass_core::dataset::{holdout_scenarios, prepare, PrepConfig};
use proxclass_core::ingest::{
    assign_trace_devices, group_wifi_by_device, match_signals, trace_address_rolls, BleSeedTable,
    Environment, MatchedSample, RollConfig, RowContext, Setup,
};
use proxclass_core::metrics::ConfusionMatrix;
use proxclass_core::signal::{AttenuationThresholds, SignalKind};
use proxclass_core::synth::{
    generate, ChannelProfile, DevicePlan, GenConfig, RunPlan, SynthPlan,
};

fn plan() -> SynthPlan {
    let mut runs = Vec::new();
    for (i, d_cm) in [50.0, 100.0, 200.0, 300.0, 400.0, 500.0].iter().enumerate() {
        runs.push(RunPlan {
            run_id: format!("gt_{i}"),
            environment: Environment::Office,
            setup: Setup::GroundTruth,
            devices: vec![DevicePlan {
                device: "DevA".into(),
                distance_m: d_cm / 100.0,
                tx_power_dbm: 0.0,
                roll_period_s: Some(60.0),
            }],
        });
    }
    runs.push(RunPlan {
        run_id: "scene".into(),
        environment: Environment::Office,
        setup: Setup::Scenario,
        devices: vec![DevicePlan {
            device: "DevA".into(),
            distance_m: 2.5,
            tx_power_dbm: 0.0,
            roll_period_s: Some(60.0),
        }],
    });
    SynthPlan { runs }
}

#[test]
fn synthetic_end_to_end() {
    let gen_cfg = GenConfig {
        duration_s: 150.0,
        seed: 5,
        ..GenConfig::default()
    };
    let output = generate(&plan(), &ChannelProfile::default(), &gen_cfg).unwrap();

    // Trace recovery scored against the generator's assignment.
    let mut seeds = BleSeedTable::default();
    for (run, addr, device) in &output.ble_seeds {
        seeds.map.insert((run.clone(), *addr), device.clone());
    }
    let truth: BTreeMap<_, _> = output
        .truth
        .iter()
        .map(|t| ((t.run_id.clone(), t.address), t.device.clone()))
        .collect();

    let mut samples: Vec<MatchedSample> = Vec::new();
    let mut setups = BTreeMap::new();
    for run in &plan().runs {
        setups.insert(run.run_id.clone(), Some(run.setup));
        let ble_run: Vec<_> = output
            .ble
            .iter()
            .filter(|r| r.run_id == run.run_id)
            .cloned()
            .collect();
        let (mut traces, _) = trace_address_rolls(&ble_run, &RollConfig::default());
        assign_trace_devices(&mut traces, &run.run_id, &seeds, None);
        for trace in &traces {
            let device = trace.device.clone().expect("all traces are seeded");
            for segment in &trace.segments {
                assert_eq!(
                    truth[&(run.run_id.clone(), segment.address)],
                    device,
                    "segment assigned to the wrong device"
                );
            }
        }

        let wifi_run: Vec<_> = output
            .wifi
            .iter()
            .filter(|p| p.record.run_id == run.run_id)
            .cloned()
            .collect();
        let grouped = group_wifi_by_device(&wifi_run, &output.fingerprints).unwrap();
        assert!(grouped.unknown.is_empty());

        let device_plan = &run.devices[0];
        let records: Vec<_> = traces
            .iter()
            .filter(|t| t.device.as_deref() == Some("DevA"))
            .flat_map(|t| t.records().cloned())
            .collect();
        let probes = &grouped.by_device["DevA"];
        let split = |kind: SignalKind| -> Vec<_> {
            probes
                .iter()
                .filter(|p| p.record.kind == kind)
                .map(|p| p.record.clone())
                .collect()
        };
        let ctx = RowContext {
            run_id: run.run_id.clone(),
            device: "DevA".into(),
            environment: run.environment,
            distance_cm: Some(device_plan.distance_m * 100.0),
        };
        let (rows, stats) = match_signals(
            &records,
            &split(SignalKind::Wifi24),
            &split(SignalKind::Wifi5),
            5.0,
            &ctx,
        )
        .unwrap();
        assert_eq!(stats.matched, records.len(), "regular probes match every row");
        samples.extend(rows);
    }

    let (ground_truth, scenario) = holdout_scenarios(&samples, &setups).unwrap();
    assert!(!scenario.is_empty());

    // Calibration on the ground-truth profiles.
    let profiles = average_rssi_per_distance(&ground_truth, SignalKind::Ble).unwrap();
    let thresholds = AttenuationThresholds::default();
    let corrections =
        solve_corrections(&profiles, &TxPowerTable::default(), &thresholds).unwrap();
    let correction = corrections.correction_for("DevA").unwrap();

    // Preparation.
    let prep_cfg = PrepConfig {
        n_per_class: 400,
        seed: 9,
        ..PrepConfig::default()
    };
    let prepared = prepare(&ground_truth, &prep_cfg).unwrap();
    for split in [&prepared.train, &prepared.test, &prepared.eval] {
        assert!(split.iter().all(|s| s.run_id.starts_with("gt_")));
    }

    // Roster training with a small grid.
    let roster_cfg = RosterConfig {
        thresholds,
        tx_power_dbm: 0.0,
        correction_db: Some(correction),
        grid: GridSpec {
            max_depths: vec![Some(6)],
            min_samples_leaf: vec![1],
            n_trees: vec![10],
            features_per_split: vec![FeatureSubset::Sqrt],
        },
        seed: 4,
    };
    let roster = build_roster("DevA", &prepared.train, &prepared.test, &roster_cfg).unwrap();
    assert_eq!(roster.models.len(), 13);

    // The full-feature forest must beat the threshold baseline on held-out
    // rows; the synthetic channels are built so the 5 GHz band separates.
    let accuracy = |no: u8, rows: &[MatchedSample]| {
        let pairs: Vec<_> = rows
            .iter()
            .map(|s| {
                (
                    s.label.unwrap(),
                    roster.predict(no, &features_of(s)).unwrap(),
                )
            })
            .collect();
        ConfusionMatrix::from_pairs(pairs).unwrap().accuracy()
    };
    let threshold_acc = accuracy(1, &prepared.eval);
    let forest_acc = accuracy(13, &prepared.eval);
    assert!(
        forest_acc > threshold_acc,
        "forest {forest_acc:.3} <= threshold {threshold_acc:.3}"
    );
    assert!(forest_acc > 0.8, "forest accuracy {forest_acc:.3}");
}
