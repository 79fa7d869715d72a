//! Per-device RSSI correction factors.
//!
//! The thresholds are defined on attenuation, not on device-specific RSSI,
//! so each sender needs a correction offset. From the average RSSI per
//! distance, the solver picks the correction that keeps every very-close
//! distance strictly below the very-close threshold (hard constraint) while
//! pulling the close and safe distances as near as possible to their
//! threshold bands (soft penalties).
//!
//! Devices do not share variables, so the joint program decomposes into
//! independent one-dimensional problems. Each is piecewise linear and convex
//! in the correction, hence solved exactly by evaluating the penalty at its
//! breakpoints; the result is identical to solving the joint program.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::ingest::{Environment, MatchedSample};
use crate::signal::{
    attenuation, distance_to_class, AttenuationThresholds, DistanceClass, SignalKind,
};

/// Margin implementing the strict very-close inequality.
pub const STRICT_MARGIN_DB: f64 = 1e-6;

/// Mean RSSI per measured distance for one (device, environment).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile {
    pub device: String,
    pub environment: Environment,
    pub entries: Vec<ProfileEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileEntry {
    pub distance_cm: f64,
    pub mean_rssi_dbm: f64,
    pub count: usize,
}

/// Per-device transmit powers, with a default for unlisted devices.
#[derive(Debug, Clone, Default)]
pub struct TxPowerTable {
    pub per_device: BTreeMap<String, f64>,
    pub default_dbm: f64,
}

impl TxPowerTable {
    /// Returns the device's power and whether the default was used.
    pub fn get(&self, device: &str) -> (f64, bool) {
        match self.per_device.get(device) {
            Some(&p) => (p, false),
            None => (self.default_dbm, true),
        }
    }
}

/// Device-to-correction map produced by the solver.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectionTable {
    pub map: BTreeMap<String, f64>,
}

impl CorrectionTable {
    pub fn correction_for(&self, device: &str) -> Option<f64> {
        self.map.get(device).copied()
    }

    pub fn write<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "device,correction_db")?;
        for (device, corr) in &self.map {
            writeln!(w, "{device},{corr}")?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<CorrectionTable> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(r);
        let headers = reader
            .headers()
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn {
                    path: "<correction table>".into(),
                    column: name.into(),
                })
        };
        let c_dev = find("device")?;
        let c_corr = find("correction_db")?;
        let mut map = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::InvalidInput(e.to_string()))?;
            let corr: f64 = rec
                .get(c_corr)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::InvalidInput("bad correction value".into()))?;
            map.insert(rec.get(c_dev).unwrap_or("").to_string(), corr);
        }
        Ok(CorrectionTable { map })
    }
}

/// Group ground-truth samples into per-(device, environment) profiles of
/// mean RSSI per distance, on the requested channel.
pub fn average_rssi_per_distance(
    samples: &[MatchedSample],
    channel: SignalKind,
) -> Result<Vec<DistanceProfile>> {
    // Keyed by (device, environment, distance in 0.1 mm ticks to keep a
    // total order on the distances).
    let mut cells: BTreeMap<(String, Environment, i64), (f64, usize)> = BTreeMap::new();
    for s in samples {
        let Some(d) = s.distance_cm else { continue };
        let rssi = match channel {
            SignalKind::Ble => s.ble_rssi,
            SignalKind::Wifi24 => s.wifi24_rssi,
            SignalKind::Wifi5 => s.wifi5_rssi,
        } as f64;
        let key = (s.device.clone(), s.environment, (d * 1000.0).round() as i64);
        let cell = cells.entry(key).or_insert((0.0, 0));
        cell.0 += rssi;
        cell.1 += 1;
    }
    if cells.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let mut profiles: Vec<DistanceProfile> = Vec::new();
    for ((device, environment, dist_ticks), (sum, count)) in cells {
        let entry = ProfileEntry {
            distance_cm: dist_ticks as f64 / 1000.0,
            mean_rssi_dbm: sum / count as f64,
            count,
        };
        match profiles
            .iter_mut()
            .find(|p| p.device == device && p.environment == environment)
        {
            Some(p) => p.entries.push(entry),
            None => profiles.push(DistanceProfile {
                device,
                environment,
                entries: vec![entry],
            }),
        }
    }
    Ok(profiles)
}

/// Penalty of one profile entry at correction `c`: zero inside the class's
/// target attenuation band, absolute deviation from the nearer edge outside.
fn entry_penalty(base_db: f64, class: DistanceClass, c: f64, t: &AttenuationThresholds) -> f64 {
    let att = base_db - c;
    match class {
        // Hard-constrained; no penalty term.
        DistanceClass::VeryClose => 0.0,
        DistanceClass::Close => {
            (t.very_close_db - att).max(0.0) + (att - t.close_db).max(0.0)
        }
        DistanceClass::Safe => (t.close_db - att).max(0.0),
    }
}

#[derive(Debug)]
struct DeviceProblem {
    /// (tx - mean_rssi, class) per profile entry.
    terms: Vec<(f64, DistanceClass)>,
}

impl DeviceProblem {
    fn penalty(&self, c: f64, t: &AttenuationThresholds) -> f64 {
        self.terms
            .iter()
            .map(|&(base, class)| entry_penalty(base, class, c, t))
            .sum()
    }
}

/// Solve the per-device corrections.
///
/// Hard: every very-close entry ends up with attenuation strictly below the
/// very-close threshold. Soft: close entries target the band between the two
/// thresholds, safe entries target at-or-above the close threshold. The
/// penalty is piecewise linear, so its minimum is an interval between two
/// kinks; the midpoint is returned, which keeps the solution translation
/// equivariant. Without soft terms the objective is flat and the
/// smallest-magnitude feasible correction is returned.
pub fn solve_corrections(
    profiles: &[DistanceProfile],
    tx_powers: &TxPowerTable,
    t: &AttenuationThresholds,
) -> Result<CorrectionTable> {
    let mut problems: BTreeMap<String, DeviceProblem> = BTreeMap::new();
    for profile in profiles {
        let (tx, _) = tx_powers.get(&profile.device);
        let problem = problems
            .entry(profile.device.clone())
            .or_insert_with(|| DeviceProblem { terms: Vec::new() });
        for entry in &profile.entries {
            let class = distance_to_class(entry.distance_cm)?;
            problem.terms.push((tx - entry.mean_rssi_dbm, class));
        }
    }

    let mut map = BTreeMap::new();
    for (device, problem) in problems {
        let c = solve_device(&device, &problem, t)?;
        // Every hard constraint must hold at the solution.
        for &(base, class) in &problem.terms {
            if class == DistanceClass::VeryClose && base - c >= t.very_close_db {
                return Err(Error::Infeasible {
                    device: device.clone(),
                    detail: format!(
                        "very-close entry keeps attenuation {:.3} dB at or above {}",
                        base - c,
                        t.very_close_db
                    ),
                });
            }
        }
        map.insert(device, c);
    }
    Ok(CorrectionTable { map })
}

fn solve_device(device: &str, problem: &DeviceProblem, t: &AttenuationThresholds) -> Result<f64> {
    // Hard constraints: base - c < very_close  =>  c >= base - very_close + margin.
    let mut c_min = f64::NEG_INFINITY;
    let mut has_very_close = false;
    for &(base, class) in &problem.terms {
        if !base.is_finite() {
            return Err(Error::Infeasible {
                device: device.to_string(),
                detail: format!("non-finite attenuation base {base}"),
            });
        }
        if class == DistanceClass::VeryClose {
            has_very_close = true;
            c_min = c_min.max(base - t.very_close_db + STRICT_MARGIN_DB);
        }
    }
    if !has_very_close {
        return Err(Error::MissingVeryClose {
            device: device.to_string(),
        });
    }

    // Soft-term kinks: each close entry bends at c = base - very_close and
    // c = base - close; each safe entry at c = base - close.
    let mut candidates = vec![c_min];
    for &(base, class) in &problem.terms {
        match class {
            DistanceClass::VeryClose => {}
            DistanceClass::Close => {
                candidates.push(base - t.very_close_db);
                candidates.push(base - t.close_db);
            }
            DistanceClass::Safe => candidates.push(base - t.close_db),
        }
    }
    candidates.retain(|&c| c >= c_min);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    let evaluated: Vec<(f64, f64)> = candidates
        .iter()
        .map(|&c| (c, problem.penalty(c, t)))
        .collect();
    let best_value = evaluated
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    let flat_tol = 1e-12 * (1.0 + best_value.abs());
    let optimal: Vec<f64> = evaluated
        .iter()
        .filter(|&&(_, v)| v <= best_value + flat_tol)
        .map(|&(c, _)| c)
        .collect();
    let lo = optimal[0];
    let soft_terms = problem
        .terms
        .iter()
        .any(|&(_, class)| class != DistanceClass::VeryClose);
    if !soft_terms {
        // Flat objective above the hard bound.
        return Ok(lo.max(0.0));
    }
    let hi = *optimal.last().unwrap();
    Ok(lo + (hi - lo) / 2.0)
}

/// A matched sample with its device correction attached; the raw RSSI stays
/// untouched, downstream attenuation applies the correction.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedSample {
    pub sample: MatchedSample,
    pub correction_db: f64,
}

impl CorrectedSample {
    pub fn ble_attenuation(&self, tx_power_dbm: f64) -> f64 {
        attenuation(tx_power_dbm, self.sample.ble_rssi as f64, self.correction_db)
    }
}

/// Attach corrections to samples; unknown devices are an error listing them.
pub fn apply_corrections(
    samples: &[MatchedSample],
    table: &CorrectionTable,
) -> Result<Vec<CorrectedSample>> {
    let mut missing: Vec<String> = samples
        .iter()
        .filter(|s| !table.map.contains_key(&s.device))
        .map(|s| s.device.clone())
        .collect();
    missing.sort();
    missing.dedup();
    if !missing.is_empty() {
        return Err(Error::UnknownDevices(missing));
    }
    Ok(samples
        .iter()
        .map(|s| CorrectedSample {
            sample: s.clone(),
            correction_db: table.map[&s.device],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sample(device: &str, d_cm: f64, ble: i32) -> MatchedSample {
        MatchedSample {
            run_id: "r".into(),
            device: device.into(),
            environment: Environment::Office,
            distance_cm: Some(d_cm),
            label: Some(distance_to_class(d_cm).unwrap()),
            t_us: 0,
            ble_rssi: ble,
            wifi24_rssi: -50,
            wifi24_freq: 2437,
            wifi5_rssi: -60,
            wifi5_freq: 5180,
        }
    }

    fn profile(device: &str, entries: &[(f64, f64)]) -> DistanceProfile {
        DistanceProfile {
            device: device.into(),
            environment: Environment::Office,
            entries: entries
                .iter()
                .map(|&(distance_cm, mean_rssi_dbm)| ProfileEntry {
                    distance_cm,
                    mean_rssi_dbm,
                    count: 10,
                })
                .collect(),
        }
    }

    #[test]
    fn profile_means_are_arithmetic() {
        let samples = vec![
            sample("A", 100.0, -60),
            sample("A", 100.0, -62),
            sample("A", 200.0, -70),
        ];
        let profiles = average_rssi_per_distance(&samples, SignalKind::Ble).unwrap();
        assert_eq!(profiles.len(), 1);
        let entries = &profiles[0].entries;
        assert_eq!(entries.len(), 2);
        assert_abs_diff_eq!(entries[0].mean_rssi_dbm, -61.0, epsilon = 1e-12);
        assert_eq!(entries[0].count, 2);
        assert_abs_diff_eq!(entries[1].mean_rssi_dbm, -70.0, epsilon = 1e-12);

        // A single row is its own mean.
        let one = average_rssi_per_distance(&[sample("B", 50.0, -41)], SignalKind::Ble).unwrap();
        assert_eq!(one[0].entries[0].mean_rssi_dbm, -41.0);

        // No ground truth at all is an error.
        let mut unlabeled = sample("A", 100.0, -60);
        unlabeled.distance_cm = None;
        unlabeled.label = None;
        assert!(matches!(
            average_rssi_per_distance(&[unlabeled], SignalKind::Ble),
            Err(Error::NoGroundTruth)
        ));
    }

    #[test]
    fn already_feasible_device_gets_zero() {
        // One very-close entry at attenuation 54 dB for c = 0 (tx 0,
        // rssi -54); no soft terms: the objective is flat, take 0.
        let t = AttenuationThresholds::default();
        let profiles = vec![profile("A", &[(100.0, -54.0)])];
        let table = solve_corrections(&profiles, &TxPowerTable::default(), &t).unwrap();
        assert_eq!(table.correction_for("A"), Some(0.0));
    }

    #[test]
    fn hard_constraint_forces_positive_correction() {
        // Very-close attenuation 60 dB at c = 0; c must rise to ~5.
        let t = AttenuationThresholds::default();
        let profiles = vec![profile("A", &[(100.0, -60.0)])];
        let table = solve_corrections(&profiles, &TxPowerTable::default(), &t).unwrap();
        let c = table.correction_for("A").unwrap();
        assert!((5.0..5.001).contains(&c), "c = {c}");
        assert!(attenuation(0.0, -60.0, c) < t.very_close_db);
    }

    #[test]
    fn soft_terms_pull_toward_the_bands() {
        let t = AttenuationThresholds::default();
        // close at 70 dB wants [55, 63): satisfied for c in [7, 15]; safe at
        // 80 dB stays above 63 until c = 17. Zero penalty on [7, 15], so the
        // solver returns its midpoint.
        let profiles = vec![profile(
            "A",
            &[(100.0, -50.0), (250.0, -70.0), (400.0, -80.0)],
        )];
        let table = solve_corrections(&profiles, &TxPowerTable::default(), &t).unwrap();
        let c = table.correction_for("A").unwrap();
        assert_abs_diff_eq!(c, 11.0, epsilon = 1e-9);
        // Any point of [7, 15] has zero penalty; the midpoint is in-band.
        assert!(attenuation(0.0, -70.0, c) >= t.very_close_db);
        assert!(attenuation(0.0, -70.0, c) < t.close_db);
        assert!(attenuation(0.0, -80.0, c) >= t.close_db);
    }

    #[test]
    fn missing_very_close_entries_error() {
        let t = AttenuationThresholds::default();
        let profiles = vec![profile("A", &[(250.0, -70.0)])];
        assert!(matches!(
            solve_corrections(&profiles, &TxPowerTable::default(), &t),
            Err(Error::MissingVeryClose { .. })
        ));
    }

    /// Brute-force oracle: scan c in 0.01 dB steps and check the solver's
    /// penalty is no worse anywhere on the grid.
    #[test]
    fn breakpoint_solve_matches_grid_search() {
        use rand::{Rng, SeedableRng};
        let t = AttenuationThresholds::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let mut entries = vec![(
                100.0,
                -(rng.random_range(400..800) as f64) / 10.0,
            )];
            for _ in 0..rng.random_range(1..6) {
                let d = [200.0, 250.0, 300.0, 350.0, 400.0, 500.0][rng.random_range(0..6)];
                entries.push((d, -(rng.random_range(400..900) as f64) / 10.0));
            }
            let profiles = vec![profile("X", &entries)];
            let table = solve_corrections(&profiles, &TxPowerTable::default(), &t).unwrap();
            let c_star = table.correction_for("X").unwrap();

            let problem = DeviceProblem {
                terms: entries
                    .iter()
                    .map(|&(d, rssi)| (0.0 - rssi, distance_to_class(d).unwrap()))
                    .collect(),
            };
            let f_star = problem.penalty(c_star, &t);
            let c_min = entries
                .iter()
                .filter(|&&(d, _)| d < 150.0)
                .map(|&(_, rssi)| -rssi - t.very_close_db + STRICT_MARGIN_DB)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut c = c_min;
            while c < c_min + 60.0 {
                assert!(
                    f_star <= problem.penalty(c, &t) + 1e-9,
                    "grid c={c} beats solver c={c_star}"
                );
                c += 0.01;
            }
        }
    }

    #[test]
    fn corrections_shift_against_rssi_shift() {
        let t = AttenuationThresholds::default();
        let entries = [(100.0, -58.0), (250.0, -68.0), (400.0, -79.0)];
        let base = solve_corrections(
            &[profile("A", &entries)],
            &TxPowerTable::default(),
            &t,
        )
        .unwrap();
        for delta in [-7.25, -1.0, 0.5, 3.0, 12.5] {
            let shifted_entries: Vec<(f64, f64)> =
                entries.iter().map(|&(d, r)| (d, r + delta)).collect();
            let shifted = solve_corrections(
                &[profile("A", &shifted_entries)],
                &TxPowerTable::default(),
                &t,
            )
            .unwrap();
            assert_abs_diff_eq!(
                shifted.correction_for("A").unwrap(),
                base.correction_for("A").unwrap() - delta,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn apply_corrections_examples() {
        let samples = vec![sample("A", 100.0, -60), sample("B", 200.0, -70)];
        let mut table = CorrectionTable::default();
        table.map.insert("A".into(), 0.0);
        table.map.insert("B".into(), 0.0);
        let corrected = apply_corrections(&samples, &table).unwrap();
        // Identity table leaves attenuations unchanged.
        assert_eq!(corrected[0].ble_attenuation(0.0), 60.0);
        assert_eq!(corrected[1].ble_attenuation(0.0), 70.0);

        // A positive correction lowers the attenuation by that amount.
        table.map.insert("A".into(), 16.92);
        let corrected = apply_corrections(&samples, &table).unwrap();
        assert_abs_diff_eq!(corrected[0].ble_attenuation(0.0), 60.0 - 16.92, epsilon = 1e-9);

        // Unknown devices are listed.
        table.map.remove("B");
        match apply_corrections(&samples, &table) {
            Err(Error::UnknownDevices(devs)) => assert_eq!(devs, vec!["B".to_string()]),
            other => panic!("expected unknown devices, got {other:?}"),
        }
    }

    #[test]
    fn correction_table_round_trip() {
        let mut table = CorrectionTable::default();
        table.map.insert("OnePlus".into(), -1.98);
        table.map.insert("Pi".into(), 19.66);
        table.map.insert("iPhone".into(), 16.92);
        let mut buf = Vec::new();
        table.write(&mut buf, &["digest abc".into()]).unwrap();
        assert_eq!(CorrectionTable::read(buf.as_slice()).unwrap(), table);
    }

    proptest! {
        /// Hard constraint always satisfied; equivariance under translation.
        #[test]
        fn solver_properties(
            vc_rssi in -90.0..-35.0f64,
            close_rssi in -95.0..-40.0f64,
            safe_rssi in -100.0..-45.0f64,
            delta in -15.0..15.0f64,
        ) {
            let t = AttenuationThresholds::default();
            let entries = [(100.0, vc_rssi), (250.0, close_rssi), (400.0, safe_rssi)];
            let solved = solve_corrections(
                &[profile("D", &entries)],
                &TxPowerTable::default(),
                &t,
            ).unwrap();
            let c = solved.correction_for("D").unwrap();
            prop_assert!(attenuation(0.0, vc_rssi, c) < t.very_close_db);

            let shifted_entries: Vec<(f64, f64)> =
                entries.iter().map(|&(d, r)| (d, r + delta)).collect();
            let shifted = solve_corrections(
                &[profile("D", &shifted_entries)],
                &TxPowerTable::default(),
                &t,
            ).unwrap();
            prop_assert!((shifted.correction_for("D").unwrap() - (c - delta)).abs() < 1e-9);
        }
    }
}
