//! Path-loss models and synthetic capture-log generation.
//!
//! The log-normal-shadowing and two-ray-ground models serve as oracles for
//! the rest of the pipeline: a scenario plan places devices at known
//! distances, and the generator emits BLE and 802.11 logs in the exact
//! ingest formats together with the hidden ground truth (trace assignment,
//! fingerprints, seed addresses), so recovery code can be scored against
//! the generator's own assignment.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ingest::{
    Environment, ProbeCapabilities, RunMeta, Setup, WifiProbe, FingerprintTable,
    fingerprint_probe,
};
use crate::signal::{Address, SignalKind, SignalRecord, RSSI_RANGE_DBM};

/// Speed of light, m/s.
const C_M_PER_S: f64 = 299_792_458.0;

/// Log-normal-shadowing parameters: reference loss at `d0_m`, decay
/// exponent, and shadowing standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LnsmParams {
    pub pl0_db: f64,
    pub d0_m: f64,
    pub exponent: f64,
    pub sigma_db: f64,
}

impl LnsmParams {
    pub fn validate(&self) -> Result<()> {
        if self.d0_m <= 0.0 || self.exponent <= 0.0 || self.sigma_db < 0.0 {
            return Err(Error::InvalidInput(format!(
                "bad LNSM parameters: d0 {} m, exponent {}, sigma {} dB",
                self.d0_m, self.exponent, self.sigma_db
            )));
        }
        Ok(())
    }
}

/// Path loss at distance `d_m` with an externally supplied standard-normal
/// draw for the shadowing term (pass 0.0 for the deterministic curve).
pub fn lnsm_path_loss(d_m: f64, p: &LnsmParams, draw: f64) -> Result<f64> {
    if d_m.is_nan() || d_m <= 0.0 {
        return Err(Error::InvalidDistance(d_m));
    }
    Ok(p.pl0_db + 10.0 * p.exponent * (d_m / p.d0_m).log10() + p.sigma_db * draw)
}

/// Two-ray-ground parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrgParams {
    pub tx_height_m: f64,
    pub rx_height_m: f64,
    pub frequency_mhz: f64,
    pub tx_power_dbm: f64,
}

impl TrgParams {
    pub fn validate(&self) -> Result<()> {
        if self.tx_height_m <= 0.0 || self.rx_height_m <= 0.0 {
            return Err(Error::InvalidInput("antenna heights must be positive".into()));
        }
        SignalKind::for_frequency(self.frequency_mhz.round() as u16)?;
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        C_M_PER_S / (self.frequency_mhz * 1e6)
    }
}

/// Distance where ground reflection starts dominating; free space applies
/// below it.
pub fn trg_crossover_distance(p: &TrgParams) -> f64 {
    4.0 * std::f64::consts::PI * p.tx_height_m * p.rx_height_m / p.wavelength_m()
}

/// Two-ray-ground path loss: free space up to the crossover, then the
/// fourth-power ground-reflection regime. The two branches agree exactly at
/// the crossover.
pub fn trg_path_loss(d_m: f64, p: &TrgParams) -> Result<f64> {
    if d_m.is_nan() || d_m <= 0.0 {
        return Err(Error::InvalidDistance(d_m));
    }
    let crossover = trg_crossover_distance(p);
    if d_m <= crossover {
        Ok(20.0 * (4.0 * std::f64::consts::PI * d_m / p.wavelength_m()).log10())
    } else {
        Ok(40.0 * d_m.log10() - 20.0 * (p.tx_height_m * p.rx_height_m).log10())
    }
}

/// One radio channel of the generator: LNSM curve plus extra interference
/// noise on top of the shadowing term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub lnsm: LnsmParams,
    pub noise_db: f64,
}

/// Per-channel generation parameters. The defaults are desk-scale test
/// fixtures ordered like the measured channels: BLE noisiest and flattest,
/// 2.4 GHz correlated with distance, 5 GHz cleanest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelProfile {
    pub ble: ChannelParams,
    pub wifi24: ChannelParams,
    pub wifi5: ChannelParams,
}

impl Default for ChannelProfile {
    fn default() -> Self {
        let lnsm = |pl0_db, exponent, sigma_db| LnsmParams {
            pl0_db,
            d0_m: 1.0,
            exponent,
            sigma_db,
        };
        ChannelProfile {
            ble: ChannelParams {
                lnsm: lnsm(45.0, 1.7, 6.0),
                noise_db: 2.0,
            },
            wifi24: ChannelParams {
                lnsm: lnsm(40.0, 2.0, 3.0),
                noise_db: 1.0,
            },
            wifi5: ChannelParams {
                lnsm: lnsm(46.0, 2.4, 0.9),
                noise_db: 0.4,
            },
        }
    }
}

impl ChannelProfile {
    pub fn validate(&self) -> Result<()> {
        self.ble.lnsm.validate()?;
        self.wifi24.lnsm.validate()?;
        self.wifi5.lnsm.validate()
    }

    /// Combined per-sample noise (shadowing plus interference), dB.
    pub fn total_noise_db(c: &ChannelParams) -> f64 {
        (c.lnsm.sigma_db.powi(2) + c.noise_db.powi(2)).sqrt()
    }
}

/// One sender inside a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DevicePlan {
    pub device: String,
    pub distance_m: f64,
    pub tx_power_dbm: f64,
    /// Address roll period; `None` disables rolling.
    pub roll_period_s: Option<f64>,
}

/// One measurement run of a scenario plan.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub run_id: String,
    pub environment: Environment,
    pub setup: Setup,
    pub devices: Vec<DevicePlan>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthPlan {
    pub runs: Vec<RunPlan>,
}

pub const PLAN_COLUMNS: [&str; 9] = [
    "run_id",
    "environment",
    "setup",
    "device",
    "distance_cm",
    "x_m",
    "y_m",
    "tx_power_dbm",
    "roll_period_s",
];

impl SynthPlan {
    /// Parse a scenario plan: one row per (run, device); either an explicit
    /// distance or an x/y position relative to the receiver at the origin.
    pub fn read<R: Read>(r: R) -> Result<SynthPlan> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(r);
        let headers = reader
            .headers()
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn {
                    path: "<scenario plan>".into(),
                    column: name.into(),
                })
        };
        let idx: Vec<usize> = PLAN_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;

        let mut plan = SynthPlan::default();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::InvalidInput(e.to_string()))?;
            let field = |i: usize| rec.get(idx[i]).unwrap_or("");
            let run_id = field(0).to_string();
            let environment: Environment = field(1).parse()?;
            let setup: Setup = field(2).parse()?;
            let device = field(3).to_string();
            let distance_m = if field(4).is_empty() {
                let x: f64 = field(5)
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad x `{}`", field(5))))?;
                let y: f64 = field(6)
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad y `{}`", field(6))))?;
                x.hypot(y)
            } else {
                let cm: f64 = field(4)
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad distance `{}`", field(4))))?;
                cm / 100.0
            };
            if distance_m <= 0.0 {
                return Err(Error::InvalidDistance(distance_m * 100.0));
            }
            let tx_power_dbm: f64 = if field(7).is_empty() {
                0.0
            } else {
                field(7)
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad tx power `{}`", field(7))))?
            };
            let roll_period_s = if field(8).is_empty() {
                None
            } else {
                Some(
                    field(8)
                        .parse()
                        .map_err(|_| Error::InvalidInput(format!("bad roll period `{}`", field(8))))?,
                )
            };

            let device_plan = DevicePlan {
                device,
                distance_m,
                tx_power_dbm,
                roll_period_s,
            };
            match plan.runs.iter_mut().find(|r| r.run_id == run_id) {
                Some(run) => {
                    if run.environment != environment || run.setup != setup {
                        return Err(Error::InvalidInput(format!(
                            "run {run_id} has conflicting environment or setup"
                        )));
                    }
                    run.devices.push(device_plan);
                }
                None => plan.runs.push(RunPlan {
                    run_id,
                    environment,
                    setup,
                    devices: vec![device_plan],
                }),
            }
        }
        Ok(plan)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", PLAN_COLUMNS.join(","))?;
        for run in &self.runs {
            for d in &run.devices {
                writeln!(
                    w,
                    "{},{},{},{},{},,,{},{}",
                    run.run_id,
                    run.environment,
                    run.setup,
                    d.device,
                    d.distance_m * 100.0,
                    d.tx_power_dbm,
                    d.roll_period_s.map_or(String::new(), |p| p.to_string()),
                )?;
            }
        }
        Ok(())
    }
}

/// Emission schedule of the senders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenRates {
    pub ble_interval_s: f64,
    pub probe_interval_s: f64,
}

impl Default for GenRates {
    fn default() -> Self {
        GenRates {
            ble_interval_s: 0.25,
            probe_interval_s: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub duration_s: f64,
    pub rates: GenRates,
    pub base_t_us: i64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            duration_s: 900.0,
            rates: GenRates::default(),
            base_t_us: 1_600_000_000_000_000,
            seed: 0,
        }
    }
}

/// Hidden assignment of one address to its device and segment position.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSegment {
    pub run_id: String,
    pub address: Address,
    pub device: String,
    pub segment_index: usize,
}

/// Generator output: logs in the ingest formats plus the ground truth.
#[derive(Debug, Clone, Default)]
pub struct SynthOutput {
    pub ble: Vec<SignalRecord>,
    pub wifi: Vec<WifiProbe>,
    pub metadata: Vec<RunMeta>,
    pub fingerprints: FingerprintTable,
    /// First address of each device per run, for trace labeling.
    pub ble_seeds: Vec<(String, Address, String)>,
    pub truth: Vec<TruthSegment>,
}

const WIFI24_CHANNELS: [u16; 3] = [2412, 2437, 2462];
const WIFI5_CHANNELS: [u16; 4] = [5180, 5220, 5500, 5745];

fn fresh_address(rng: &mut ChaCha8Rng, used: &mut BTreeSet<Address>) -> Address {
    loop {
        let mut bytes = [0u8; 6];
        rng.fill(&mut bytes);
        bytes[0] = (bytes[0] | 0x02) & 0xFE; // locally administered, unicast
        let addr = Address(bytes);
        if used.insert(addr) {
            return addr;
        }
    }
}

fn sample_rssi(rng: &mut ChaCha8Rng, d_m: f64, tx_dbm: f64, ch: &ChannelParams) -> Result<i32> {
    let shadow: f64 = StandardNormal.sample(rng);
    let pl = lnsm_path_loss(d_m, &ch.lnsm, shadow)?;
    let interference: f64 = StandardNormal.sample(rng);
    let rssi = tx_dbm - pl + ch.noise_db * interference;
    let (lo, hi) = RSSI_RANGE_DBM;
    Ok((rssi.round() as i32).clamp(lo, hi))
}

/// Capability set of the `index`-th distinct device: distinct per device so
/// fingerprinting can tell them apart, stable across runs.
fn device_capabilities(index: usize) -> ProbeCapabilities {
    let all_rates = ["1", "2", "5.5", "11", "6", "9", "12", "18", "24", "36"];
    let n = 4 + index % 5;
    ProbeCapabilities {
        supported_rates: all_rates[..n].iter().map(|s| s.to_string()).collect(),
        extended_capabilities: vec![0x2d, (index + 1) as u8],
    }
}

/// Generate logs and ground truth for a whole plan.
pub fn generate(plan: &SynthPlan, profile: &ChannelProfile, cfg: &GenConfig) -> Result<SynthOutput> {
    profile.validate()?;
    if plan.runs.is_empty() {
        return Err(Error::InvalidInput("scenario plan has no runs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used_addresses = BTreeSet::new();
    let mut out = SynthOutput::default();

    // Stable capability assignment by first appearance.
    let mut device_order: Vec<String> = Vec::new();
    for run in &plan.runs {
        for d in &run.devices {
            if !device_order.contains(&d.device) {
                device_order.push(d.device.clone());
            }
        }
    }
    for (i, device) in device_order.iter().enumerate() {
        let caps = device_capabilities(i);
        let probe = WifiProbe {
            record: SignalRecord {
                timestamp_us: 0,
                kind: SignalKind::Wifi24,
                address: Address([2, 0, 0, 0, 0, 0]),
                rssi_dbm: -50,
                frequency_mhz: Some(2437),
                tx_power_dbm: None,
                run_id: String::new(),
            },
            caps: caps.clone(),
        };
        out.fingerprints
            .map
            .insert(fingerprint_probe(&probe)?, device.clone());
    }

    for run in &plan.runs {
        for device_plan in &run.devices {
            let caps_index = device_order
                .iter()
                .position(|d| d == &device_plan.device)
                .unwrap();
            generate_device(
                run,
                device_plan,
                caps_index,
                profile,
                cfg,
                &mut rng,
                &mut used_addresses,
                &mut out,
            )?;
            out.metadata.push(RunMeta {
                run_id: run.run_id.clone(),
                device: device_plan.device.clone(),
                environment: run.environment,
                distance_cm: Some(device_plan.distance_m * 100.0),
                setup: Some(run.setup),
            });
        }
    }

    out.ble.sort_by_key(|r| (r.timestamp_us, r.address));
    out.wifi
        .sort_by_key(|p| (p.record.timestamp_us, p.record.address));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn generate_device(
    run: &RunPlan,
    plan: &DevicePlan,
    caps_index: usize,
    profile: &ChannelProfile,
    cfg: &GenConfig,
    rng: &mut ChaCha8Rng,
    used: &mut BTreeSet<Address>,
    out: &mut SynthOutput,
) -> Result<()> {
    let d = plan.distance_m;
    let tx = plan.tx_power_dbm;
    let caps = device_capabilities(caps_index);

    // BLE advertisements with scheduled address rolls.
    let mut address = fresh_address(rng, used);
    out.ble_seeds
        .push((run.run_id.clone(), address, plan.device.clone()));
    let mut segment_index = 0usize;
    out.truth.push(TruthSegment {
        run_id: run.run_id.clone(),
        address,
        device: plan.device.clone(),
        segment_index,
    });
    let mut next_roll = plan.roll_period_s.unwrap_or(f64::INFINITY);
    let mut t = rng.random_range(0.0..cfg.rates.ble_interval_s);
    while t < cfg.duration_s {
        out.ble.push(SignalRecord {
            timestamp_us: cfg.base_t_us + (t * 1e6).round() as i64,
            kind: SignalKind::Ble,
            address,
            rssi_dbm: sample_rssi(rng, d, tx, &profile.ble)?,
            frequency_mhz: None,
            tx_power_dbm: Some(tx),
            run_id: run.run_id.clone(),
        });
        t += cfg.rates.ble_interval_s * rng.random_range(0.9..1.1);
        if t >= next_roll && t < cfg.duration_s {
            address = fresh_address(rng, used);
            segment_index += 1;
            next_roll += plan.roll_period_s.unwrap_or(f64::INFINITY);
            out.truth.push(TruthSegment {
                run_id: run.run_id.clone(),
                address,
                device: plan.device.clone(),
                segment_index,
            });
        }
    }

    // Probe bursts: one record per band, a fresh MAC per burst.
    let mut t = rng.random_range(0.0..cfg.rates.probe_interval_s);
    while t < cfg.duration_s {
        let mac = fresh_address(rng, used);
        let freq24 = WIFI24_CHANNELS[rng.random_range(0..WIFI24_CHANNELS.len())];
        out.wifi.push(WifiProbe {
            record: SignalRecord {
                timestamp_us: cfg.base_t_us + (t * 1e6).round() as i64,
                kind: SignalKind::Wifi24,
                address: mac,
                rssi_dbm: sample_rssi(rng, d, tx, &profile.wifi24)?,
                frequency_mhz: Some(freq24),
                tx_power_dbm: None,
                run_id: run.run_id.clone(),
            },
            caps: caps.clone(),
        });
        let freq5 = WIFI5_CHANNELS[rng.random_range(0..WIFI5_CHANNELS.len())];
        out.wifi.push(WifiProbe {
            record: SignalRecord {
                timestamp_us: cfg.base_t_us + ((t + 0.05) * 1e6).round() as i64,
                kind: SignalKind::Wifi5,
                address: mac,
                rssi_dbm: sample_rssi(rng, d, tx, &profile.wifi5)?,
                frequency_mhz: Some(freq5),
                tx_power_dbm: None,
                run_id: run.run_id.clone(),
            },
            caps: caps.clone(),
        });
        t += cfg.rates.probe_interval_s * rng.random_range(0.9..1.1);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lnsm(pl0: f64, n: f64, sigma: f64) -> LnsmParams {
        LnsmParams {
            pl0_db: pl0,
            d0_m: 1.0,
            exponent: n,
            sigma_db: sigma,
        }
    }

    #[test]
    fn lnsm_reference_distance_identity() {
        let p = lnsm(40.0, 2.0, 0.0);
        assert_abs_diff_eq!(lnsm_path_loss(1.0, &p, 0.0).unwrap(), 40.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lnsm_path_loss(10.0, &p, 0.0).unwrap(), 60.0, epsilon = 1e-12);
        assert!(lnsm_path_loss(0.0, &p, 0.0).is_err());
        assert!(lnsm_path_loss(-2.0, &p, 0.0).is_err());
    }

    #[test]
    fn lnsm_strictly_increasing_without_shadowing() {
        let p = lnsm(40.0, 1.8, 0.0);
        let mut last = f64::NEG_INFINITY;
        for i in 1..200 {
            let d = i as f64 * 0.1;
            let pl = lnsm_path_loss(d, &p, 0.0).unwrap();
            assert!(pl > last);
            last = pl;
        }
    }

    #[test]
    fn lnsm_shadowing_mean_matches_curve() {
        let p = lnsm(50.0, 2.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                lnsm_path_loss(4.0, &p, z).unwrap()
            })
            .sum::<f64>()
            / n as f64;
        let noiseless = lnsm_path_loss(4.0, &p, 0.0).unwrap();
        let three_se = 3.0 * p.sigma_db / (n as f64).sqrt();
        assert!(
            (mean - noiseless).abs() < three_se,
            "mean {mean} vs {noiseless} (3se {three_se})"
        );
    }

    fn trg() -> TrgParams {
        TrgParams {
            tx_height_m: 1.0,
            rx_height_m: 1.5,
            frequency_mhz: 2442.0,
            tx_power_dbm: 0.0,
        }
    }

    #[test]
    fn trg_far_field_slope_and_symmetry() {
        let p = trg();
        let crossover = trg_crossover_distance(&p);
        let d = crossover * 2.0;
        let doubled = trg_path_loss(2.0 * d, &p).unwrap() - trg_path_loss(d, &p).unwrap();
        assert_abs_diff_eq!(doubled, 40.0 * 2.0f64.log10(), epsilon = 1e-9);

        let swapped = TrgParams {
            tx_height_m: p.rx_height_m,
            rx_height_m: p.tx_height_m,
            ..p
        };
        assert_abs_diff_eq!(
            trg_path_loss(d, &p).unwrap(),
            trg_path_loss(d, &swapped).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn trg_crossover_is_continuous() {
        let p = trg();
        let crossover = trg_crossover_distance(&p);
        let below = trg_path_loss(crossover * (1.0 - 1e-9), &p).unwrap();
        let above = trg_path_loss(crossover * (1.0 + 1e-9), &p).unwrap();
        assert!((below - above).abs() < 0.5, "jump {} dB", (below - above).abs());
        assert!(trg_path_loss(0.0, &p).is_err());
    }

    #[test]
    fn default_profile_orders_noise_as_measured() {
        let p = ChannelProfile::default();
        p.validate().unwrap();
        assert!(
            ChannelProfile::total_noise_db(&p.ble) > ChannelProfile::total_noise_db(&p.wifi5)
        );
    }

    fn single_run_plan(roll_period_s: Option<f64>) -> SynthPlan {
        SynthPlan {
            runs: vec![RunPlan {
                run_id: "synth0".into(),
                environment: Environment::Office,
                setup: Setup::GroundTruth,
                devices: vec![DevicePlan {
                    device: "DevA".into(),
                    distance_m: 2.0,
                    tx_power_dbm: 0.0,
                    roll_period_s,
                }],
            }],
        }
    }

    #[test]
    fn no_roll_means_one_address() {
        let out = generate(
            &single_run_plan(None),
            &ChannelProfile::default(),
            &GenConfig {
                duration_s: 120.0,
                ..GenConfig::default()
            },
        )
        .unwrap();
        let addresses: BTreeSet<Address> = out.ble.iter().map(|r| r.address).collect();
        assert_eq!(addresses.len(), 1);
        assert_eq!(out.truth.len(), 1);
        assert_eq!(out.ble_seeds.len(), 1);
    }

    #[test]
    fn rolls_every_600s_over_1800s_make_three_segments() {
        let out = generate(
            &single_run_plan(Some(600.0)),
            &ChannelProfile::default(),
            &GenConfig {
                duration_s: 1800.0,
                ..GenConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.truth.len(), 3);
        let addresses: BTreeSet<Address> = out.ble.iter().map(|r| r.address).collect();
        assert_eq!(addresses.len(), 3);
        for (i, segment) in out.truth.iter().enumerate() {
            assert_eq!(segment.segment_index, i);
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = GenConfig {
            duration_s: 60.0,
            seed: 123,
            ..GenConfig::default()
        };
        let a = generate(&single_run_plan(Some(20.0)), &ChannelProfile::default(), &cfg).unwrap();
        let b = generate(&single_run_plan(Some(20.0)), &ChannelProfile::default(), &cfg).unwrap();
        assert_eq!(a.ble, b.ble);
        assert_eq!(a.wifi, b.wifi);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn generated_logs_round_trip_through_parsers() {
        use crate::ingest::{parse_ble_log, parse_wifi_log, parse_run_metadata};
        let out = generate(
            &single_run_plan(Some(30.0)),
            &ChannelProfile::default(),
            &GenConfig {
                duration_s: 90.0,
                seed: 7,
                ..GenConfig::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ble_path = dir.path().join("ble.csv");
        let wifi_path = dir.path().join("wifi.csv");
        let meta_path = dir.path().join("runs.csv");
        crate::ingest::write_ble_log(std::fs::File::create(&ble_path).unwrap(), &out.ble, &[])
            .unwrap();
        crate::ingest::write_wifi_log(std::fs::File::create(&wifi_path).unwrap(), &out.wifi, &[])
            .unwrap();
        crate::ingest::write_run_metadata(
            std::fs::File::create(&meta_path).unwrap(),
            &out.metadata,
            &[],
        )
        .unwrap();

        let ble = parse_ble_log(&ble_path).unwrap();
        assert_eq!(ble.len(), out.ble.len());
        // tx power is config-side, not in the log format.
        for (parsed, generated) in ble.iter().zip(&out.ble) {
            assert_eq!(parsed.address, generated.address);
            assert_eq!(parsed.rssi_dbm, generated.rssi_dbm);
            assert_eq!(parsed.timestamp_us, generated.timestamp_us);
        }
        let wifi = parse_wifi_log(&wifi_path).unwrap();
        assert_eq!(wifi, out.wifi.iter().map(|p| {
            let mut p = p.clone();
            p.record.tx_power_dbm = None;
            p
        }).collect::<Vec<_>>());
        assert_eq!(parse_run_metadata(&meta_path).unwrap(), out.metadata);
    }

    #[test]
    fn per_distance_mean_rssi_follows_the_curve() {
        let profile = ChannelProfile::default();
        for d in [1.0, 2.0, 4.0] {
            let plan = SynthPlan {
                runs: vec![RunPlan {
                    run_id: format!("d{d}"),
                    environment: Environment::Office,
                    setup: Setup::GroundTruth,
                    devices: vec![DevicePlan {
                        device: "DevA".into(),
                        distance_m: d,
                        tx_power_dbm: 0.0,
                        roll_period_s: None,
                    }],
                }],
            };
            let out = generate(
                &plan,
                &profile,
                &GenConfig {
                    duration_s: 600.0,
                    seed: 77,
                    ..GenConfig::default()
                },
            )
            .unwrap();
            let n = out.ble.len() as f64;
            let mean: f64 = out.ble.iter().map(|r| r.rssi_dbm as f64).sum::<f64>() / n;
            let expected = -lnsm_path_loss(d, &profile.ble.lnsm, 0.0).unwrap();
            let total_sigma = ChannelProfile::total_noise_db(&profile.ble);
            // Three standard errors plus integer-rounding slack.
            let tolerance = 3.0 * total_sigma / n.sqrt() + 0.3;
            assert!(
                (mean - expected).abs() < tolerance,
                "d={d}: mean {mean} vs {expected} (tol {tolerance})"
            );
        }
    }

    #[test]
    fn plan_round_trip_and_position_form() {
        let plan_text = "run_id,environment,setup,device,distance_cm,x_m,y_m,tx_power_dbm,roll_period_s\n\
            r1,office,ground_truth,DevA,200,,,4,600\n\
            r2,bus,scenario,DevA,,3.0,4.0,0,\n\
            r2,bus,scenario,DevB,150,,,2,300\n";
        let plan = SynthPlan::read(plan_text.as_bytes()).unwrap();
        assert_eq!(plan.runs.len(), 2);
        assert_eq!(plan.runs[0].devices[0].distance_m, 2.0);
        assert_abs_diff_eq!(plan.runs[1].devices[0].distance_m, 5.0, epsilon = 1e-12);
        assert_eq!(plan.runs[1].devices.len(), 2);
        assert_eq!(plan.runs[1].setup, Setup::Scenario);

        let mut buf = Vec::new();
        plan.write(&mut buf).unwrap();
        let reread = SynthPlan::read(buf.as_slice()).unwrap();
        assert_eq!(reread, plan);
    }
}
