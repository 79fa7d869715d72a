//! Core domain types and the threshold-based exposure pipeline.
//!
//! Covers the receive-side model shared by every stage: signal kinds and
//! their frequency bands, the three distance classes, raw broadcast records,
//! attenuation computation, scan-window aggregation, and exposure scoring.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ground-truth boundary between very close and close, in cm.
pub const VERY_CLOSE_MAX_CM: f64 = 150.0;
/// Ground-truth boundary between close and safe, in cm (inclusive on the close side).
pub const CLOSE_MAX_CM: f64 = 300.0;

/// Default attenuation threshold for the very-close class (German CWA), dB.
pub const CWA_VERY_CLOSE_DB: f64 = 55.0;
/// Default attenuation threshold for the close class (German CWA), dB.
pub const CWA_CLOSE_DB: f64 = 63.0;

/// Exposure-score level at which a warning is raised, in minutes-equivalent.
pub const WARN_THRESHOLD_MINUTES: f64 = 15.0;

/// Valid RSSI range for a received broadcast, dBm.
pub const RSSI_RANGE_DBM: (i32, i32) = (-120, 20);

/// The three broadcast channels the pipeline consumes.
///
/// BLE advertisements carry no frequency: the receiver cannot tell which of
/// the three advertising channels a packet arrived on. 802.11 probe requests
/// do carry their exact frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SignalKind {
    Ble,
    Wifi24,
    Wifi5,
}

impl SignalKind {
    /// Frequency band for the 802.11 kinds, MHz. BLE has none.
    pub fn band_mhz(self) -> Option<(u16, u16)> {
        match self {
            SignalKind::Ble => None,
            SignalKind::Wifi24 => Some((2400, 2500)),
            SignalKind::Wifi5 => Some((5150, 5900)),
        }
    }

    /// Classify a probe frequency into its band.
    pub fn for_frequency(freq_mhz: u16) -> Result<SignalKind> {
        if (2400..=2500).contains(&freq_mhz) {
            Ok(SignalKind::Wifi24)
        } else if (5150..=5900).contains(&freq_mhz) {
            Ok(SignalKind::Wifi5)
        } else {
            Err(Error::InvalidInput(format!(
                "frequency {freq_mhz} MHz outside known bands"
            )))
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalKind::Ble => "ble",
            SignalKind::Wifi24 => "wifi24",
            SignalKind::Wifi5 => "wifi5",
        }
    }
}

/// Proximity class, ordered from nearest to farthest.
///
/// Ground truth: d < 150 cm is very close, 150..=300 cm is close,
/// everything beyond is safe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistanceClass {
    VeryClose,
    Close,
    Safe,
}

impl DistanceClass {
    pub const ALL: [DistanceClass; 3] = [
        DistanceClass::VeryClose,
        DistanceClass::Close,
        DistanceClass::Safe,
    ];

    pub fn index(self) -> usize {
        match self {
            DistanceClass::VeryClose => 0,
            DistanceClass::Close => 1,
            DistanceClass::Safe => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<DistanceClass> {
        DistanceClass::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DistanceClass::VeryClose => "very_close",
            DistanceClass::Close => "close",
            DistanceClass::Safe => "safe",
        }
    }
}

impl fmt::Display for DistanceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "very_close" => Ok(DistanceClass::VeryClose),
            "close" => Ok(DistanceClass::Close),
            "safe" => Ok(DistanceClass::Safe),
            other => Err(Error::InvalidInput(format!(
                "unknown distance class `{other}`"
            ))),
        }
    }
}

/// Map a ground-truth distance in cm to its class.
pub fn distance_to_class(distance_cm: f64) -> Result<DistanceClass> {
    if !distance_cm.is_finite() || distance_cm <= 0.0 {
        return Err(Error::InvalidDistance(distance_cm));
    }
    if distance_cm < VERY_CLOSE_MAX_CM {
        Ok(DistanceClass::VeryClose)
    } else if distance_cm <= CLOSE_MAX_CM {
        Ok(DistanceClass::Close)
    } else {
        Ok(DistanceClass::Safe)
    }
}

/// 48-bit link-layer identifier: a randomized 802.11 MAC or BLE AdvA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(pub [u8; 6]);

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for Address {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bytes = [0u8; 6];
        let mut parts = s.split(':');
        for slot in bytes.iter_mut() {
            let part = parts
                .next()
                .ok_or_else(|| Error::InvalidInput(format!("bad address `{s}`")))?;
            *slot = u8::from_str_radix(part, 16)
                .map_err(|_| Error::InvalidInput(format!("bad address `{s}`")))?;
        }
        if parts.next().is_some() {
            return Err(Error::InvalidInput(format!("bad address `{s}`")));
        }
        Ok(Address(bytes))
    }
}

/// One received broadcast: a BLE advertisement or an 802.11 probe request.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    /// Microseconds since epoch.
    pub timestamp_us: i64,
    pub kind: SignalKind,
    pub address: Address,
    /// Received signal strength, dBm.
    pub rssi_dbm: i32,
    /// Present iff kind is an 802.11 band.
    pub frequency_mhz: Option<u16>,
    /// Advertised transmit power, when the sender metadata carries it.
    pub tx_power_dbm: Option<f64>,
    pub run_id: String,
}

impl SignalRecord {
    /// Check the record invariants: RSSI range and frequency/kind consistency.
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = RSSI_RANGE_DBM;
        if self.rssi_dbm < lo || self.rssi_dbm > hi {
            return Err(Error::InvalidInput(format!(
                "rssi {} dBm out of range [{lo}, {hi}]",
                self.rssi_dbm
            )));
        }
        match (self.kind, self.frequency_mhz) {
            (SignalKind::Ble, None) => Ok(()),
            (SignalKind::Ble, Some(_)) => Err(Error::InvalidInput(
                "BLE record must not carry a frequency".into(),
            )),
            (kind, Some(freq)) => {
                let (lo, hi) = kind.band_mhz().expect("802.11 kind has a band");
                if (lo..=hi).contains(&freq) {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!(
                        "frequency {freq} MHz outside the {} band [{lo}, {hi}]",
                        kind.name()
                    )))
                }
            }
            (_, None) => Err(Error::InvalidInput(
                "802.11 record requires a frequency".into(),
            )),
        }
    }
}

/// Attenuation thresholds separating the three classes, dB.
///
/// Country implementations differ; the defaults are the German CWA values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttenuationThresholds {
    pub very_close_db: f64,
    pub close_db: f64,
}

impl Default for AttenuationThresholds {
    fn default() -> Self {
        AttenuationThresholds {
            very_close_db: CWA_VERY_CLOSE_DB,
            close_db: CWA_CLOSE_DB,
        }
    }
}

impl AttenuationThresholds {
    pub fn new(very_close_db: f64, close_db: f64) -> Result<Self> {
        if very_close_db.is_nan() || close_db.is_nan() || very_close_db >= close_db {
            return Err(Error::InvalidThresholds {
                very_close: very_close_db,
                close: close_db,
            });
        }
        Ok(AttenuationThresholds {
            very_close_db,
            close_db,
        })
    }
}

/// Attenuation in dB: transmit power minus corrected received power.
pub fn attenuation(tx_power_dbm: f64, rssi_measured_dbm: f64, rssi_correction_db: f64) -> f64 {
    tx_power_dbm - (rssi_measured_dbm + rssi_correction_db)
}

/// Classify an attenuation value against the thresholds.
///
/// Strictly below `very_close_db` is very close, strictly below `close_db`
/// is close, everything at or above `close_db` is safe.
pub fn classify_attenuation(attenuation_db: f64, t: &AttenuationThresholds) -> DistanceClass {
    if attenuation_db < t.very_close_db {
        DistanceClass::VeryClose
    } else if attenuation_db < t.close_db {
        DistanceClass::Close
    } else {
        DistanceClass::Safe
    }
}

/// Minimum and average attenuation over one scan window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanWindowStats {
    pub min_attenuation_db: f64,
    pub avg_attenuation_db: f64,
    pub duration_s: f64,
}

/// Aggregate the attenuation values observed in one scan window.
pub fn scan_window_stats(attenuations_db: &[f64], duration_s: f64) -> Result<ScanWindowStats> {
    if attenuations_db.is_empty() {
        return Err(Error::EmptyScanWindow);
    }
    let min = attenuations_db.iter().copied().fold(f64::INFINITY, f64::min);
    let avg = attenuations_db.iter().sum::<f64>() / attenuations_db.len() as f64;
    Ok(ScanWindowStats {
        min_attenuation_db: min,
        avg_attenuation_db: avg,
        duration_s,
    })
}

/// Minutes of exposure accumulated per proximity class.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExposureDurations {
    pub very_close_min: f64,
    pub close_min: f64,
}

/// Exposure score in minutes-equivalent: very-close minutes count in full,
/// close minutes at half weight.
pub fn exposure_score(d: &ExposureDurations) -> f64 {
    d.very_close_min + 0.5 * d.close_min
}

/// Whether a score triggers a warning at the default 15-minute threshold.
pub fn should_warn(score: f64) -> bool {
    should_warn_at(score, WARN_THRESHOLD_MINUTES)
}

/// Whether a score triggers a warning at a configured threshold.
pub fn should_warn_at(score: f64, threshold_minutes: f64) -> bool {
    score >= threshold_minutes
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn attenuation_direct_subtraction() {
        assert_eq!(attenuation(0.0, -55.0, 0.0), 55.0);
        assert_eq!(attenuation(8.0, -60.0, 5.0), 63.0);
        assert_abs_diff_eq!(attenuation(0.0, -70.0, 16.92), 53.08, epsilon = 1e-9);
    }

    #[test]
    fn classify_boundaries_are_strict() {
        let t = AttenuationThresholds::default();
        assert_eq!(classify_attenuation(54.0, &t), DistanceClass::VeryClose);
        assert_eq!(classify_attenuation(55.0, &t), DistanceClass::Close);
        assert_eq!(classify_attenuation(62.999, &t), DistanceClass::Close);
        assert_eq!(classify_attenuation(63.0, &t), DistanceClass::Safe);
        assert_eq!(classify_attenuation(70.0, &t), DistanceClass::Safe);
    }

    #[test]
    fn thresholds_must_be_ordered() {
        assert!(AttenuationThresholds::new(55.0, 63.0).is_ok());
        assert!(AttenuationThresholds::new(63.0, 55.0).is_err());
        assert!(AttenuationThresholds::new(55.0, 55.0).is_err());
    }

    #[test]
    fn scan_window_min_and_mean() {
        let s = scan_window_stats(&[60.0, 58.0, 64.0], 4.0).unwrap();
        assert_eq!(s.min_attenuation_db, 58.0);
        assert_abs_diff_eq!(s.avg_attenuation_db, 182.0 / 3.0, epsilon = 1e-12);
        assert_eq!(s.duration_s, 4.0);

        let single = scan_window_stats(&[55.0], 1.0).unwrap();
        assert_eq!(single.min_attenuation_db, 55.0);
        assert_eq!(single.avg_attenuation_db, 55.0);

        let constant = scan_window_stats(&[70.0, 70.0, 70.0], 2.0).unwrap();
        assert_eq!(constant.min_attenuation_db, 70.0);
        assert_eq!(constant.avg_attenuation_db, 70.0);

        assert!(matches!(
            scan_window_stats(&[], 1.0),
            Err(Error::EmptyScanWindow)
        ));
    }

    #[test]
    fn exposure_score_weighting() {
        assert_eq!(
            exposure_score(&ExposureDurations {
                very_close_min: 15.0,
                close_min: 0.0
            }),
            15.0
        );
        assert_eq!(exposure_score(&ExposureDurations::default()), 0.0);
        assert_eq!(
            exposure_score(&ExposureDurations {
                very_close_min: 10.0,
                close_min: 8.0
            }),
            14.0
        );
    }

    #[test]
    fn warn_threshold_is_inclusive() {
        assert!(should_warn(15.0));
        assert!(!should_warn(14.99));
        assert!(!should_warn(0.0));
        assert!(should_warn_at(10.0, 10.0));
    }

    #[test]
    fn distance_class_boundaries() {
        assert_eq!(distance_to_class(149.0).unwrap(), DistanceClass::VeryClose);
        assert_eq!(distance_to_class(150.0).unwrap(), DistanceClass::Close);
        assert_eq!(distance_to_class(300.0).unwrap(), DistanceClass::Close);
        assert_eq!(distance_to_class(301.0).unwrap(), DistanceClass::Safe);
        assert!(distance_to_class(0.0).is_err());
        assert!(distance_to_class(-5.0).is_err());
    }

    #[test]
    fn frequency_band_rules() {
        assert_eq!(SignalKind::for_frequency(2437).unwrap(), SignalKind::Wifi24);
        assert_eq!(SignalKind::for_frequency(5180).unwrap(), SignalKind::Wifi5);
        assert!(SignalKind::for_frequency(3000).is_err());
        assert!(SignalKind::for_frequency(2350).is_err());
    }

    #[test]
    fn record_validation() {
        let mut rec = SignalRecord {
            timestamp_us: 0,
            kind: SignalKind::Ble,
            address: Address([0xAA, 0xBB, 0xCC, 0xDD, 0xEE, 0xFF]),
            rssi_dbm: -67,
            frequency_mhz: None,
            tx_power_dbm: None,
            run_id: "run1".into(),
        };
        assert!(rec.validate().is_ok());

        rec.rssi_dbm = 30;
        assert!(rec.validate().is_err());
        rec.rssi_dbm = -67;

        rec.frequency_mhz = Some(2437);
        assert!(rec.validate().is_err());

        rec.kind = SignalKind::Wifi24;
        assert!(rec.validate().is_ok());
        rec.frequency_mhz = Some(5180);
        assert!(rec.validate().is_err());
    }

    #[test]
    fn address_round_trip() {
        let a: Address = "AA:BB:CC:DD:EE:0F".parse().unwrap();
        assert_eq!(a.to_string(), "AA:BB:CC:DD:EE:0F");
        assert_eq!("aa:bb:cc:dd:ee:0f".parse::<Address>().unwrap(), a);
        assert!("AA:BB:CC".parse::<Address>().is_err());
        assert!("zz:BB:CC:DD:EE:0F".parse::<Address>().is_err());
    }

    proptest! {
        #[test]
        fn classification_is_monotone(a1 in 0.0..120.0f64, a2 in 0.0..120.0f64) {
            let t = AttenuationThresholds::default();
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            prop_assert!(classify_attenuation(lo, &t) <= classify_attenuation(hi, &t));
        }

        #[test]
        fn attenuation_is_antitone_in_rssi_and_correction(
            tx in -20.0..20.0f64,
            rssi in -120.0..0.0f64,
            corr in -30.0..30.0f64,
            bump in 0.0..10.0f64,
        ) {
            let base = attenuation(tx, rssi, corr);
            prop_assert!(attenuation(tx, rssi + bump, corr) <= base);
            prop_assert!(attenuation(tx, rssi, corr + bump) <= base);
            prop_assert!((attenuation(tx + bump, rssi, corr) - (base + bump)).abs() < 1e-9);
        }

        #[test]
        fn exposure_score_is_linear(b1 in 0.0..100.0f64, b2 in 0.0..100.0f64, x in 0.0..50.0f64) {
            let base = exposure_score(&ExposureDurations { very_close_min: b1, close_min: b2 });
            let plus_b1 = exposure_score(&ExposureDurations { very_close_min: b1 + x, close_min: b2 });
            let plus_b2 = exposure_score(&ExposureDurations { very_close_min: b1, close_min: b2 + 2.0 * x });
            prop_assert!((plus_b1 - (base + x)).abs() < 1e-9);
            prop_assert!((plus_b2 - (base + x)).abs() < 1e-9);
        }

        // Adding delta to the correction equals subtracting delta from the
        // attenuation before classification. Quarter-dB inputs keep the two
        // float expressions bit-identical so class equality is exact.
        #[test]
        fn correction_shift_equals_threshold_shift(
            tx4 in -80i32..80,
            rssi4 in -480i32..0,
            corr4 in -120i32..120,
            delta4 in -120i32..120,
        ) {
            let (tx, rssi, corr, delta) =
                (tx4 as f64 / 4.0, rssi4 as f64 / 4.0, corr4 as f64 / 4.0, delta4 as f64 / 4.0);
            let t = AttenuationThresholds::default();
            let shifted_corr = classify_attenuation(attenuation(tx, rssi, corr + delta), &t);
            let shifted_att = classify_attenuation(attenuation(tx, rssi, corr) - delta, &t);
            prop_assert_eq!(shifted_corr, shifted_att);
        }

        #[test]
        fn scan_window_min_le_avg(values in proptest::collection::vec(-50.0..150.0f64, 1..40)) {
            let s = scan_window_stats(&values, 1.0).unwrap();
            prop_assert!(s.min_attenuation_db <= s.avg_attenuation_db + 1e-12);
        }
    }
}
