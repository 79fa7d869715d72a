//! Cross-channel matching: join each BLE record with the nearest probe
//! per 802.11 band, and read/write the matched-sample file.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{Environment, MatchedSample};
use crate::signal::{distance_to_class, DistanceClass, SignalRecord};

pub const MATCHED_COLUMNS: [&str; 11] = [
    "run_id",
    "device",
    "environment",
    "distance_cm",
    "label",
    "t_us",
    "ble_rssi",
    "wifi24_rssi",
    "wifi24_freq",
    "wifi5_rssi",
    "wifi5_freq",
];

/// Run/device context attached to every produced row.
#[derive(Debug, Clone)]
pub struct RowContext {
    pub run_id: String,
    pub device: String,
    pub environment: Environment,
    pub distance_cm: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub matched: usize,
    /// BLE rows with no 2.4 GHz probe inside the window.
    pub dropped_missing_wifi24: usize,
    /// BLE rows with no 5 GHz probe inside the window.
    pub dropped_missing_wifi5: usize,
}

/// Timestamp-nearest probe within the window; probes may be reused across
/// BLE rows since advertisements outnumber probe bursts.
fn nearest_within<'a>(
    probes: &'a [&SignalRecord],
    t_us: i64,
    window_us: i64,
) -> Option<&'a SignalRecord> {
    if probes.is_empty() {
        return None;
    }
    let pos = probes.partition_point(|p| p.timestamp_us < t_us);
    let mut best: Option<&SignalRecord> = None;
    for candidate in [pos.checked_sub(1), Some(pos)].into_iter().flatten() {
        if let Some(p) = probes.get(candidate) {
            let dt = (p.timestamp_us - t_us).abs();
            if dt <= window_us && best.is_none_or(|b| dt < (b.timestamp_us - t_us).abs()) {
                best = Some(p);
            }
        }
    }
    best
}

/// Join one device's BLE records with its probes on both bands.
///
/// Output timestamps are the BLE timestamps; rows missing either band are
/// dropped and counted.
pub fn match_signals(
    ble: &[SignalRecord],
    wifi24: &[SignalRecord],
    wifi5: &[SignalRecord],
    window_s: f64,
    ctx: &RowContext,
) -> Result<(Vec<MatchedSample>, MatchStats)> {
    let label: Option<DistanceClass> = ctx.distance_cm.map(distance_to_class).transpose()?;
    let window_us = (window_s * 1e6).round() as i64;

    fn sorted(records: &[SignalRecord]) -> Vec<&SignalRecord> {
        let mut v: Vec<&SignalRecord> = records.iter().collect();
        v.sort_by_key(|r| r.timestamp_us);
        v
    }
    let w24 = sorted(wifi24);
    let w5 = sorted(wifi5);

    let mut stats = MatchStats::default();
    let mut out = Vec::with_capacity(ble.len());
    for b in ble {
        let near24 = nearest_within(&w24, b.timestamp_us, window_us);
        let near5 = nearest_within(&w5, b.timestamp_us, window_us);
        if near24.is_none() {
            stats.dropped_missing_wifi24 += 1;
        }
        if near5.is_none() {
            stats.dropped_missing_wifi5 += 1;
        }
        let (Some(p24), Some(p5)) = (near24, near5) else {
            continue;
        };
        let sample = MatchedSample {
            run_id: ctx.run_id.clone(),
            device: ctx.device.clone(),
            environment: ctx.environment,
            distance_cm: ctx.distance_cm,
            label,
            t_us: b.timestamp_us,
            ble_rssi: b.rssi_dbm,
            wifi24_rssi: p24.rssi_dbm,
            wifi24_freq: p24.frequency_mhz.expect("2.4 GHz probe has a frequency"),
            wifi5_rssi: p5.rssi_dbm,
            wifi5_freq: p5.frequency_mhz.expect("5 GHz probe has a frequency"),
        };
        stats.matched += 1;
        out.push(sample);
    }
    Ok((out, stats))
}

/// Write matched samples with the exact column set.
pub fn export_matched<W: Write>(
    mut w: W,
    samples: &[MatchedSample],
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{}", MATCHED_COLUMNS.join(","))?;
    for s in samples {
        let dist = s.distance_cm.map_or(String::new(), |d| d.to_string());
        let label = s.label.map_or(String::new(), |l| l.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.run_id,
            s.device,
            s.environment,
            dist,
            label,
            s.t_us,
            s.ble_rssi,
            s.wifi24_rssi,
            s.wifi24_freq,
            s.wifi5_rssi,
            s.wifi5_freq
        )?;
    }
    Ok(())
}

pub fn export_matched_file(
    path: &Path,
    samples: &[MatchedSample],
    comments: &[String],
) -> Result<()> {
    export_matched(fs::File::create(path)?, samples, comments)
}

/// Read a matched-sample file back, validating every row's invariants.
pub fn import_matched(path: &Path) -> Result<Vec<MatchedSample>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {display}: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(&display, 1, e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: display.clone(),
                column: name.to_string(),
            })
    };
    let idx: Vec<usize> = MATCHED_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(&display, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(idx[i]).unwrap_or("");
        let bad = |msg: String| Error::parse(&display, line, msg);

        let environment: Environment = field(2)
            .parse()
            .map_err(|e: Error| bad(e.to_string()))?;
        let distance_cm = if field(3).is_empty() {
            None
        } else {
            Some(
                field(3)
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad distance `{}`", field(3))))?,
            )
        };
        let label = if field(4).is_empty() {
            None
        } else {
            Some(
                field(4)
                    .parse::<DistanceClass>()
                    .map_err(|e| bad(e.to_string()))?,
            )
        };
        let parse_num = |i: usize| -> Result<i64> {
            field(i)
                .parse()
                .map_err(|_| bad(format!("bad number `{}` in {}", field(i), MATCHED_COLUMNS[i])))
        };
        let sample = MatchedSample {
            run_id: field(0).to_string(),
            device: field(1).to_string(),
            environment,
            distance_cm,
            label,
            t_us: parse_num(5)?,
            ble_rssi: parse_num(6)? as i32,
            wifi24_rssi: parse_num(7)? as i32,
            wifi24_freq: parse_num(8)? as u16,
            wifi5_rssi: parse_num(9)? as i32,
            wifi5_freq: parse_num(10)? as u16,
        };
        sample.validate().map_err(|e| bad(e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}
