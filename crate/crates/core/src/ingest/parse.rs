//! Readers and writers for the delimited capture-log formats.
//!
//! All files carry a header row; lines starting with `#` are comments
//! (pipeline outputs put their config digest there).

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{Environment, RunMeta, Setup};
use crate::signal::{Address, SignalKind, SignalRecord};

pub const BLE_LOG_COLUMNS: [&str; 4] = ["timestamp_us", "addr", "rssi_dbm", "run_id"];
pub const WIFI_LOG_COLUMNS: [&str; 7] = [
    "timestamp_us",
    "mac",
    "rssi_dbm",
    "freq_mhz",
    "supported_rates",
    "ext_caps",
    "run_id",
];
pub const METADATA_COLUMNS: [&str; 4] = ["run_id", "device", "environment", "distance_cm"];

/// An 802.11 probe request: the signal record plus the capability fields
/// used for fingerprinting.
#[derive(Debug, Clone, PartialEq)]
pub struct WifiProbe {
    pub record: SignalRecord,
    pub caps: super::ProbeCapabilities,
}

struct Table {
    path: String,
    headers: csv::StringRecord,
    records: Vec<csv::StringRecord>,
    lines: Vec<u64>,
}

impl Table {
    fn open(path: &Path) -> Result<Table> {
        let display = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => Error::InvalidInput(format!("cannot open {display}: {e}")),
                _ => Error::parse(&display, 0, e.to_string()),
            })?;
        let headers = reader
            .headers()
            .map_err(|e| Error::parse(&display, 1, e.to_string()))?
            .clone();
        let mut records = Vec::new();
        let mut lines = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::parse(&display, 0, e.to_string()))?;
            lines.push(rec.position().map_or(0, |p| p.line()));
            records.push(rec);
        }
        Ok(Table {
            path: display,
            headers,
            records,
            lines,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: self.path.clone(),
                column: name.to_string(),
            })
    }

    fn field(&self, row: usize, col: usize) -> &str {
        self.records[row].get(col).unwrap_or("")
    }

    fn bad(&self, row: usize, msg: impl Into<String>) -> Error {
        Error::parse(&self.path, self.lines[row], msg)
    }
}

/// Parse a BLE advertisement log. Out-of-order timestamps are tolerated but
/// flagged with a warning; the stage that consumes them sorts first.
pub fn parse_ble_log(path: &Path) -> Result<Vec<SignalRecord>> {
    let table = Table::open(path)?;
    let c_ts = table.column("timestamp_us")?;
    let c_addr = table.column("addr")?;
    let c_rssi = table.column("rssi_dbm")?;
    let c_run = table.column("run_id")?;

    let mut out = Vec::with_capacity(table.records.len());
    let mut disorder = 0usize;
    let mut last_ts = i64::MIN;
    for row in 0..table.records.len() {
        let timestamp_us: i64 = table
            .field(row, c_ts)
            .parse()
            .map_err(|_| table.bad(row, format!("bad timestamp `{}`", table.field(row, c_ts))))?;
        let address: Address = table
            .field(row, c_addr)
            .parse()
            .map_err(|e| table.bad(row, format!("{e}")))?;
        let rssi_dbm: i32 = table
            .field(row, c_rssi)
            .parse()
            .map_err(|_| table.bad(row, format!("bad rssi `{}`", table.field(row, c_rssi))))?;
        let record = SignalRecord {
            timestamp_us,
            kind: SignalKind::Ble,
            address,
            rssi_dbm,
            frequency_mhz: None,
            tx_power_dbm: None,
            run_id: table.field(row, c_run).to_string(),
        };
        record.validate().map_err(|e| table.bad(row, e.to_string()))?;
        if timestamp_us < last_ts {
            disorder += 1;
        }
        last_ts = timestamp_us;
        out.push(record);
    }
    if disorder > 0 {
        log::warn!("{}: {} records out of time order", path.display(), disorder);
    }
    Ok(out)
}

/// Parse an 802.11 probe-request log; the band is derived from the exact
/// frequency, and the capability fields are kept per record.
pub fn parse_wifi_log(path: &Path) -> Result<Vec<WifiProbe>> {
    let table = Table::open(path)?;
    let c_ts = table.column("timestamp_us")?;
    let c_mac = table.column("mac")?;
    let c_rssi = table.column("rssi_dbm")?;
    let c_freq = table.column("freq_mhz")?;
    let c_rates = table.column("supported_rates")?;
    let c_caps = table.column("ext_caps")?;
    let c_run = table.column("run_id")?;

    let mut out = Vec::with_capacity(table.records.len());
    for row in 0..table.records.len() {
        let timestamp_us: i64 = table
            .field(row, c_ts)
            .parse()
            .map_err(|_| table.bad(row, format!("bad timestamp `{}`", table.field(row, c_ts))))?;
        let address: Address = table
            .field(row, c_mac)
            .parse()
            .map_err(|e| table.bad(row, format!("{e}")))?;
        let rssi_dbm: i32 = table
            .field(row, c_rssi)
            .parse()
            .map_err(|_| table.bad(row, format!("bad rssi `{}`", table.field(row, c_rssi))))?;
        let freq: u16 = table
            .field(row, c_freq)
            .parse()
            .map_err(|_| table.bad(row, format!("bad frequency `{}`", table.field(row, c_freq))))?;
        let kind = SignalKind::for_frequency(freq).map_err(|e| table.bad(row, e.to_string()))?;

        let rates: Vec<String> = table
            .field(row, c_rates)
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let caps_hex = table.field(row, c_caps);
        let ext_caps = decode_hex(caps_hex).map_err(|e| table.bad(row, e))?;

        let record = SignalRecord {
            timestamp_us,
            kind,
            address,
            rssi_dbm,
            frequency_mhz: Some(freq),
            tx_power_dbm: None,
            run_id: table.field(row, c_run).to_string(),
        };
        record.validate().map_err(|e| table.bad(row, e.to_string()))?;
        out.push(WifiProbe {
            record,
            caps: super::ProbeCapabilities {
                supported_rates: rates,
                extended_capabilities: ext_caps,
            },
        });
    }
    Ok(out)
}

fn decode_hex(s: &str) -> std::result::Result<Vec<u8>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    if !s.len().is_multiple_of(2) {
        return Err(format!("odd-length hex `{s}`"));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| format!("bad hex `{s}`")))
        .collect()
}

pub(crate) fn encode_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse the run metadata table. Rows of one run must agree on environment
/// and setup; the optional trailing `setup` column marks the collection mode.
pub fn parse_run_metadata(path: &Path) -> Result<Vec<RunMeta>> {
    let table = Table::open(path)?;
    let c_run = table.column("run_id")?;
    let c_dev = table.column("device")?;
    let c_env = table.column("environment")?;
    let c_dist = table.column("distance_cm")?;
    let c_setup = table.headers.iter().position(|h| h == "setup");

    let mut out: Vec<RunMeta> = Vec::with_capacity(table.records.len());
    for row in 0..table.records.len() {
        let environment: Environment = table
            .field(row, c_env)
            .parse()
            .map_err(|e| table.bad(row, format!("{e}")))?;
        let dist_raw = table.field(row, c_dist);
        let distance_cm = if dist_raw.is_empty() {
            None
        } else {
            let d: f64 = dist_raw
                .parse()
                .map_err(|_| table.bad(row, format!("bad distance `{dist_raw}`")))?;
            if d <= 0.0 {
                return Err(table.bad(row, format!("distance {d} cm must be > 0")));
            }
            Some(d)
        };
        let setup = match c_setup {
            None => None,
            Some(col) => {
                let raw = table.field(row, col);
                if raw.is_empty() {
                    None
                } else {
                    Some(raw.parse::<Setup>().map_err(|e| table.bad(row, format!("{e}")))?)
                }
            }
        };
        let meta = RunMeta {
            run_id: table.field(row, c_run).to_string(),
            device: table.field(row, c_dev).to_string(),
            environment,
            distance_cm,
            setup,
        };
        if let Some(prev) = out.iter().find(|m| m.run_id == meta.run_id) {
            if prev.environment != meta.environment || prev.setup != meta.setup {
                return Err(table.bad(
                    row,
                    format!("run {} has conflicting environment or setup", meta.run_id),
                ));
            }
        }
        out.push(meta);
    }
    Ok(out)
}

fn comment_block<W: Write>(w: &mut W, comments: &[String]) -> io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    Ok(())
}

pub fn write_ble_log<W: Write>(
    mut w: W,
    records: &[SignalRecord],
    comments: &[String],
) -> Result<()> {
    comment_block(&mut w, comments)?;
    writeln!(w, "{}", BLE_LOG_COLUMNS.join(","))?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.timestamp_us, r.address, r.rssi_dbm, r.run_id)?;
    }
    Ok(())
}

pub fn write_wifi_log<W: Write>(mut w: W, probes: &[WifiProbe], comments: &[String]) -> Result<()> {
    comment_block(&mut w, comments)?;
    writeln!(w, "{}", WIFI_LOG_COLUMNS.join(","))?;
    for p in probes {
        let r = &p.record;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.timestamp_us,
            r.address,
            r.rssi_dbm,
            r.frequency_mhz.unwrap_or(0),
            p.caps.supported_rates.join(";"),
            encode_hex(&p.caps.extended_capabilities),
            r.run_id
        )?;
    }
    Ok(())
}

pub fn write_run_metadata<W: Write>(mut w: W, rows: &[RunMeta], comments: &[String]) -> Result<()> {
    comment_block(&mut w, comments)?;
    writeln!(w, "{},setup", METADATA_COLUMNS.join(","))?;
    for m in rows {
        let dist = m.distance_cm.map_or(String::new(), |d| d.to_string());
        let setup = m.setup.map_or(String::new(), |s| s.to_string());
        writeln!(
            w,
            "{},{},{},{},{}",
            m.run_id, m.device, m.environment, dist, setup
        )?;
    }
    Ok(())
}

/// Convenience wrappers writing to a path.
pub fn write_ble_log_file(path: &Path, records: &[SignalRecord], comments: &[String]) -> Result<()> {
    write_ble_log(fs::File::create(path)?, records, comments)
}

pub fn write_wifi_log_file(path: &Path, probes: &[WifiProbe], comments: &[String]) -> Result<()> {
    write_wifi_log(fs::File::create(path)?, probes, comments)
}

pub fn write_run_metadata_file(path: &Path, rows: &[RunMeta], comments: &[String]) -> Result<()> {
    write_run_metadata(fs::File::create(path)?, rows, comments)
}
