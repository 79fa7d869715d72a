//! Probe-request fingerprinting.
//!
//! Senders randomize their MAC per scan, but the capability fields they
//! announce (supported rates, extended capabilities) stay fixed per device
//! model and configuration. The canonical fingerprint is order-independent
//! and deterministic, so equal capability sets always compare and hash equal.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::parse::{encode_hex, WifiProbe};

/// Raw capability fields as they appear in one probe record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProbeCapabilities {
    pub supported_rates: Vec<String>,
    pub extended_capabilities: Vec<u8>,
}

/// Canonicalized capability summary identifying a device model+config.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProbeFingerprint {
    /// Sorted, deduplicated rate tokens.
    pub supported_rates: Vec<String>,
    pub extended_capabilities: Vec<u8>,
    /// Canonical summary of any further information elements, sorted by id.
    pub other_ies: Vec<(u8, Vec<u8>)>,
}

/// Derive the canonical fingerprint of one probe record.
pub fn fingerprint_probe(probe: &WifiProbe) -> Result<ProbeFingerprint> {
    let caps = &probe.caps;
    if caps.supported_rates.is_empty() && caps.extended_capabilities.is_empty() {
        return Err(Error::Unfingerprintable);
    }
    let mut rates: Vec<String> = caps
        .supported_rates
        .iter()
        .map(|r| r.trim().to_string())
        .filter(|r| !r.is_empty())
        .collect();
    rates.sort_by(|a, b| rate_key(a).partial_cmp(&rate_key(b)).unwrap().then(a.cmp(b)));
    rates.dedup();
    Ok(ProbeFingerprint {
        supported_rates: rates,
        extended_capabilities: caps.extended_capabilities.clone(),
        other_ies: Vec::new(),
    })
}

/// Numeric-first ordering so `5.5` sorts between `2` and `11`.
fn rate_key(token: &str) -> (f64, u8) {
    match token.parse::<f64>() {
        Ok(v) => (v, 0),
        Err(_) => (f64::INFINITY, 1),
    }
}

impl fmt::Display for ProbeFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rates:{}|caps:{}",
            self.supported_rates.join(";"),
            encode_hex(&self.extended_capabilities)
        )?;
        if !self.other_ies.is_empty() {
            write!(f, "|ies:")?;
            for (i, (id, body)) in self.other_ies.iter().enumerate() {
                if i > 0 {
                    write!(f, ";")?;
                }
                write!(f, "{id}={}", encode_hex(body))?;
            }
        }
        Ok(())
    }
}

impl FromStr for ProbeFingerprint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("bad fingerprint `{s}`"));
        let mut rates = None;
        let mut caps = None;
        let mut ies = Vec::new();
        for part in s.split('|') {
            if let Some(body) = part.strip_prefix("rates:") {
                rates = Some(
                    body.split(';')
                        .filter(|t| !t.is_empty())
                        .map(str::to_string)
                        .collect::<Vec<_>>(),
                );
            } else if let Some(body) = part.strip_prefix("caps:") {
                caps = Some(decode_hex_str(body).ok_or_else(bad)?);
            } else if let Some(body) = part.strip_prefix("ies:") {
                for ie in body.split(';').filter(|t| !t.is_empty()) {
                    let (id, payload) = ie.split_once('=').ok_or_else(bad)?;
                    ies.push((
                        id.parse().map_err(|_| bad())?,
                        decode_hex_str(payload).ok_or_else(bad)?,
                    ));
                }
            } else {
                return Err(bad());
            }
        }
        Ok(ProbeFingerprint {
            supported_rates: rates.ok_or_else(bad)?,
            extended_capabilities: caps.ok_or_else(bad)?,
            other_ies: ies,
        })
    }
}

fn decode_hex_str(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

/// Explicit fingerprint-to-device mapping, supplied as a config table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FingerprintTable {
    pub map: BTreeMap<ProbeFingerprint, String>,
}

impl FingerprintTable {
    pub fn device_for(&self, fp: &ProbeFingerprint) -> Option<&str> {
        self.map.get(fp).map(String::as_str)
    }

    /// Load from delimited text with columns `fingerprint,device`.
    pub fn read<R: Read>(r: R) -> Result<FingerprintTable> {
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
                    path: "<fingerprint table>".into(),
                    column: name.into(),
                })
        };
        let c_fp = find("fingerprint")?;
        let c_dev = find("device")?;
        let mut map = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::InvalidInput(e.to_string()))?;
            let fp: ProbeFingerprint = rec.get(c_fp).unwrap_or("").parse()?;
            map.insert(fp, rec.get(c_dev).unwrap_or("").to_string());
        }
        Ok(FingerprintTable { map })
    }

    pub fn write<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "fingerprint,device")?;
        for (fp, device) in &self.map {
            writeln!(w, "{fp},{device}")?;
        }
        Ok(())
    }
}

/// Probe records of one run partitioned per device via the fingerprint table.
#[derive(Debug, Default)]
pub struct GroupedWifi {
    pub by_device: BTreeMap<String, Vec<WifiProbe>>,
    /// Probes whose fingerprint is not in the table (passers-by); excluded
    /// from matching but counted for the report.
    pub unknown: Vec<WifiProbe>,
}

/// Partition probes by fingerprint and map them to device labels.
pub fn group_wifi_by_device(probes: &[WifiProbe], table: &FingerprintTable) -> Result<GroupedWifi> {
    let mut grouped = GroupedWifi::default();
    for probe in probes {
        let fp = fingerprint_probe(probe)?;
        match table.device_for(&fp) {
            Some(device) => grouped
                .by_device
                .entry(device.to_string())
                .or_default()
                .push(probe.clone()),
            None => grouped.unknown.push(probe.clone()),
        }
    }
    Ok(grouped)
}
