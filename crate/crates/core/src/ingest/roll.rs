//! Per-device BLE trace recovery across address rolls.
//!
//! Senders change their advertising address (and payload) periodically. The
//! tracer links the segments of one device back together with a timing rule:
//! when an address stops transmitting, the successor must be an address that
//! was never seen before and that first appears promptly after the roll.
//! Addresses first seen later than the filter window are unrelated. When two
//! devices roll near-simultaneously, the candidate whose segment mean RSSI is
//! nearest to the ending segment's mean is taken.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::signal::{Address, SignalRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollConfig {
    /// Addresses first seen later than this after a roll are not successor
    /// candidates.
    pub filter_window_s: f64,
    /// Prompt-appearance horizon: the true successor shows up almost
    /// immediately, so the search window is capped well below the filter.
    pub successor_horizon_s: f64,
}

impl Default for RollConfig {
    fn default() -> Self {
        RollConfig {
            filter_window_s: 30.0,
            successor_horizon_s: 10.0,
        }
    }
}

/// The records of one address: one contiguous stretch of a device trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSegment {
    pub address: Address,
    pub first_seen_us: i64,
    pub last_seen_us: i64,
    pub records: Vec<SignalRecord>,
}

impl TraceSegment {
    pub fn mean_rssi(&self) -> f64 {
        self.records.iter().map(|r| r.rssi_dbm as f64).sum::<f64>() / self.records.len() as f64
    }
}

/// A recovered device trace: linked segments in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct BleTrace {
    /// Logical device label, assigned after tracing (seed table or run
    /// metadata); `None` until then.
    pub device: Option<String>,
    pub segments: Vec<TraceSegment>,
}

impl BleTrace {
    pub fn records(&self) -> impl Iterator<Item = &SignalRecord> {
        self.segments.iter().flat_map(|s| s.records.iter())
    }

    pub fn record_count(&self) -> usize {
        self.segments.iter().map(|s| s.records.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RollStats {
    /// Segment links made.
    pub links: usize,
    /// Links that needed the mean-RSSI collision rule.
    pub collisions: usize,
    /// Collision ties broken by first appearance; worth auditing.
    pub ambiguous_ties: usize,
}

/// Recover device traces from the BLE records of one measurement run.
///
/// Records are expected sorted by time; unsorted input is sorted first.
pub fn trace_address_rolls(
    records: &[SignalRecord],
    cfg: &RollConfig,
) -> (Vec<BleTrace>, RollStats) {
    let mut stats = RollStats::default();
    if records.is_empty() {
        return (Vec::new(), stats);
    }

    let sorted: Vec<&SignalRecord> = {
        let mut v: Vec<&SignalRecord> = records.iter().collect();
        if !v.windows(2).all(|w| w[0].timestamp_us <= w[1].timestamp_us) {
            v.sort_by_key(|r| r.timestamp_us);
        }
        v
    };

    // One segment per address; addresses are random 48-bit values and do
    // not recur within a run.
    let mut by_address: BTreeMap<Address, Vec<SignalRecord>> = BTreeMap::new();
    for r in &sorted {
        by_address.entry(r.address).or_default().push((*r).clone());
    }
    let mut segments: Vec<TraceSegment> = by_address
        .into_values()
        .map(|records| TraceSegment {
            address: records[0].address,
            first_seen_us: records[0].timestamp_us,
            last_seen_us: records.last().unwrap().timestamp_us,
            records,
        })
        .collect();
    segments.sort_by_key(|s| (s.first_seen_us, s.address));

    let starts: Vec<(i64, usize)> = segments
        .iter()
        .enumerate()
        .map(|(i, s)| (s.first_seen_us, i))
        .collect();

    let mut ends: Vec<usize> = (0..segments.len()).collect();
    ends.sort_by_key(|&i| (segments[i].last_seen_us, segments[i].first_seen_us));

    let window_s = cfg.successor_horizon_s.min(cfg.filter_window_s);
    let window_us = (window_s * 1e6).round() as i64;

    let mut successor: Vec<Option<usize>> = vec![None; segments.len()];
    let mut claimed: Vec<bool> = vec![false; segments.len()];

    for &end_idx in &ends {
        let roll_at = segments[end_idx].last_seen_us;
        // Candidates: unclaimed addresses first seen in (roll, roll+window].
        // First-seen > roll already excludes everything previously on air.
        let lo = starts.partition_point(|&(t, _)| t <= roll_at);
        let hi = starts.partition_point(|&(t, _)| t <= roll_at + window_us);
        let candidates: Vec<usize> = starts[lo..hi]
            .iter()
            .map(|&(_, i)| i)
            .filter(|&i| !claimed[i])
            .collect();

        let chosen = match candidates.len() {
            0 => None,
            1 => Some(candidates[0]),
            _ => {
                stats.collisions += 1;
                let own_mean = segments[end_idx].mean_rssi();
                let mut best = candidates[0];
                let mut best_dist = (segments[best].mean_rssi() - own_mean).abs();
                let mut tied = false;
                for &cand in &candidates[1..] {
                    let dist = (segments[cand].mean_rssi() - own_mean).abs();
                    if dist + 1e-9 < best_dist {
                        best = cand;
                        best_dist = dist;
                        tied = false;
                    } else if (dist - best_dist).abs() <= 1e-9 {
                        // Candidates are in first-seen order, so the earlier
                        // one is already held.
                        tied = true;
                    }
                }
                if tied {
                    stats.ambiguous_ties += 1;
                    log::warn!(
                        "ambiguous roll at t={roll_at}us for {}: equal mean-RSSI distance, \
                         taking the earliest successor",
                        segments[end_idx].address
                    );
                }
                Some(best)
            }
        };

        if let Some(next) = chosen {
            successor[end_idx] = Some(next);
            claimed[next] = true;
            stats.links += 1;
        }
    }

    // Chains starting at unclaimed segments become traces.
    let mut traces = Vec::new();
    for (i, seg_claimed) in claimed.iter().enumerate() {
        if *seg_claimed {
            continue;
        }
        let mut chain = Vec::new();
        let mut cur = Some(i);
        while let Some(idx) = cur {
            chain.push(segments[idx].clone());
            cur = successor[idx];
        }
        traces.push(BleTrace {
            device: None,
            segments: chain,
        });
    }
    traces.sort_by_key(|t| (t.segments[0].first_seen_us, t.segments[0].address));
    (traces, stats)
}

/// Known seed addresses: any address known to belong to a device within a
/// run labels the whole recovered trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleSeedTable {
    pub map: BTreeMap<(String, Address), String>,
}

impl BleSeedTable {
    pub fn read<R: Read>(r: R) -> Result<BleSeedTable> {
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
                    path: "<ble seed table>".into(),
                    column: name.into(),
                })
        };
        let (c_run, c_addr, c_dev) = (find("run_id")?, find("address")?, find("device")?);
        let mut map = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::InvalidInput(e.to_string()))?;
            let address: Address = rec.get(c_addr).unwrap_or("").parse()?;
            map.insert(
                (rec.get(c_run).unwrap_or("").to_string(), address),
                rec.get(c_dev).unwrap_or("").to_string(),
            );
        }
        Ok(BleSeedTable { map })
    }

    pub fn write<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "run_id,address,device")?;
        for ((run, address), device) in &self.map {
            writeln!(w, "{run},{address},{device}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AssignStats {
    pub seeded: usize,
    pub fallback: usize,
    pub unassigned: usize,
}

/// Label traces with device names: via the seed table where possible; in a
/// single-device run the largest unlabeled trace falls back to that device
/// (passers-by stay unlabeled).
pub fn assign_trace_devices(
    traces: &mut [BleTrace],
    run_id: &str,
    seeds: &BleSeedTable,
    fallback_device: Option<&str>,
) -> AssignStats {
    let mut stats = AssignStats::default();
    for trace in traces.iter_mut() {
        let device = trace.segments.iter().find_map(|s| {
            seeds
                .map
                .get(&(run_id.to_string(), s.address))
                .cloned()
        });
        if let Some(device) = device {
            trace.device = Some(device);
            stats.seeded += 1;
        }
    }
    if let Some(device) = fallback_device {
        let largest = traces
            .iter_mut()
            .filter(|t| t.device.is_none())
            .max_by_key(|t| t.record_count());
        if let Some(trace) = largest {
            trace.device = Some(device.to_string());
            stats.fallback = 1;
        }
    }
    stats.unassigned = traces.iter().filter(|t| t.device.is_none()).count();
    stats
}
