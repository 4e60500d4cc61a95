//! Device-event traces and availability statistics.
//!
//! A device is available while both its WiFi and charging states are on; the
//! event stream is discretized into a binary availability vector, one bit per
//! step. The pairwise Pearson correlation of these vectors is the static
//! co-behavior signal consumed by the correlation and failure-injection
//! subsystems.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, RecordIssue, Result};
use crate::par;
use crate::rng::{stream_rng, Stream};
use rand::Rng;

/// Device event kinds.
///
/// The variant order fixes the tie-break for events sharing a timestamp:
/// "off" transitions apply before "on" transitions, so a device that
/// reconnects within the same second counts as connected from that second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    WifiOff,
    ChargeOff,
    WifiOn,
    ChargeOn,
}

impl EventKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wifi_on" => Some(EventKind::WifiOn),
            "wifi_off" => Some(EventKind::WifiOff),
            "charge_on" => Some(EventKind::ChargeOn),
            "charge_off" => Some(EventKind::ChargeOff),
            _ => None,
        }
    }
}

/// One timestamped device event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceEvent {
    pub device_id: String,
    /// Seconds since the trace epoch.
    pub timestamp: u64,
    pub kind: EventKind,
}

/// Binary availability vector for one device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityTrace {
    pub device_id: String,
    bits: Vec<bool>,
    first_seen: Option<usize>,
    last_seen: Option<usize>,
}

impl AvailabilityTrace {
    /// Builds a trace from raw bits, deriving the live window.
    pub fn from_bits(device_id: impl Into<String>, bits: Vec<bool>) -> Self {
        assert!(!bits.is_empty(), "trace must have at least one step");
        let first_seen = bits.iter().position(|&b| b);
        let last_seen = bits.iter().rposition(|&b| b);
        Self {
            device_id: device_id.into(),
            bits,
            first_seen,
            last_seen,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// True when the device is available at `step` (out of range counts as
    /// unavailable).
    pub fn is_available(&self, step: usize) -> bool {
        self.bits.get(step).copied().unwrap_or(false)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// First and last step at which the device was ever available.
    pub fn live_window(&self) -> Option<(usize, usize)> {
        self.first_seen.zip(self.last_seen)
    }

    /// Bits rendered as a `0`/`1` string, the export wire format.
    pub fn bits_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bits_string(device_id: impl Into<String>, s: &str) -> Option<Self> {
        if s.is_empty() {
            return None;
        }
        let bits: Option<Vec<bool>> = s
            .chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect();
        Some(Self::from_bits(device_id, bits?))
    }
}

impl Serialize for AvailabilityTrace {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("AvailabilityTrace", 2)?;
        s.serialize_field("device_id", &self.device_id)?;
        s.serialize_field("bits", &self.bits_string())?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for AvailabilityTrace {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            device_id: String,
            bits: String,
        }
        let w = Wire::deserialize(deserializer)?;
        AvailabilityTrace::from_bits_string(w.device_id, &w.bits)
            .ok_or_else(|| serde::de::Error::custom("bits must be a non-empty 0/1 string"))
    }
}

/// Result of ingesting an event stream.
#[derive(Debug, Clone)]
pub struct IngestOutcome {
    /// One trace per device that contributed at least one event, ordered by
    /// device id.
    pub traces: Vec<AvailabilityTrace>,
    /// Number of steps in the common horizon.
    pub horizon_steps: usize,
}

/// Discretizes device events into availability traces.
///
/// A device counts as available at a step only if both WiFi and charging are
/// on for the entire step. All traces share a horizon covering the latest
/// event. Event order in the input does not matter; streams are sorted by
/// `(timestamp, kind)` per device.
pub fn ingest_events(events: &[DeviceEvent], step_seconds: u64) -> Result<IngestOutcome> {
    assert!(step_seconds > 0, "step_seconds must be positive");
    if events.is_empty() {
        return Err(Error::NotEnoughTraces { needed: 1, got: 0 });
    }
    let horizon_sec = events.iter().map(|e| e.timestamp).max().unwrap() + 1;
    let horizon_steps = (horizon_sec + step_seconds - 1).div_ceil(step_seconds) as usize;
    let horizon_end = horizon_steps as u64 * step_seconds;

    let mut by_device: BTreeMap<&str, Vec<&DeviceEvent>> = BTreeMap::new();
    for ev in events {
        by_device.entry(&ev.device_id).or_default().push(ev);
    }

    let mut traces = Vec::with_capacity(by_device.len());
    for (device, mut evs) in by_device {
        evs.sort_by_key(|e| (e.timestamp, e.kind));
        let intervals = on_intervals(&evs, horizon_end);
        let mut bits = vec![false; horizon_steps];
        for (start, end) in intervals {
            // A step is covered only if fully inside the interval.
            let first = start.div_ceil(step_seconds);
            let last_excl = end / step_seconds;
            for s in first..last_excl {
                bits[s as usize] = true;
            }
        }
        traces.push(AvailabilityTrace::from_bits(device, bits));
    }
    Ok(IngestOutcome {
        traces,
        horizon_steps,
    })
}

/// Replays sorted events into maximal `[start, end)` intervals where both
/// WiFi and charging are on.
fn on_intervals(events: &[&DeviceEvent], horizon_end: u64) -> Vec<(u64, u64)> {
    let mut wifi = false;
    let mut charge = false;
    let mut since: Option<u64> = None;
    let mut out = Vec::new();
    for ev in events {
        let was_on = wifi && charge;
        match ev.kind {
            EventKind::WifiOn => wifi = true,
            EventKind::WifiOff => wifi = false,
            EventKind::ChargeOn => charge = true,
            EventKind::ChargeOff => charge = false,
        }
        let now_on = wifi && charge;
        if !was_on && now_on {
            since = Some(ev.timestamp);
        } else if was_on && !now_on {
            if let Some(s) = since.take() {
                if ev.timestamp > s {
                    out.push((s, ev.timestamp));
                }
            }
        }
    }
    if let Some(s) = since {
        if horizon_end > s {
            out.push((s, horizon_end));
        }
    }
    out
}

/// Parses the `device_id,timestamp,kind` CSV event format and ingests it.
///
/// All malformed rows are collected and reported together with their line
/// numbers; any malformed row fails the ingest.
pub fn ingest_csv<R: Read>(reader: R, step_seconds: u64) -> Result<IngestOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut events = Vec::new();
    let mut issues = Vec::new();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                issues.push(RecordIssue {
                    line,
                    message: format!("unreadable record: {e}"),
                });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            issues.push(RecordIssue {
                line,
                message: format!("expected 3 fields, got {}", record.len()),
            });
            continue;
        }
        let device_id = record[0].trim().to_string();
        if device_id.is_empty() {
            issues.push(RecordIssue {
                line,
                message: "empty device id".to_string(),
            });
            continue;
        }
        let timestamp = match record[1].trim().parse::<u64>() {
            Ok(t) => t,
            Err(_) => {
                issues.push(RecordIssue {
                    line,
                    message: format!("invalid timestamp {:?}", &record[1]),
                });
                continue;
            }
        };
        let kind = match EventKind::parse(record[2].trim()) {
            Some(k) => k,
            None => {
                issues.push(RecordIssue {
                    line,
                    message: format!("unknown event kind {:?}", &record[2]),
                });
                continue;
            }
        };
        events.push(DeviceEvent {
            device_id,
            timestamp,
            kind,
        });
    }
    if !issues.is_empty() {
        return Err(Error::MalformedRecords(issues));
    }
    ingest_events(&events, step_seconds)
}

/// Fraction of steps inside the live window at which the device was
/// available.
pub fn availability_percentage(trace: &AvailabilityTrace) -> Result<f64> {
    let (first, last) = trace.live_window().ok_or_else(|| Error::NoLiveWindow {
        device: trace.device_id.clone(),
    })?;
    let ones = trace.bits[first..=last].iter().filter(|&&b| b).count();
    Ok(ones as f64 / (last - first + 1) as f64)
}

/// One histogram bin over availability percentages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Equal-width histogram of availability percentages over `[0, 1]`.
///
/// Traces without a live window are skipped; the bin counts sum to the number
/// of traces that have one. The top bin includes 1.0.
pub fn availability_histogram(
    traces: &[AvailabilityTrace],
    bins: usize,
) -> Result<Vec<HistogramBin>> {
    assert!(bins > 0, "bins must be positive");
    let mut counts = vec![0usize; bins];
    let mut any = false;
    for t in traces {
        let Ok(p) = availability_percentage(t) else {
            continue;
        };
        any = true;
        let mut idx = (p * bins as f64) as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        counts[idx] += 1;
    }
    if !any {
        return Err(Error::NoValidTraces);
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            low: i as f64 / bins as f64,
            high: (i + 1) as f64 / bins as f64,
            count,
        })
        .collect())
}

/// Symmetric matrix of pairwise Pearson correlations between binary
/// availability vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCorrelationMatrix {
    n: usize,
    values: Vec<f64>,
}

impl TraceCorrelationMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Builds a matrix from explicit entries (used by tests and failure
    /// scenarios); the input must be row-major `n*n`.
    pub fn from_values(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n);
        Self { n, values }
    }
}

/// Pairwise Pearson correlation of availability traces.
///
/// Pairs where either vector is constant get correlation 0: a trace that
/// never changes carries no co-failure signal. The diagonal is exactly 1 for
/// non-constant traces. Rows are computed independently, so the matrix can be
/// filled in parallel with a deterministic result.
pub fn trace_correlation(traces: &[AvailabilityTrace]) -> Result<TraceCorrelationMatrix> {
    if traces.len() < 2 {
        return Err(Error::NotEnoughTraces {
            needed: 2,
            got: traces.len(),
        });
    }
    let len = traces[0].len();
    for t in traces {
        if t.len() != len {
            return Err(Error::TraceLengthMismatch {
                device: t.device_id.clone(),
                expected: len,
                actual: t.len(),
            });
        }
    }
    let n = traces.len();
    let steps = len as f64;
    // Per-trace mean and stddev; constant traces have stddev 0.
    let stats: Vec<(f64, f64)> = traces
        .iter()
        .map(|t| {
            let ones = t.bits.iter().filter(|&&b| b).count() as f64;
            let mean = ones / steps;
            let var = mean * (1.0 - mean);
            (mean, var.sqrt())
        })
        .collect();

    let rows = par::map_range(n, |i| {
        let mut row = vec![0.0; n];
        let (mi, si) = stats[i];
        for j in 0..n {
            if j == i {
                row[j] = if si > 0.0 { 1.0 } else { 0.0 };
                continue;
            }
            let (mj, sj) = stats[j];
            if si == 0.0 || sj == 0.0 {
                row[j] = 0.0;
                continue;
            }
            let both = traces[i]
                .bits
                .iter()
                .zip(traces[j].bits.iter())
                .filter(|(&a, &b)| a && b)
                .count() as f64;
            row[j] = (both / steps - mi * mj) / (si * sj);
        }
        row
    });
    let mut values = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        values[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    // Symmetrize exactly: mirror the upper triangle.
    for i in 0..n {
        for j in (i + 1)..n {
            values[j * n + i] = values[i * n + j];
        }
    }
    Ok(TraceCorrelationMatrix { n, values })
}

/// Base on/off pattern shared by a synthetic trace group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasePattern {
    /// Square wave: on for `on_steps`, off for `off_steps`, shifted by
    /// `phase`.
    Periodic {
        on_steps: usize,
        off_steps: usize,
        phase: usize,
    },
    /// Two-state Markov chain sampled from the group's seed stream.
    Markov { stay_on: f64, stay_off: f64 },
}

impl BasePattern {
    fn generate(&self, steps: usize, rng: &mut impl Rng) -> Vec<bool> {
        match *self {
            BasePattern::Periodic {
                on_steps,
                off_steps,
                phase,
            } => {
                let period = (on_steps + off_steps).max(1);
                (0..steps).map(|s| (s + phase) % period < on_steps).collect()
            }
            BasePattern::Markov { stay_on, stay_off } => {
                let mut state = rng.random::<f64>() < 0.5;
                (0..steps)
                    .map(|_| {
                        let stay = if state { stay_on } else { stay_off };
                        if rng.random::<f64>() >= stay {
                            state = !state;
                        }
                        state
                    })
                    .collect()
            }
        }
    }
}

/// One group of synthetic nodes sharing a base pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub size: usize,
    pub pattern: BasePattern,
    /// Independent per-node per-step bit-flip probability.
    pub flip_prob: f64,
}

/// Generates correlated availability traces: nodes in a group share a base
/// pattern plus independent flip noise, so within-group correlation exceeds
/// across-group correlation. Deterministic for a given seed.
pub fn synthesize_traces(
    steps: usize,
    groups: &[GroupSpec],
    seed: u64,
) -> Result<Vec<AvailabilityTrace>> {
    if groups.is_empty() || groups.iter().all(|g| g.size == 0) {
        return Err(Error::EmptyGroupSpec);
    }
    assert!(steps > 0, "steps must be positive");
    let mut traces = Vec::new();
    let mut node_idx = 0u64;
    for (gi, group) in groups.iter().enumerate() {
        let mut pattern_rng = stream_rng(seed, Stream::TraceSynthesis, (1 << 32) + gi as u64);
        let base = group.pattern.generate(steps, &mut pattern_rng);
        for _ in 0..group.size {
            let mut rng = stream_rng(seed, Stream::TraceSynthesis, node_idx);
            let bits = base
                .iter()
                .map(|&b| {
                    if group.flip_prob > 0.0 && rng.random::<f64>() < group.flip_prob {
                        !b
                    } else {
                        b
                    }
                })
                .collect();
            traces.push(AvailabilityTrace::from_bits(
                format!("node-{node_idx:04}"),
                bits,
            ));
            node_idx += 1;
        }
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(device: &str, t: u64, kind: EventKind) -> DeviceEvent {
        DeviceEvent {
            device_id: device.to_string(),
            timestamp: t,
            kind,
        }
    }

    #[test]
    fn ingest_simple_on_window() {
        let events = vec![
            ev("a", 0, EventKind::WifiOn),
            ev("a", 0, EventKind::ChargeOn),
            ev("a", 100, EventKind::WifiOff),
        ];
        let out = ingest_events(&events, 10).unwrap();
        assert_eq!(out.traces.len(), 1);
        let t = &out.traces[0];
        assert_eq!(t.len(), 11);
        for s in 0..10 {
            assert!(t.is_available(s), "step {s} should be on");
        }
        assert!(!t.is_available(10));
    }

    #[test]
    fn ingest_wifi_only_never_available() {
        let events = vec![ev("a", 0, EventKind::WifiOn), ev("a", 500, EventKind::WifiOff)];
        let out = ingest_events(&events, 10).unwrap();
        assert!(out.traces[0].bits().iter().all(|&b| !b));
        assert_eq!(out.traces[0].live_window(), None);
    }

    /// Independent oracle: replay the per-second state machine and mark a
    /// step available only if every second inside it is available.
    fn replay_oracle(events: &[DeviceEvent], step: u64) -> BTreeMap<String, Vec<bool>> {
        let horizon_sec = events.iter().map(|e| e.timestamp).max().unwrap() + 1;
        let horizon_steps = (horizon_sec + step - 1).div_ceil(step) as usize;
        let mut devices: BTreeMap<String, Vec<&DeviceEvent>> = BTreeMap::new();
        for e in events {
            devices.entry(e.device_id.clone()).or_default().push(e);
        }
        let mut out = BTreeMap::new();
        for (d, mut evs) in devices {
            evs.sort_by_key(|e| (e.timestamp, e.kind));
            let total_sec = horizon_steps as u64 * step;
            let mut per_sec = vec![false; total_sec as usize];
            let (mut wifi, mut charge) = (false, false);
            let mut cursor = 0usize;
            for sec in 0..total_sec {
                while cursor < evs.len() && evs[cursor].timestamp == sec {
                    match evs[cursor].kind {
                        EventKind::WifiOn => wifi = true,
                        EventKind::WifiOff => wifi = false,
                        EventKind::ChargeOn => charge = true,
                        EventKind::ChargeOff => charge = false,
                    }
                    cursor += 1;
                }
                per_sec[sec as usize] = wifi && charge;
            }
            let bits = (0..horizon_steps)
                .map(|s| {
                    let lo = s as u64 * step;
                    let hi = lo + step;
                    (lo..hi).all(|sec| per_sec[sec as usize])
                })
                .collect();
            out.insert(d, bits);
        }
        out
    }

    #[test]
    fn ingest_matches_replay_oracle_on_three_device_file() {
        let events = vec![
            ev("a", 0, EventKind::WifiOn),
            ev("a", 3, EventKind::ChargeOn),
            ev("a", 27, EventKind::WifiOff),
            ev("a", 31, EventKind::WifiOn),
            ev("a", 55, EventKind::ChargeOff),
            ev("b", 5, EventKind::ChargeOn),
            ev("b", 5, EventKind::WifiOn),
            ev("b", 40, EventKind::ChargeOff),
            ev("b", 40, EventKind::ChargeOn),
            ev("b", 60, EventKind::WifiOff),
            ev("c", 10, EventKind::WifiOn),
            ev("c", 20, EventKind::ChargeOn),
            ev("c", 22, EventKind::ChargeOff),
        ];
        let out = ingest_events(&events, 5).unwrap();
        let oracle = replay_oracle(&events, 5);
        for t in &out.traces {
            assert_eq!(t.bits(), oracle[&t.device_id].as_slice(), "device {}", t.device_id);
        }
    }

    #[test]
    fn availability_percentage_examples() {
        let all_on = AvailabilityTrace::from_bits("x", vec![true; 8]);
        assert_eq!(availability_percentage(&all_on).unwrap(), 1.0);

        let alternating: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        // Live window is [0, 18]: 10 ones over 19 steps.
        let t = AvailabilityTrace::from_bits("y", alternating);
        let p = availability_percentage(&t).unwrap();
        assert!((p - 10.0 / 19.0).abs() < 1e-12);

        // 7 ones spread over a 20-step live window.
        let mut bits = vec![false; 24];
        for &i in &[2, 4, 5, 9, 13, 17, 21] {
            bits[i] = true;
        }
        let t = AvailabilityTrace::from_bits("z", bits);
        assert_eq!(availability_percentage(&t).unwrap(), 0.35);

        let all_off = AvailabilityTrace::from_bits("w", vec![false; 8]);
        assert!(matches!(
            availability_percentage(&all_off),
            Err(Error::NoLiveWindow { .. })
        ));
    }

    #[test]
    fn half_available_even_window_is_half() {
        // Alternating bits with the final 1 placed so the live window spans
        // an even number of steps: 8 steps, 4 ones.
        let bits = vec![true, false, true, false, true, false, false, true];
        let t = AvailabilityTrace::from_bits("alt", bits);
        assert_eq!(availability_percentage(&t).unwrap(), 0.5);
    }

    #[test]
    fn histogram_two_bins() {
        let traces: Vec<AvailabilityTrace> = [0.1, 0.3, 0.6, 0.9]
            .iter()
            .map(|&p| AvailabilityTrace::from_bits("h", bits_with_fraction(p)))
            .collect();
        let bins = availability_histogram(&traces, 2).unwrap();
        assert_eq!(bins[0].count, 2);
        assert_eq!(bins[1].count, 2);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 4);
    }

    /// 20-step live window with `round(20p)` available steps.
    fn bits_with_fraction(p: f64) -> Vec<bool> {
        let ones = (p * 20.0).round() as usize;
        assert!(ones >= 1);
        let mut bits = vec![false; 20];
        for b in bits.iter_mut().take(ones - 1) {
            *b = true;
        }
        bits[19] = true;
        bits
    }

    #[test]
    fn histogram_matches_naive_binning_oracle() {
        let mut rng = stream_rng(7, Stream::TraceSynthesis, 99);
        let traces: Vec<AvailabilityTrace> = (0..200)
            .map(|_| {
                let p = (rng.random::<f64>() * 0.95 + 0.05).min(1.0);
                AvailabilityTrace::from_bits("t", bits_with_fraction(p))
            })
            .collect();
        let bins = 20;
        let hist = availability_histogram(&traces, bins).unwrap();
        // Naive oracle.
        let mut counts = vec![0usize; bins];
        for t in &traces {
            let p = availability_percentage(t).unwrap();
            let idx = ((p * bins as f64) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        for (b, &c) in hist.iter().zip(counts.iter()) {
            assert_eq!(b.count, c);
        }
    }

    fn pearson_oracle(a: &[bool], b: &[bool]) -> f64 {
        let n = a.len() as f64;
        let xs: Vec<f64> = a.iter().map(|&x| x as u8 as f64).collect();
        let ys: Vec<f64> = b.iter().map(|&x| x as u8 as f64).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / n;
        let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n).sqrt();
        let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n).sqrt();
        if sx == 0.0 || sy == 0.0 {
            0.0
        } else {
            cov / (sx * sy)
        }
    }

    #[test]
    fn correlation_identical_and_complement() {
        let a: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let not_a: Vec<bool> = a.iter().map(|&b| !b).collect();
        let traces = vec![
            AvailabilityTrace::from_bits("a", a.clone()),
            AvailabilityTrace::from_bits("a2", a),
            AvailabilityTrace::from_bits("na", not_a),
        ];
        let m = trace_correlation(&traces).unwrap();
        assert!((m.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((m.get(0, 2) + 1.0).abs() < 1e-12);
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn correlation_matches_pearson_oracle_random() {
        let mut rng = stream_rng(3, Stream::TraceSynthesis, 55);
        let a: Vec<bool> = (0..100).map(|_| rng.random::<f64>() < 0.4).collect();
        let b: Vec<bool> = (0..100).map(|_| rng.random::<f64>() < 0.6).collect();
        let traces = vec![
            AvailabilityTrace::from_bits("a", a.clone()),
            AvailabilityTrace::from_bits("b", b.clone()),
        ];
        let m = trace_correlation(&traces).unwrap();
        assert!((m.get(0, 1) - pearson_oracle(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn correlation_constant_trace_is_zero_everywhere() {
        let traces = vec![
            AvailabilityTrace::from_bits("c", vec![true; 40]),
            AvailabilityTrace::from_bits("v", (0..40).map(|i| i % 2 == 0).collect()),
        ];
        let m = trace_correlation(&traces).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(1, 1), 1.0);
    }

    #[test]
    fn correlation_length_mismatch_errors() {
        let traces = vec![
            AvailabilityTrace::from_bits("a", vec![true; 10]),
            AvailabilityTrace::from_bits("b", vec![true; 11]),
        ];
        assert!(matches!(
            trace_correlation(&traces),
            Err(Error::TraceLengthMismatch { .. })
        ));
    }

    #[test]
    fn synthesize_zero_noise_groups_fully_correlated_within() {
        let groups = vec![
            GroupSpec {
                size: 5,
                pattern: BasePattern::Periodic {
                    on_steps: 4,
                    off_steps: 4,
                    phase: 0,
                },
                flip_prob: 0.0,
            },
            GroupSpec {
                size: 5,
                pattern: BasePattern::Periodic {
                    on_steps: 4,
                    off_steps: 4,
                    phase: 4,
                },
                flip_prob: 0.0,
            },
        ];
        let traces = synthesize_traces(64, &groups, 1).unwrap();
        let m = trace_correlation(&traces).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!((m.get(i, j) - 1.0).abs() < 1e-12);
                    // Opposite phases are exact complements.
                    assert!((m.get(i, j + 5) + 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn synthesize_is_deterministic_per_seed() {
        let groups = vec![GroupSpec {
            size: 4,
            pattern: BasePattern::Markov {
                stay_on: 0.9,
                stay_off: 0.8,
            },
            flip_prob: 0.05,
        }];
        let a = synthesize_traces(128, &groups, 42).unwrap();
        let b = synthesize_traces(128, &groups, 42).unwrap();
        assert_eq!(a, b);
        let c = synthesize_traces(128, &groups, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthesize_within_group_correlation_exceeds_across() {
        // Monte Carlo ordering check over 20 seeds at flip noise 0.1.
        let groups = vec![
            GroupSpec {
                size: 4,
                pattern: BasePattern::Markov {
                    stay_on: 0.9,
                    stay_off: 0.85,
                },
                flip_prob: 0.1,
            },
            GroupSpec {
                size: 4,
                pattern: BasePattern::Markov {
                    stay_on: 0.9,
                    stay_off: 0.85,
                },
                flip_prob: 0.1,
            },
        ];
        let mut within_sum = 0.0;
        let mut across_sum = 0.0;
        let mut within_n = 0.0;
        let mut across_n = 0.0;
        for seed in 0..20 {
            let traces = synthesize_traces(256, &groups, seed).unwrap();
            let m = trace_correlation(&traces).unwrap();
            for i in 0..8 {
                for j in (i + 1)..8 {
                    let same = (i < 4) == (j < 4);
                    if same {
                        within_sum += m.get(i, j);
                        within_n += 1.0;
                    } else {
                        across_sum += m.get(i, j);
                        across_n += 1.0;
                    }
                }
            }
        }
        assert!(within_sum / within_n > across_sum / across_n);
    }

    #[test]
    fn empty_group_spec_errors() {
        assert!(matches!(
            synthesize_traces(10, &[], 0),
            Err(Error::EmptyGroupSpec)
        ));
    }

    #[test]
    fn trace_json_round_trip() {
        let t = AvailabilityTrace::from_bits("dev-1", vec![true, false, true]);
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"101\""));
        let back: AvailabilityTrace = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn availability_percentage_in_unit_interval(
            bits in proptest::collection::vec(any::<bool>(), 1..200),
        ) {
            let t = AvailabilityTrace::from_bits("p", bits);
            if let Ok(p) = availability_percentage(&t) {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    proptest! {
        #[test]
        fn correlation_symmetric_unit_diagonal_matches_oracle(
            seed in 0u64..5000,
            n in 2usize..8,
            steps in 8usize..64,
        ) {
            let mut rng = stream_rng(seed, Stream::TraceSynthesis, 1234);
            let traces: Vec<AvailabilityTrace> = (0..n)
                .map(|i| {
                    let bits: Vec<bool> =
                        (0..steps).map(|_| rng.random::<f64>() < 0.5).collect();
                    AvailabilityTrace::from_bits(format!("t{i}"), bits)
                })
                .collect();
            let m = trace_correlation(&traces).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                    prop_assert!(m.get(i, j).abs() <= 1.0 + 1e-9);
                    let oracle = if i == j && traces[i].bits().iter().any(|&b| b)
                        && traces[i].bits().iter().any(|&b| !b)
                    {
                        1.0
                    } else {
                        pearson_oracle(traces[i].bits(), traces[j].bits())
                    };
                    if i == j && oracle == 1.0 {
                        prop_assert_eq!(m.get(i, j), 1.0);
                    } else {
                        prop_assert!((m.get(i, j) - oracle).abs() < 1e-9);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn ingest_is_order_insensitive(
            seed in 0u64..1000,
        ) {
            let mut rng = stream_rng(seed, Stream::TraceSynthesis, 777);
            let kinds = [
                EventKind::WifiOn,
                EventKind::WifiOff,
                EventKind::ChargeOn,
                EventKind::ChargeOff,
            ];
            let mut events: Vec<DeviceEvent> = (0..40)
                .map(|_| DeviceEvent {
                    device_id: format!("d{}", rng.random_range(0..3)),
                    timestamp: rng.random_range(0..200),
                    kind: kinds[rng.random_range(0..4)],
                })
                .collect();
            let sorted = ingest_events(&events, 7).unwrap();
            // Shuffle.
            for i in (1..events.len()).rev() {
                let j = rng.random_range(0..=i);
                events.swap(i, j);
            }
            let shuffled = ingest_events(&events, 7).unwrap();
            prop_assert_eq!(sorted.traces, shuffled.traces);
        }
    }
}
