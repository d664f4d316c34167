//! Time-binned run metrics and their CSV form.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bridge::{DropReason, Outcome, TraceRecord};
use crate::filter::StreamHandle;
use crate::meter::Color;
use crate::sync::SyncSample;
use crate::time::Nanos;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub sum: u128,
    pub min: Nanos,
    pub max: Nanos,
}

impl LatencyStats {
    pub fn add(&mut self, v: Nanos) {
        if self.count == 0 || v < self.min {
            self.min = v;
        }
        self.max = self.max.max(v);
        self.count += 1;
        self.sum += v as u128;
    }

    pub fn merge(&mut self, o: &LatencyStats) {
        if o.count == 0 {
            return;
        }
        if self.count == 0 || o.min < self.min {
            self.min = o.min;
        }
        self.max = self.max.max(o.max);
        self.count += o.count;
        self.sum += o.sum;
    }

    /// Floor of the mean.
    pub fn mean(&self) -> Option<Nanos> {
        (self.count > 0).then(|| (self.sum / self.count as u128) as Nanos)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bin {
    pub start: Nanos,
    pub end: Nanos,
    /// Bytes of frames that matched a stream filter entry.
    pub offered_psfp_bytes: u64,
    /// Green, yellow, red bytes at the meter stage.
    pub color_bytes: [u64; 3],
    pub forwarded_frames: u64,
    pub forwarded_bytes: u64,
    pub best_effort_frames: u64,
    pub best_effort_bytes: u64,
    pub drops: [u64; 8],
    pub drop_bytes: [u64; 8],
    pub queue_drops: u64,
    pub latency: LatencyStats,
}

impl Bin {
    pub fn bytes(&self, c: Color) -> u64 {
        self.color_bytes[c as usize]
    }

    /// Bytes dropped before the meter stage.
    pub fn pre_meter_drop_bytes(&self) -> u64 {
        DropReason::ALL.iter().filter(|r| !r.is_meter_drop()).map(|r| self.drop_bytes[r.index()]).sum()
    }

    pub fn width(&self) -> Nanos {
        self.end - self.start
    }
}

/// bit/s from a byte count over `width` ns, rounded down.
pub fn rate_bps(bytes: u64, width: Nanos) -> u64 {
    (bytes as u128 * 8_000_000_000 / width as u128) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub sent_ns: Nanos,
    pub source: u32,
    pub latency_ns: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardRecord {
    /// First-pass arrival time.
    pub time_ns: Nanos,
    pub stream_handle: StreamHandle,
    pub t_rel_adj_ns: Nanos,
    pub queue: u8,
    pub color: Color,
    pub cumulative: u64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    pub bin_width: Nanos,
    pub bins: Vec<Bin>,
    pub latency: Vec<LatencySample>,
    pub forwarded: Vec<ForwardRecord>,
    pub sync: Vec<SyncSample>,
    pub trace: Vec<TraceRecord>,
}

impl MetricsLog {
    /// Bins of `bin_width` tiling `[0, duration)`; the last may be shorter.
    pub fn new(duration: Nanos, bin_width: Nanos) -> Self {
        assert!(bin_width > 0, "bin width must be positive");
        let n = duration.div_ceil(bin_width);
        let bins = (0..n)
            .map(|i| Bin { start: i * bin_width, end: ((i + 1) * bin_width).min(duration), ..Default::default() })
            .collect();
        MetricsLog { bin_width, bins, ..Default::default() }
    }

    pub fn bin_mut(&mut self, t: Nanos) -> Option<&mut Bin> {
        self.bins.get_mut((t / self.bin_width) as usize)
    }

    pub fn bin_at(&self, t: Nanos) -> Option<&Bin> {
        self.bins.get((t / self.bin_width) as usize)
    }

    pub fn record_outcome(&mut self, sent: Nanos, size: u32, handle: Option<StreamHandle>, t_rel_adj: Option<Nanos>, o: Outcome) {
        let Some(bin) = self.bin_mut(sent) else { return };
        let size = size as u64;
        if !matches!(o, Outcome::BestEffort { .. }) {
            bin.offered_psfp_bytes += size;
        }
        if let Some(c) = o.color() {
            bin.color_bytes[c as usize] += size;
        }
        match o {
            Outcome::Forward { queue, color } => {
                bin.forwarded_frames += 1;
                bin.forwarded_bytes += size;
                let cumulative = self.forwarded.len() as u64 + 1;
                self.forwarded.push(ForwardRecord {
                    time_ns: sent,
                    stream_handle: handle.unwrap_or_default(),
                    t_rel_adj_ns: t_rel_adj.unwrap_or_default(),
                    queue,
                    color,
                    cumulative,
                });
            }
            Outcome::BestEffort { .. } => {
                bin.best_effort_frames += 1;
                bin.best_effort_bytes += size;
            }
            Outcome::Drop(r) => {
                bin.drops[r.index()] += 1;
                bin.drop_bytes[r.index()] += size;
            }
        }
    }

    pub fn record_queue_drop(&mut self, sent: Nanos) {
        if let Some(b) = self.bin_mut(sent) {
            b.queue_drops += 1;
        }
    }

    pub fn record_latency(&mut self, sent: Nanos, source: u32, latency: Nanos) {
        if let Some(b) = self.bin_mut(sent) {
            b.latency.add(latency);
            self.latency.push(LatencySample { sent_ns: sent, source, latency_ns: latency });
        }
    }

    pub fn total_latency(&self) -> LatencyStats {
        let mut s = LatencyStats::default();
        for b in &self.bins {
            s.merge(&b.latency);
        }
        s
    }

    pub fn total_color_bytes(&self) -> [u64; 3] {
        let mut t = [0; 3];
        for b in &self.bins {
            for (a, v) in t.iter_mut().zip(b.color_bytes) {
                *a += v;
            }
        }
        t
    }

    pub fn total_drops(&self) -> [u64; 8] {
        let mut t = [0; 8];
        for b in &self.bins {
            for (a, v) in t.iter_mut().zip(b.drops) {
                *a += v;
            }
        }
        t
    }

    /// Writes every metric family as one CSV file into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(dir.join("rates.csv"))?;
        for b in &self.bins {
            let wd = b.width();
            w.serialize(RateRow {
                bin_start_ns: b.start,
                bin_end_ns: b.end,
                green_bps: rate_bps(b.bytes(Color::Green), wd),
                yellow_bps: rate_bps(b.bytes(Color::Yellow), wd),
                red_bps: rate_bps(b.bytes(Color::Red), wd),
                offered_psfp_bps: rate_bps(b.offered_psfp_bytes, wd),
                forwarded_bps: rate_bps(b.forwarded_bytes, wd),
                best_effort_bps: rate_bps(b.best_effort_bytes, wd),
                green_bytes: b.bytes(Color::Green),
                yellow_bytes: b.bytes(Color::Yellow),
                red_bytes: b.bytes(Color::Red),
            })?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("drops.csv"))?;
        let mut header = vec!["bin_start_ns".to_string()];
        header.extend(DropReason::ALL.iter().map(|r| r.name().to_string()));
        header.push("queue".into());
        w.write_record(&header)?;
        for b in &self.bins {
            let mut row = vec![b.start.to_string()];
            row.extend(b.drops.iter().map(u64::to_string));
            row.push(b.queue_drops.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;

        write_rows(
            &dir.join("forwarded.csv"),
            &["time_ns", "stream_handle", "t_rel_adj_ns", "queue", "color", "cumulative"],
            &self.forwarded,
        )?;
        write_rows(&dir.join("latency.csv"), &["sent_ns", "source", "latency_ns"], &self.latency)?;

        let mut w = csv::Writer::from_path(dir.join("latency_bins.csv"))?;
        for b in &self.bins {
            let l = &b.latency;
            w.serialize(LatencyBinRow {
                bin_start_ns: b.start,
                count: l.count,
                mean_ns: l.mean(),
                min_ns: (l.count > 0).then_some(l.min),
                max_ns: (l.count > 0).then_some(l.max),
            })?;
        }
        w.flush()?;

        write_rows(&dir.join("sync.csv"), &["time", "port", "eps1", "eps2", "delta"], &self.sync)?;

        if !self.trace.is_empty() {
            let mut f = BufWriter::new(File::create(dir.join("trace.csv"))?);
            writeln!(f, "time_ns,port,stream_handle,outcome,reason,color,t_rel_adj_ns")?;
            for r in &self.trace {
                let handle = r.stream_handle.map(|h| h.to_string()).unwrap_or_default();
                let reason = match r.outcome {
                    Outcome::Drop(d) => d.name(),
                    _ => "",
                };
                let color = r.outcome.color().map_or("", Color::name);
                let t_rel = r.t_rel_adj.map(|t| t.to_string()).unwrap_or_default();
                writeln!(f, "{},{},{handle},{},{reason},{color},{t_rel}", r.time, r.port, r.outcome.name())?;
            }
            f.flush()?;
        }
        Ok(())
    }
}

/// Serialized rows; an empty file still gets its header line.
fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    pub bin_start_ns: Nanos,
    pub bin_end_ns: Nanos,
    pub green_bps: u64,
    pub yellow_bps: u64,
    pub red_bps: u64,
    pub offered_psfp_bps: u64,
    pub forwarded_bps: u64,
    pub best_effort_bps: u64,
    pub green_bytes: u64,
    pub yellow_bytes: u64,
    pub red_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyBinRow {
    pub bin_start_ns: Nanos,
    pub count: u64,
    pub mean_ns: Option<Nanos>,
    pub min_ns: Option<Nanos>,
    pub max_ns: Option<Nanos>,
}

/// Re-summarizes the CSVs of a finished run.
pub fn summarize_dir(dir: &Path) -> Result<String, SimError> {
    let mut out = String::new();
    let mut rdr = csv::Reader::from_path(dir.join("rates.csv"))?;
    let rows: Vec<RateRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    let span = rows.last().map_or(0, |r| r.bin_end_ns) - rows.first().map_or(0, |r| r.bin_start_ns);
    let total = |f: fn(&RateRow) -> u64| rows.iter().map(f).sum::<u64>();
    let _ = writeln!(out, "bins: {} covering {span} ns", rows.len());
    if span > 0 {
        for (name, bytes) in [
            ("green", total(|r| r.green_bytes)),
            ("yellow", total(|r| r.yellow_bytes)),
            ("red", total(|r| r.red_bytes)),
        ] {
            let _ = writeln!(out, "{name:>7}: {bytes} bytes, mean {} bit/s", rate_bps(bytes, span));
        }
    }

    let mut rdr = csv::Reader::from_path(dir.join("drops.csv"))?;
    let header = rdr.headers()?.clone();
    let mut sums = vec![0u64; header.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (i, v) in rec.iter().enumerate().skip(1) {
            sums[i] += v.parse::<u64>().map_err(|e| SimError::Format(format!("drops.csv: {e}")))?;
        }
    }
    let _ = writeln!(out, "drops:");
    for (name, n) in header.iter().zip(&sums).skip(1) {
        let _ = writeln!(out, "  {name}: {n}");
    }

    let mut rdr = csv::Reader::from_path(dir.join("latency_bins.csv"))?;
    let mut lat = LatencyStats::default();
    for row in rdr.deserialize::<LatencyBinRow>() {
        let row = row?;
        if let (Some(mean), Some(min), Some(max)) = (row.mean_ns, row.min_ns, row.max_ns) {
            lat.merge(&LatencyStats { count: row.count, sum: mean as u128 * row.count as u128, min, max });
        }
    }
    match lat.mean() {
        Some(mean) => {
            let _ = writeln!(out, "latency: {} samples, min {} ns, mean ~{mean} ns, max {} ns", lat.count, lat.min, lat.max);
        }
        None => out.push_str("latency: no samples\n"),
    }
    Ok(out)
}
