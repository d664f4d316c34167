//! Deterministic discrete-event harness around the bridge.
//!
//! Events at equal times run in a fixed class order (tick, control, frame,
//! link departure) and then in insertion order, so a run depends only on
//! its setup and seed.

mod link;
mod metrics;
mod source;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use link::{calibrated_queue_limit, serialization, EgressLink, Enqueue, QueuedFrame, DEFAULT_PLATEAU};
pub use metrics::{
    rate_bps, summarize_dir, Bin, ForwardRecord, LatencySample, LatencyStats, MetricsLog, RateRow,
};
pub use source::{CbrSource, HeaderTemplate};

use crate::bridge::{schedule_ticks, BridgeError, BridgeState, Counters, DropReason, FirstPass, Outcome};
use crate::filter::{GateId, MeterId, StreamHandle};
use crate::frame::{Frame, PortId};
use crate::sync::{self, SyncConfig};
use crate::time::{Nanos, Timestamp48};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
}

/// Timestamped control-plane change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ControlAction {
    SetDropOnYellow {
        meter: MeterId,
        #[serde(default = "yes")]
        value: bool,
    },
    SetMarkAllRed {
        meter: MeterId,
        #[serde(default = "yes")]
        value: bool,
    },
    SetDelta {
        port: PortId,
        delta_ns: i64,
    },
    ResetMeter {
        meter: MeterId,
    },
    ResetGate {
        gate: GateId,
    },
    ResetStream {
        handle: StreamHandle,
    },
}

fn yes() -> bool {
    true
}

impl ControlAction {
    pub fn apply(self, b: &mut BridgeState) -> Result<(), BridgeError> {
        match self {
            ControlAction::SetDropOnYellow { meter, value } => b.set_drop_on_yellow(meter, value),
            ControlAction::SetMarkAllRed { meter, value } => b.set_mark_all_red(meter, value),
            ControlAction::SetDelta { port, delta_ns } => b.set_delta(port, delta_ns).map(drop),
            ControlAction::ResetMeter { meter } => b.reset_meter(meter),
            ControlAction::ResetGate { gate } => b.reset_gate(gate),
            ControlAction::ResetStream { handle } => b.reset_stream(handle),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlEvent {
    pub at: Nanos,
    pub action: ControlAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkConfig {
    pub id: u32,
    pub capacity: u64,
    pub queue_limit: u64,
}

/// Everything a run needs, already validated.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub name: String,
    pub duration: Nanos,
    pub bin: Nanos,
    pub seed: u64,
    /// Data-plane timestamp at simulation time zero.
    pub clock_origin: u64,
    pub bridge: BridgeState,
    pub sources: Vec<CbrSource>,
    pub links: Vec<LinkConfig>,
    pub sync: SyncConfig,
    pub control: Vec<ControlEvent>,
    pub trace: bool,
    /// Check bridge conservation after every event.
    pub check_conservation: bool,
}

#[derive(Debug, Clone)]
enum EventKind {
    Tick(PortId),
    Control(ControlAction),
    SyncPoll,
    Send { source: usize, k: u64 },
    Recirc { source: usize, sent: Nanos, frame: Frame },
    Departure { link: usize },
}

impl EventKind {
    fn class(&self) -> u8 {
        match self {
            EventKind::Tick(_) => 0,
            EventKind::Control(_) | EventKind::SyncPoll => 1,
            EventKind::Send { .. } | EventKind::Recirc { .. } => 2,
            EventKind::Departure { .. } => 3,
        }
    }
}

#[derive(Debug)]
struct Event {
    time: Nanos,
    class: u8,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Event {
    fn cmp(&self, o: &Self) -> Ordering {
        (self.time, self.class, self.seq).cmp(&(o.time, o.class, o.seq))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SourceSummary {
    pub name: String,
    pub sent_frames: u64,
    pub sent_bytes: u64,
    pub queue_drops: u64,
    pub latency: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub duration_ns: Nanos,
    pub bin_ns: Nanos,
    pub seed: u64,
    pub events: u64,
    pub counters: Counters,
    pub drops: BTreeMap<&'static str, u64>,
    /// Total green, yellow and red bytes.
    pub green_bytes: u64,
    pub yellow_bytes: u64,
    pub red_bytes: u64,
    pub forwarded_psfp_frames: u64,
    pub queue_drops: u64,
    pub sources: Vec<SourceSummary>,
    pub conservation_checked: bool,
    /// Events after which the conservation identity did not hold.
    pub conservation_violations: u64,
    pub sync_samples: usize,
}

pub struct Simulation {
    setup: SimSetup,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    links: Vec<EgressLink>,
    log: MetricsLog,
    per_source: Vec<SourceSummary>,
    events: u64,
    violations: u64,
}

impl Simulation {
    pub fn new(setup: SimSetup) -> Self {
        let links = setup.links.iter().map(|l| EgressLink::new(l.capacity, l.queue_limit)).collect();
        let log = MetricsLog::new(setup.duration, setup.bin);
        let per_source =
            setup.sources.iter().map(|s| SourceSummary { name: s.name.clone(), ..Default::default() }).collect();
        let mut sim = Simulation {
            setup,
            heap: BinaryHeap::new(),
            seq: 0,
            links,
            log,
            per_source,
            events: 0,
            violations: 0,
        };
        if sim.setup.trace {
            sim.setup.bridge.enable_trace();
        }
        sim.schedule_initial();
        sim
    }

    fn push(&mut self, time: Nanos, kind: EventKind) {
        let class = kind.class();
        self.seq += 1;
        self.heap.push(Reverse(Event { time, class, seq: self.seq, kind }));
    }

    fn schedule_initial(&mut self) {
        let duration = self.setup.duration;
        let mut rng = ChaCha8Rng::seed_from_u64(self.setup.seed);
        let ports: Vec<_> = self.setup.bridge.ports().map(|p| p.cfg.clone()).collect();
        for p in &ports {
            for t in schedule_ticks(p, duration, &mut rng) {
                self.push(t, EventKind::Tick(p.port_id));
            }
        }
        for c in self.setup.control.clone() {
            if c.at < duration {
                self.push(c.at, EventKind::Control(c.action));
            }
        }
        if self.setup.sync.enabled {
            let first = self.setup.sync.first_poll_at();
            let step = self.setup.sync.poll_interval.max(1);
            let mut t = first;
            while t < duration {
                self.push(t, EventKind::SyncPoll);
                t += step;
            }
        }
        for i in 0..self.setup.sources.len() {
            if let Some(t) = self.setup.sources[i].departure(0).filter(|t| *t < duration) {
                self.push(t, EventKind::Send { source: i, k: 0 });
            }
        }
    }

    fn stamp(&self, t: Nanos) -> Timestamp48 {
        Timestamp48::new(self.setup.clock_origin.wrapping_add(t))
    }

    /// Runs to completion and returns the summary and the metrics.
    pub fn run(mut self) -> Result<(RunSummary, MetricsLog), SimError> {
        while let Some(Reverse(ev)) = self.heap.pop() {
            if ev.time >= self.setup.duration {
                break;
            }
            self.events += 1;
            self.handle(ev)?;
            if self.setup.check_conservation && !self.setup.bridge.counters().is_conserved() {
                self.violations += 1;
            }
        }
        self.log.trace = self.setup.bridge.take_trace();
        Ok(self.finish())
    }

    fn handle(&mut self, ev: Event) -> Result<(), SimError> {
        let now = ev.time;
        match ev.kind {
            EventKind::Tick(port) => {
                let ts = self.stamp(now);
                self.setup.bridge.tick(port, ts)?;
            }
            EventKind::Control(a) => a.apply(&mut self.setup.bridge)?,
            EventKind::SyncPoll => {
                let samples = sync::poll(&self.setup.sync, &mut self.setup.bridge, now)?;
                self.log.sync.extend(samples);
            }
            EventKind::Send { source, k } => {
                let src = &self.setup.sources[source];
                let frame = src.frame(self.stamp(now));
                if let Some(next) = src.departure(k + 1) {
                    self.push(next, EventKind::Send { source, k: k + 1 });
                }
                let s = &mut self.per_source[source];
                s.sent_frames += 1;
                s.sent_bytes += frame.size as u64;
                match self.setup.bridge.ingress(frame) {
                    FirstPass::Recirculate { frame, delay } => {
                        self.push(now + delay, EventKind::Recirc { source, sent: now, frame });
                    }
                    FirstPass::Done(o) => self.finish_frame(source, now, now, None, None, o),
                }
            }
            EventKind::Recirc { source, sent, frame } => {
                let ts = self.stamp(now);
                let (handle, o) = self.setup.bridge.recirculated(&frame, ts);
                let t_rel_adj = frame.recirc.map(|r| r.t_rel_adj);
                self.finish_frame(source, sent, now, handle, t_rel_adj, o);
            }
            EventKind::Departure { link } => {
                let (done, next) = self.links[link].depart(now);
                if let Some(t) = next {
                    self.push(t, EventKind::Departure { link });
                }
                if self.setup.sources[done.source].measure_latency {
                    let latency = now - done.sent;
                    self.log.record_latency(done.sent, self.setup.sources[done.source].id, latency);
                    self.per_source[done.source].latency.add(latency);
                }
            }
        }
        Ok(())
    }

    fn finish_frame(
        &mut self,
        source: usize,
        sent: Nanos,
        now: Nanos,
        handle: Option<StreamHandle>,
        t_rel_adj: Option<Nanos>,
        o: Outcome,
    ) {
        let src = &self.setup.sources[source];
        let size = src.frame_size;
        self.log.record_outcome(sent, size, handle, t_rel_adj, o);
        let Some(link) = src.link.filter(|_| o.is_forwarded()) else { return };
        match self.links[link].enqueue(QueuedFrame { sent, source, size }, now) {
            Enqueue::Started(t) => self.push(t, EventKind::Departure { link }),
            Enqueue::Queued => {}
            Enqueue::Dropped => {
                self.log.record_queue_drop(sent);
                self.per_source[source].queue_drops += 1;
            }
        }
    }

    fn finish(self) -> (RunSummary, MetricsLog) {
        let counters = self.setup.bridge.counters().clone();
        let drops = DropReason::ALL.iter().map(|r| (r.name(), counters.dropped(*r))).collect();
        let [green, yellow, red] = self.log.total_color_bytes();
        let summary = RunSummary {
            scenario: self.setup.name.clone(),
            duration_ns: self.setup.duration,
            bin_ns: self.setup.bin,
            seed: self.setup.seed,
            events: self.events,
            counters,
            drops,
            green_bytes: green,
            yellow_bytes: yellow,
            red_bytes: red,
            forwarded_psfp_frames: self.log.forwarded.len() as u64,
            queue_drops: self.per_source.iter().map(|s| s.queue_drops).sum(),
            sources: self.per_source,
            conservation_checked: self.setup.check_conservation,
            conservation_violations: self.violations,
            sync_samples: self.log.sync.len(),
        };
        (summary, self.log)
    }
}

/// Runs a setup and writes the CSV files and `summary.json` into `out`.
pub fn run_to_dir(setup: SimSetup, out: &Path) -> Result<RunSummary, SimError> {
    let (summary, log) = Simulation::new(setup).run()?;
    std::fs::create_dir_all(out)?;
    log.write_csv(out)?;
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    std::fs::write(out.join("summary.json"), json)?;
    Ok(summary)
}
