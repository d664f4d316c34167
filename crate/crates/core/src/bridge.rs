//! The PSFP switch pipeline.
//!
//! A VLAN-tagged frame crosses the pipeline twice. The first pass reads the
//! port's hyperperiod registers, computes the Δ-adjusted relative position
//! and attaches it in a recirculation header. The second pass runs the
//! stream filter, the stream gate and the flow meter in that order. Untagged
//! frames and filter misses take the best-effort path.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{FilterError, FilterTable, GateId, MeterId, SduDecision, StreamHandle};
use crate::frame::{Frame, PortId, RecircHeader};
use crate::gate::{apply_delta, relative_position_diag, GateConfig, GateError, GateVerdict, SignedDelta, StreamGate};
use crate::meter::{Color, FlowMeter, MeterAction, MeterConfigError, TrTcmConfig};
use crate::schedule::MAX_TICK_PORTS;
use crate::time::{Nanos, Timestamp48, TruncationWindow};

/// Default constant recirculation latency.
pub const DEFAULT_RECIRC_DELAY: Nanos = 1_000;

/// Perturbation of a port's tick generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TickJitter {
    /// Added once per elapsed tick, so it accumulates.
    pub drift_ns_per_tick: i64,
    /// Upper bound of a uniform, non-accumulating per-tick delay.
    pub random_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortConfig {
    pub port_id: PortId,
    pub hyperperiod: Nanos,
    /// Simulation time of the first tick.
    pub tick_phase: Nanos,
    pub recirc_delay: Nanos,
    pub delta: SignedDelta,
    pub jitter: TickJitter,
}

impl PortConfig {
    pub fn new(port_id: PortId, hyperperiod: Nanos) -> Self {
        PortConfig {
            port_id,
            hyperperiod,
            tick_phase: 0,
            recirc_delay: DEFAULT_RECIRC_DELAY,
            delta: SignedDelta::ZERO,
            jitter: TickJitter::default(),
        }
    }
}

/// Simulation times of the ticks of `port` in `[0, until)`.
pub fn schedule_ticks(port: &PortConfig, until: Nanos, rng: &mut ChaCha8Rng) -> Vec<Nanos> {
    let mut out = Vec::new();
    let h = port.hyperperiod as i128;
    for k in 0.. {
        let mut t = port.tick_phase as i128 + k as i128 * (h + port.jitter.drift_ns_per_tick as i128);
        if port.jitter.random_ns > 0 {
            t += rng.gen_range(0..=port.jitter.random_ns) as i128;
        }
        if t >= until as i128 {
            break;
        }
        if t >= 0 {
            out.push(t as Nanos);
        }
        if h + port.jitter.drift_ns_per_tick as i128 <= 0 {
            break;
        }
    }
    out
}

/// Hyperperiod registers of one port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortState {
    pub cfg: PortConfig,
    /// Timestamp of the first tick; `None` until it fires.
    pub t_1h: Option<Timestamp48>,
    /// Timestamp of the latest tick, zero before the first.
    pub t_jh: Timestamp48,
    pub ticks: u64,
    pub delta: SignedDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MaxSdu,
    StreamBlocked,
    GateClosed,
    GatePermanentlyClosed,
    OctetsExceeded,
    MeterRed,
    MeterBlocked,
    Yellow,
}

impl DropReason {
    /// In chain order.
    pub const ALL: [DropReason; 8] = [
        DropReason::MaxSdu,
        DropReason::StreamBlocked,
        DropReason::GateClosed,
        DropReason::GatePermanentlyClosed,
        DropReason::OctetsExceeded,
        DropReason::MeterRed,
        DropReason::MeterBlocked,
        DropReason::Yellow,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            DropReason::MaxSdu => "max_sdu",
            DropReason::StreamBlocked => "stream_blocked",
            DropReason::GateClosed => "gate_closed",
            DropReason::GatePermanentlyClosed => "gate_permanently_closed",
            DropReason::OctetsExceeded => "octets_exceeded",
            DropReason::MeterRed => "meter_red",
            DropReason::MeterBlocked => "meter_blocked",
            DropReason::Yellow => "yellow",
        }
    }

    pub const fn index(self) -> usize {
        self as usize
    }

    /// Whether the drop happened at or after the flow meter.
    pub const fn is_meter_drop(self) -> bool {
        matches!(self, DropReason::MeterRed | DropReason::MeterBlocked | DropReason::Yellow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Passed all PSFP conditions. `queue` is the IPV if the slice sets one,
    /// else the PCP. `color` is green for streams without a meter.
    Forward { queue: u8, color: Color },
    Drop(DropReason),
    BestEffort { queue: u8 },
}

impl Outcome {
    pub fn is_forwarded(self) -> bool {
        !matches!(self, Outcome::Drop(_))
    }

    /// Color assigned to a metered PSFP frame, if it reached the meter stage.
    pub fn color(self) -> Option<Color> {
        match self {
            Outcome::Forward { color, .. } => Some(color),
            Outcome::Drop(r) if r.is_meter_drop() => Some(Color::Red),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Forward { .. } => "forward",
            Outcome::Drop(_) => "drop",
            Outcome::BestEffort { .. } => "best_effort",
        }
    }
}

/// Result of the first pipeline pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FirstPass {
    /// The frame comes back after `delay` with its header attached.
    Recirculate { frame: Frame, delay: Nanos },
    Done(Outcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: Timestamp48,
    pub port: PortId,
    pub stream_handle: Option<StreamHandle>,
    pub outcome: Outcome,
    pub t_rel_adj: Option<Nanos>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub ingested: u64,
    pub forwarded: u64,
    pub best_effort: u64,
    pub dropped: [u64; 8],
    pub in_flight: u64,
    /// Bytes sent over the recirculation leg, header included.
    pub recirc_leg_bytes: u64,
    pub forwarded_bytes: u64,
    pub ticks: u64,
    /// Arrivals at least one hyperperiod after the last tick.
    pub position_fallbacks: u64,
}

impl Counters {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.iter().sum()
    }

    pub fn dropped(&self, r: DropReason) -> u64 {
        self.dropped[r.index()]
    }

    /// ingested = forwarded + best effort + dropped + in flight.
    pub fn is_conserved(&self) -> bool {
        self.ingested == self.forwarded + self.best_effort + self.dropped_total() + self.in_flight
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BridgeError {
    #[error("at most {max} ports may carry hyperperiod ticks, {count} configured")]
    TooManyTickPorts { count: usize, max: usize },
    #[error("port {0} configured twice")]
    DuplicatePort(PortId),
    #[error("port {0} has no hyperperiod tick configured")]
    UnknownPort(PortId),
    #[error("port {port}: hyperperiod must be positive")]
    ZeroHyperperiod { port: PortId },
    #[error("gate {0} configured twice")]
    DuplicateGate(GateId),
    #[error("meter {0} configured twice")]
    DuplicateMeter(MeterId),
    #[error("gate {gate}: hyperperiod {gate_h} ns must divide its port {port} hyperperiod {port_h} ns")]
    GatePeriodMismatch { gate: GateId, port: PortId, gate_h: Nanos, port_h: Nanos },
    #[error("stream handle {handle} references unknown gate {gate}")]
    UnknownGate { handle: StreamHandle, gate: GateId },
    #[error("stream handle {handle} references unknown meter {meter}")]
    UnknownMeter { handle: StreamHandle, meter: MeterId },
    #[error("no gate {0}")]
    NoSuchGate(GateId),
    #[error("no meter {0}")]
    NoSuchMeter(MeterId),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Meter(#[from] MeterConfigError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

#[derive(Debug, Clone)]
pub struct BridgeState {
    window: TruncationWindow,
    ports: BTreeMap<PortId, PortState>,
    filter: FilterTable,
    gates: BTreeMap<GateId, StreamGate>,
    meters: BTreeMap<MeterId, FlowMeter>,
    counters: Counters,
    trace: Option<Vec<TraceRecord>>,
}

impl BridgeState {
    pub fn new(
        window: TruncationWindow,
        ports: Vec<PortConfig>,
        filter: FilterTable,
        gates: Vec<GateConfig>,
        meters: Vec<(MeterId, TrTcmConfig)>,
    ) -> Result<Self, BridgeError> {
        if ports.len() > MAX_TICK_PORTS {
            return Err(BridgeError::TooManyTickPorts { count: ports.len(), max: MAX_TICK_PORTS });
        }
        let mut port_map = BTreeMap::new();
        for cfg in ports {
            let id = cfg.port_id;
            if cfg.hyperperiod == 0 {
                return Err(BridgeError::ZeroHyperperiod { port: id });
            }
            let delta = cfg.delta;
            let state = PortState { cfg, t_1h: None, t_jh: Timestamp48::ZERO, ticks: 0, delta };
            if port_map.insert(id, state).is_some() {
                return Err(BridgeError::DuplicatePort(id));
            }
        }
        let mut gate_map = BTreeMap::new();
        for cfg in gates {
            let id = cfg.gate_id;
            let port = port_map.get(&cfg.port).ok_or(BridgeError::UnknownPort(cfg.port))?;
            let port_h = port.cfg.hyperperiod;
            if cfg.hyperperiod == 0 || port_h % cfg.hyperperiod != 0 {
                return Err(BridgeError::GatePeriodMismatch { gate: id, port: cfg.port, gate_h: cfg.hyperperiod, port_h });
            }
            if gate_map.insert(id, StreamGate::new(cfg, window)?).is_some() {
                return Err(BridgeError::DuplicateGate(id));
            }
        }
        let mut meter_map = BTreeMap::new();
        for (id, cfg) in meters {
            if meter_map.insert(id, FlowMeter::new(id, cfg)).is_some() {
                return Err(BridgeError::DuplicateMeter(id));
            }
        }
        for e in filter.entries() {
            let handle = e.stream_handle;
            if let Some(gate) = e.gate_id.filter(|g| !gate_map.contains_key(g)) {
                return Err(BridgeError::UnknownGate { handle, gate });
            }
            if let Some(meter) = e.meter_id.filter(|m| !meter_map.contains_key(m)) {
                return Err(BridgeError::UnknownMeter { handle, meter });
            }
        }
        Ok(BridgeState {
            window,
            ports: port_map,
            filter,
            gates: gate_map,
            meters: meter_map,
            counters: Counters::default(),
            trace: None,
        })
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn window(&self) -> TruncationWindow {
        self.window
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn ports(&self) -> impl Iterator<Item = &PortState> {
        self.ports.values()
    }

    pub fn port(&self, id: PortId) -> Option<&PortState> {
        self.ports.get(&id)
    }

    pub fn filter(&self) -> &FilterTable {
        &self.filter
    }

    pub fn gate(&self, id: GateId) -> Option<&StreamGate> {
        self.gates.get(&id)
    }

    pub fn meter(&self, id: MeterId) -> Option<&FlowMeter> {
        self.meters.get(&id)
    }

    /// Hyperperiod tick on `port`: updates the tick registers and refills
    /// the octet budgets of the port's gates.
    pub fn tick(&mut self, port: PortId, now: Timestamp48) -> Result<(), BridgeError> {
        let p = self.ports.get_mut(&port).ok_or(BridgeError::UnknownPort(port))?;
        p.t_1h.get_or_insert(now);
        p.t_jh = now;
        p.ticks += 1;
        self.counters.ticks += 1;
        for g in self.gates.values_mut().filter(|g| g.port() == port) {
            g.on_tick();
        }
        Ok(())
    }

    /// Replaces the port's Δ in one step, reduced modulo its hyperperiod.
    pub fn set_delta(&mut self, port: PortId, delta_ns: i64) -> Result<SignedDelta, BridgeError> {
        let p = self.ports.get_mut(&port).ok_or(BridgeError::UnknownPort(port))?;
        p.delta = SignedDelta::reduce(delta_ns, p.cfg.hyperperiod);
        Ok(p.delta)
    }

    fn meter_mut(&mut self, id: MeterId) -> Result<&mut FlowMeter, BridgeError> {
        self.meters.get_mut(&id).ok_or(BridgeError::NoSuchMeter(id))
    }

    pub fn set_drop_on_yellow(&mut self, meter: MeterId, on: bool) -> Result<(), BridgeError> {
        self.meter_mut(meter)?.config_mut().drop_on_yellow = on;
        Ok(())
    }

    pub fn set_mark_all_red(&mut self, meter: MeterId, on: bool) -> Result<(), BridgeError> {
        self.meter_mut(meter)?.config_mut().mark_all_red = on;
        Ok(())
    }

    pub fn reset_meter(&mut self, meter: MeterId) -> Result<(), BridgeError> {
        self.meter_mut(meter)?.reset();
        Ok(())
    }

    pub fn reset_gate(&mut self, gate: GateId) -> Result<(), BridgeError> {
        self.gates.get_mut(&gate).ok_or(BridgeError::NoSuchGate(gate))?.reset();
        Ok(())
    }

    pub fn reset_stream(&mut self, handle: StreamHandle) -> Result<(), BridgeError> {
        Ok(self.filter.reset_stream(handle)?)
    }

    fn record(&mut self, frame: &Frame, handle: Option<StreamHandle>, outcome: Outcome) {
        match outcome {
            Outcome::Forward { .. } => {
                self.counters.forwarded += 1;
                self.counters.forwarded_bytes += frame.size as u64;
            }
            Outcome::BestEffort { .. } => self.counters.best_effort += 1,
            Outcome::Drop(r) => self.counters.dropped[r.index()] += 1,
        }
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRecord {
                time: frame.arrival,
                port: frame.ingress_port,
                stream_handle: handle,
                outcome,
                t_rel_adj: frame.recirc.map(|r| r.t_rel_adj),
            });
        }
    }

    /// First pass. Untagged frames leave on the best-effort path; tagged
    /// frames get their adjusted relative position and recirculate.
    pub fn ingress(&mut self, mut frame: Frame) -> FirstPass {
        self.counters.ingested += 1;
        if frame.vlan.is_none() {
            let outcome = Outcome::BestEffort { queue: frame.pcp() };
            self.record(&frame, None, outcome);
            return FirstPass::Done(outcome);
        }
        let (t_rel_adj, delay) = match self.ports.get(&frame.ingress_port) {
            Some(p) => {
                let h = p.cfg.hyperperiod;
                let (t_rel, fallback) = relative_position_diag(frame.arrival, p.t_jh, h);
                self.counters.position_fallbacks += fallback as u64;
                (apply_delta(t_rel, p.delta, h), p.cfg.recirc_delay)
            }
            None => (0, DEFAULT_RECIRC_DELAY),
        };
        frame.recirc = Some(RecircHeader { frame_size: frame.size, t_rel_adj });
        self.counters.in_flight += 1;
        self.counters.recirc_leg_bytes += frame.wire_size() as u64;
        FirstPass::Recirculate { frame, delay }
    }

    /// Second pass: filter, gate and meter. `now` is the second-pass time.
    /// Returns the matched stream handle, if any, with the outcome.
    pub fn recirculated(&mut self, frame: &Frame, now: Timestamp48) -> (Option<StreamHandle>, Outcome) {
        let hdr = frame.recirc.expect("second pass requires a recirculation header");
        self.counters.in_flight -= 1;
        let (handle, outcome) = self.psfp(frame, hdr, now);
        self.record(frame, handle, outcome);
        (handle, outcome)
    }

    fn psfp(&mut self, frame: &Frame, hdr: RecircHeader, now: Timestamp48) -> (Option<StreamHandle>, Outcome) {
        let pcp = frame.pcp();
        let Some(c) = self.filter.classify(frame) else {
            return (None, Outcome::BestEffort { queue: pcp });
        };
        let handle = Some(c.stream_handle);
        let size = hdr.frame_size;
        match self.filter.check_sdu(&c, size) {
            SduDecision::Pass => {}
            SduDecision::Drop | SduDecision::DropAndBlock => return (handle, Outcome::Drop(DropReason::MaxSdu)),
            SduDecision::Blocked => return (handle, Outcome::Drop(DropReason::StreamBlocked)),
        }
        let mut ipv = None;
        if let Some(gate) = c.gate_id.and_then(|g| self.gates.get_mut(&g)) {
            match gate.enforce(hdr.t_rel_adj % gate.hyperperiod(), size) {
                GateVerdict::Pass { ipv: v } => ipv = v,
                GateVerdict::Closed => return (handle, Outcome::Drop(DropReason::GateClosed)),
                GateVerdict::PermanentlyClosed => return (handle, Outcome::Drop(DropReason::GatePermanentlyClosed)),
                GateVerdict::OctetsExceeded => return (handle, Outcome::Drop(DropReason::OctetsExceeded)),
            }
        }
        let queue = ipv.unwrap_or(pcp);
        let Some(meter) = c.meter_id.and_then(|m| self.meters.get_mut(&m)) else {
            return (handle, Outcome::Forward { queue, color: Color::Green });
        };
        let v = meter.police(size, frame.dei(), now);
        let outcome = match v.action {
            MeterAction::Forward | MeterAction::ForwardWithDei => Outcome::Forward { queue, color: v.color },
            MeterAction::DropRed => Outcome::Drop(DropReason::MeterRed),
            MeterAction::DropBlocked => Outcome::Drop(DropReason::MeterBlocked),
            MeterAction::DropYellow => Outcome::Drop(DropReason::Yellow),
        };
        (handle, outcome)
    }

    /// Both passes back to back, for callers without an event loop.
    pub fn process(&mut self, frame: Frame) -> Outcome {
        match self.ingress(frame) {
            FirstPass::Done(o) => o,
            FirstPass::Recirculate { frame, delay } => {
                let now = frame.arrival.wrapping_add(delay);
                self.recirculated(&frame, now).1
            }
        }
    }
}
