//! Offline schedule compilation: per-port hyperperiods and the expansion of
//! stream GCLs into open gate-table entries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::GateId;
use crate::frame::PortId;
use crate::gate::{GateConfig, GateSlice, GateState};
use crate::time::{Nanos, TruncationWindow};

/// Gate-table entries available across all gates by default.
pub const DEFAULT_GATE_CAPACITY: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub duration: Nanos,
    pub state: GateState,
    #[serde(default)]
    pub ipv: Option<u8>,
    #[serde(default)]
    pub octet_budget: Option<u64>,
}

impl SliceSpec {
    pub fn open(duration: Nanos) -> Self {
        SliceSpec { duration, state: GateState::Open, ipv: None, octet_budget: None }
    }

    pub fn closed(duration: Nanos) -> Self {
        SliceSpec { duration, state: GateState::Closed, ipv: None, octet_budget: None }
    }
}

/// A cyclic stream gate control list. The period is the sum of the slices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamGclSpec {
    pub gate_id: GateId,
    pub slices: Vec<SliceSpec>,
}

impl StreamGclSpec {
    pub fn new(gate_id: GateId, slices: Vec<SliceSpec>) -> Self {
        StreamGclSpec { gate_id, slices }
    }

    pub fn period(&self) -> Nanos {
        self.slices.iter().map(|s| s.duration).sum()
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let gate = self.gate_id;
        if self.slices.is_empty() {
            return Err(ScheduleError::EmptyGcl { gate });
        }
        if let Some(i) = self.slices.iter().position(|s| s.duration == 0) {
            return Err(ScheduleError::ZeroDuration { gate, slice: i });
        }
        Ok(())
    }

    pub fn check_alignment(&self, window: TruncationWindow) -> Result<(), ScheduleError> {
        let mut at = 0;
        for s in &self.slices {
            at += s.duration;
            if !window.is_aligned(at) {
                return Err(ScheduleError::Unaligned { gate: self.gate_id, at, granularity: window.granularity() });
            }
        }
        Ok(())
    }
}

/// Admissible hyperperiod range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HyperperiodBounds {
    pub min: Nanos,
    pub max: Nanos,
}

impl HyperperiodBounds {
    /// From one match granule up to the full 20-bit match span.
    pub fn from_window(w: TruncationWindow) -> Self {
        HyperperiodBounds { min: w.granularity(), max: w.span() }
    }

    pub fn unbounded() -> Self {
        HyperperiodBounds { min: 1, max: u64::MAX }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("hyperperiod {} is outside [{min}, {max}] ns", h.map_or("overflows 64 bits".to_string(), |h| format!("{h} ns")))]
    HyperperiodOutOfRange { h: Option<Nanos>, min: Nanos, max: Nanos },
    #[error("gate table needs {total} open entries; capacity is {capacity}")]
    EntryBudgetExceeded { total: usize, capacity: usize },
    #[error("gate {gate}: empty gate control list")]
    EmptyGcl { gate: GateId },
    #[error("gate {gate}: slice {slice} has zero duration")]
    ZeroDuration { gate: GateId, slice: usize },
    #[error("gate {gate}: hyperperiod {h} is not a multiple of the period {period}")]
    NotMultiple { gate: GateId, h: Nanos, period: Nanos },
    #[error("gate {gate}: slice boundary at {at} ns is not a multiple of the {granularity} ns match granularity")]
    Unaligned { gate: GateId, at: Nanos, granularity: Nanos },
    #[error("no periods given")]
    NoPeriods,
    #[error("at most {max} ports may carry hyperperiod ticks, {count} requested")]
    TooManyTickPorts { count: usize, max: usize },
}

/// Least common multiple with overflow detection.
pub fn lcm_checked(periods: &[Nanos]) -> Option<Nanos> {
    periods.iter().try_fold(1u64, |acc, &p| {
        if p == 0 {
            return None;
        }
        (acc / acc.gcd(&p)).checked_mul(p)
    })
}

pub fn hyperperiod(periods: &[Nanos], bounds: HyperperiodBounds) -> Result<Nanos, ScheduleError> {
    if periods.is_empty() {
        return Err(ScheduleError::NoPeriods);
    }
    let out_of_range = |h| ScheduleError::HyperperiodOutOfRange { h, min: bounds.min, max: bounds.max };
    let h = lcm_checked(periods).ok_or(out_of_range(None))?;
    if h < bounds.min || h > bounds.max {
        return Err(out_of_range(Some(h)));
    }
    Ok(h)
}

/// Repeats the GCL over `h`, keeping open slices as absolute `[start, end)`
/// entries. Adjacent open slices merge when they carry the same IPV and
/// neither has an octet budget.
pub fn expand(spec: &StreamGclSpec, h: Nanos) -> Result<Vec<GateSlice>, ScheduleError> {
    spec.validate()?;
    let period = spec.period();
    if h == 0 || !h.is_multiple_of(period) {
        return Err(ScheduleError::NotMultiple { gate: spec.gate_id, h, period });
    }
    let mut out: Vec<GateSlice> = Vec::new();
    let mut at = 0;
    for _ in 0..h / period {
        for s in &spec.slices {
            let start = at;
            at += s.duration;
            if s.state == GateState::Closed {
                continue;
            }
            if let Some(last) = out.last_mut() {
                let mergeable =
                    last.end == start && last.ipv == s.ipv && last.octet_budget.is_none() && s.octet_budget.is_none();
                if mergeable {
                    last.end = at;
                    continue;
                }
            }
            out.push(GateSlice { start, end: at, ipv: s.ipv, octet_budget: s.octet_budget });
        }
    }
    Ok(out)
}

/// A gate as configured: its GCL plus placement and closure flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateSpec {
    pub gcl: StreamGclSpec,
    pub port: PortId,
    pub invalid_rx: bool,
    pub octets_exceeded: bool,
    /// Budget applied to open slices that do not set their own.
    pub octet_budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledSchedule {
    pub window: TruncationWindow,
    /// Hyperperiod of every port that hosts at least one gate.
    pub ports: BTreeMap<PortId, Nanos>,
    pub gates: Vec<GateConfig>,
    pub capacity: usize,
}

/// Maximum number of ports with a periodic tick.
pub const MAX_TICK_PORTS: usize = 8;

/// Compiles all gates, collecting every error found.
pub fn compile(
    gates: &[GateSpec],
    window: TruncationWindow,
    capacity: usize,
) -> Result<CompiledSchedule, Vec<ScheduleError>> {
    let mut errors = Vec::new();
    let mut periods: BTreeMap<PortId, Vec<Nanos>> = BTreeMap::new();
    for g in gates {
        match g.gcl.validate().and_then(|_| g.gcl.check_alignment(window)) {
            Ok(()) => periods.entry(g.port).or_default().push(g.gcl.period()),
            Err(e) => errors.push(e),
        }
    }
    if periods.len() > MAX_TICK_PORTS {
        errors.push(ScheduleError::TooManyTickPorts { count: periods.len(), max: MAX_TICK_PORTS });
    }
    let bounds = HyperperiodBounds::from_window(window);
    let mut ports = BTreeMap::new();
    for (port, ps) in &periods {
        match hyperperiod(ps, bounds) {
            Ok(h) => {
                ports.insert(*port, h);
            }
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let mut compiled = Vec::with_capacity(gates.len());
    for g in gates {
        let h = ports[&g.port];
        let mut entries = expand(&g.gcl, h).map_err(|e| vec![e])?;
        for e in &mut entries {
            e.octet_budget = e.octet_budget.or(g.octet_budget);
        }
        compiled.push(GateConfig {
            gate_id: g.gcl.gate_id,
            port: g.port,
            hyperperiod: h,
            open_entries: entries,
            invalid_rx: g.invalid_rx,
            octets_exceeded: g.octets_exceeded,
        });
    }
    let total: usize = compiled.iter().map(|g| g.open_entries.len()).sum();
    if total > capacity {
        return Err(vec![ScheduleError::EntryBudgetExceeded { total, capacity }]);
    }
    Ok(CompiledSchedule { window, ports, gates: compiled, capacity })
}

impl CompiledSchedule {
    pub fn total_entries(&self) -> usize {
        self.gates.iter().map(|g| g.open_entries.len()).sum()
    }

    /// Human-readable compilation report.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let w = self.window;
        let _ = writeln!(
            s,
            "match window: bits {}..{} (granularity {} ns, span {} ns)",
            w.low_bit(),
            w.low_bit() + TruncationWindow::WIDTH - 1,
            w.granularity(),
            w.span()
        );
        for (port, h) in &self.ports {
            let _ = writeln!(s, "port {port}: hyperperiod {h} ns");
        }
        for g in &self.gates {
            let open: Nanos = g.open_entries.iter().map(|e| e.end - e.start).sum();
            let _ = writeln!(
                s,
                "gate {} (port {}): {} open entries, open {} of {} ns{}{}",
                g.gate_id,
                g.port,
                g.open_entries.len(),
                open,
                g.hyperperiod,
                if g.invalid_rx { ", invalid-rx close" } else { "" },
                if g.octets_exceeded { ", octets-exceeded close" } else { "" },
            );
            for e in &g.open_entries {
                let _ = write!(s, "  [{}, {})", e.start, e.end);
                if let Some(ipv) = e.ipv {
                    let _ = write!(s, " ipv={ipv}");
                }
                if let Some(b) = e.octet_budget {
                    let _ = write!(s, " budget={b}B");
                }
                s.push('\n');
            }
        }
        let _ = writeln!(s, "gate table: {} / {} entries", self.total_entries(), self.capacity);
        s
    }
}
