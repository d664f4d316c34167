//! Time-based metering: relative hyperperiod position, Δ adjustment and the
//! stream gate range match.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::GateId;
use crate::frame::PortId;
use crate::time::{wrap_diff, Nanos, Timestamp48, TruncationWindow};

/// Offset of a frame within its port's hyperperiod, without a fallback flag.
pub fn relative_position(t_i: Timestamp48, t_jh: Timestamp48, h: Nanos) -> Nanos {
    relative_position_diag(t_i, t_jh, h).0
}

/// Like [`relative_position`], also reporting whether the elapsed time since
/// the last tick was at least `h` and had to be reduced modulo `h`.
pub fn relative_position_diag(t_i: Timestamp48, t_jh: Timestamp48, h: Nanos) -> (Nanos, bool) {
    let d = wrap_diff(t_i, t_jh);
    if d < h {
        (d, false)
    } else {
        (d % h, true)
    }
}

/// A signed Δ split into sign and magnitude, the form the data plane uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SignedDelta {
    pub negative: bool,
    pub magnitude: Nanos,
}

impl SignedDelta {
    pub const ZERO: SignedDelta = SignedDelta { negative: false, magnitude: 0 };

    /// Reduces `|delta|` modulo `h`, keeping the sign.
    pub fn reduce(delta: i64, h: Nanos) -> Self {
        assert!(h > 0, "hyperperiod must be positive");
        let magnitude = delta.unsigned_abs() % h;
        SignedDelta { negative: delta < 0 && magnitude != 0, magnitude }
    }

    pub fn as_i64(self) -> i64 {
        if self.negative {
            -(self.magnitude as i64)
        } else {
            self.magnitude as i64
        }
    }
}

/// Adds Δ to a relative position, correcting overflow past `h` and
/// underflow below zero branch-wise. Requires `t_rel < h` and `|Δ| < h`.
pub fn apply_delta(t_rel: Nanos, delta: SignedDelta, h: Nanos) -> Nanos {
    debug_assert!(t_rel < h && delta.magnitude < h);
    if delta.negative {
        if delta.magnitude > t_rel {
            h - delta.magnitude + t_rel
        } else {
            t_rel - delta.magnitude
        }
    } else {
        let shifted = t_rel + delta.magnitude;
        if shifted >= h {
            shifted - h
        } else {
            shifted
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateState {
    Open,
    Closed,
}

/// An open interval `[start, end)` of the hyperperiod.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSlice {
    pub start: Nanos,
    pub end: Nanos,
    pub ipv: Option<u8>,
    /// Bytes admitted in this slice per hyperperiod.
    pub octet_budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateConfig {
    pub gate_id: GateId,
    pub port: PortId,
    pub hyperperiod: Nanos,
    pub open_entries: Vec<GateSlice>,
    /// Close the gate permanently on any arrival in a closed slice.
    pub invalid_rx: bool,
    /// Close the gate permanently when a slice's octet budget is exceeded.
    pub octets_exceeded: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GateError {
    #[error("gate {gate}: hyperperiod must be positive")]
    ZeroHyperperiod { gate: GateId },
    #[error("gate {gate}: entry [{start}, {end}) is empty or extends past the hyperperiod {h}")]
    BadEntry { gate: GateId, start: Nanos, end: Nanos, h: Nanos },
    #[error("gate {gate}: entries overlap or are unsorted at {start}")]
    Overlap { gate: GateId, start: Nanos },
    #[error("gate {gate}: boundary {at} is not a multiple of the {granularity} ns match granularity")]
    Unaligned { gate: GateId, at: Nanos, granularity: Nanos },
    #[error("gate {gate}: hyperperiod {h} exceeds the {span} ns match span")]
    SpanExceeded { gate: GateId, h: Nanos, span: Nanos },
    #[error("gate {gate}: IPV {ipv} exceeds 3 bits")]
    BadIpv { gate: GateId, ipv: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Open { ipv: Option<u8> },
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateVerdict {
    Pass { ipv: Option<u8> },
    Closed,
    PermanentlyClosed,
    OctetsExceeded,
}

#[derive(Debug, Clone)]
pub struct StreamGate {
    cfg: GateConfig,
    window: TruncationWindow,
    /// Truncated `[start, end)` keys of each open entry.
    keys: Vec<(u32, u32)>,
    remaining: Vec<Option<u64>>,
    permanently_closed: bool,
}

impl StreamGate {
    pub fn new(cfg: GateConfig, window: TruncationWindow) -> Result<Self, GateError> {
        let gate = cfg.gate_id;
        let h = cfg.hyperperiod;
        if h == 0 {
            return Err(GateError::ZeroHyperperiod { gate });
        }
        if h > window.span() {
            return Err(GateError::SpanExceeded { gate, h, span: window.span() });
        }
        let mut prev_end = 0;
        for (i, e) in cfg.open_entries.iter().enumerate() {
            if e.start >= e.end || e.end > h {
                return Err(GateError::BadEntry { gate, start: e.start, end: e.end, h });
            }
            if i > 0 && e.start < prev_end {
                return Err(GateError::Overlap { gate, start: e.start });
            }
            for at in [e.start, e.end] {
                if !window.is_aligned(at) {
                    return Err(GateError::Unaligned { gate, at, granularity: window.granularity() });
                }
            }
            if let Some(ipv) = e.ipv.filter(|v| *v > 7) {
                return Err(GateError::BadIpv { gate, ipv });
            }
            prev_end = e.end;
        }
        let low = window.low_bit();
        let keys = cfg
            .open_entries
            .iter()
            .map(|e| ((e.start >> low) as u32, (e.end >> low) as u32))
            .collect();
        let remaining = cfg.open_entries.iter().map(|e| e.octet_budget).collect();
        Ok(StreamGate { cfg, window, keys, remaining, permanently_closed: false })
    }

    pub fn config(&self) -> &GateConfig {
        &self.cfg
    }

    pub fn id(&self) -> GateId {
        self.cfg.gate_id
    }

    pub fn port(&self) -> PortId {
        self.cfg.port
    }

    pub fn hyperperiod(&self) -> Nanos {
        self.cfg.hyperperiod
    }

    pub fn is_permanently_closed(&self) -> bool {
        self.permanently_closed
    }

    pub fn remaining_octets(&self) -> &[Option<u64>] {
        &self.remaining
    }

    /// Index of the open entry containing `t_rel_adj` at match granularity.
    pub fn lookup(&self, t_rel_adj: Nanos) -> Option<usize> {
        let key = self.window.truncate_nanos(t_rel_adj);
        let i = self.keys.partition_point(|(start, _)| *start <= key);
        (i > 0 && key < self.keys[i - 1].1).then(|| i - 1)
    }

    /// The time-based decision alone; a permanently closed gate is closed.
    pub fn gate_decision(&self, t_rel_adj: Nanos) -> GateDecision {
        match self.lookup(t_rel_adj) {
            Some(i) if !self.permanently_closed => GateDecision::Open { ipv: self.cfg.open_entries[i].ipv },
            _ => GateDecision::Closed,
        }
    }

    /// Evaluates gate conditions in order (open slice, not permanently
    /// closed, octet budget) and updates the gate registers.
    pub fn enforce(&mut self, t_rel_adj: Nanos, frame_size: u32) -> GateVerdict {
        let Some(i) = self.lookup(t_rel_adj) else {
            if self.cfg.invalid_rx {
                self.permanently_closed = true;
            }
            return GateVerdict::Closed;
        };
        if self.permanently_closed {
            return GateVerdict::PermanentlyClosed;
        }
        if self.cfg.octets_exceeded {
            if let Some(left) = self.remaining[i] {
                match left.checked_sub(frame_size as u64) {
                    Some(rest) => self.remaining[i] = Some(rest),
                    None => {
                        self.permanently_closed = true;
                        return GateVerdict::OctetsExceeded;
                    }
                }
            }
        }
        GateVerdict::Pass { ipv: self.cfg.open_entries[i].ipv }
    }

    /// Hyperperiod tick: refill every octet register to its budget.
    pub fn on_tick(&mut self) {
        for (r, e) in self.remaining.iter_mut().zip(&self.cfg.open_entries) {
            *r = e.octet_budget;
        }
    }

    /// Control-plane reset of the permanent-close flag.
    pub fn reset(&mut self) {
        self.permanently_closed = false;
    }
}
