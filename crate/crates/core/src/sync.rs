//! Control-plane synchronization of the per-port Δ offsets.
//!
//! Δ = δ + ε₁ + ε₂, where δ is the known control/data-plane clock offset,
//! ε₁ the drift accumulated by a port's tick generator and ε₂ the offset of
//! the port's first tick from the reference port's first tick.

use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeError, BridgeState};
use crate::frame::PortId;
use crate::gate::SignedDelta;
use crate::time::{signed_wrap_diff, wrap_diff, Nanos, Timestamp48};

pub const DEFAULT_POLL_INTERVAL: Nanos = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncConfig {
    pub enabled: bool,
    /// δ in nanoseconds.
    pub delta_net: i64,
    pub poll_interval: Nanos,
    /// Port whose schedule the others align to; `None` disables ε₂.
    pub reference_port: Option<PortId>,
    /// Time of the first poll; defaults to one poll interval.
    pub first_poll: Option<Nanos>,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            enabled: false,
            delta_net: 0,
            poll_interval: DEFAULT_POLL_INTERVAL,
            reference_port: None,
            first_poll: None,
        }
    }
}

impl SyncConfig {
    pub fn first_poll_at(&self) -> Nanos {
        self.first_poll.unwrap_or(self.poll_interval)
    }
}

/// Accumulated tick drift of a port, in `[0, h)`.
pub fn epsilon1(t_jh: Timestamp48, t_1h: Timestamp48, h: Nanos) -> Nanos {
    wrap_diff(t_jh, t_1h) % h
}

/// Signed first-tick offset of a port against the reference, taking the
/// shorter way around the timestamp circle.
pub fn epsilon2(t_1h_port: Timestamp48, t_1h_ref: Timestamp48) -> i64 {
    signed_wrap_diff(t_1h_port, t_1h_ref)
}

/// δ + ε₁ + ε₂ reduced to a sign/magnitude pair below `h`.
pub fn compose_delta(delta_net: i64, eps1: Nanos, eps2: i64, h: Nanos) -> SignedDelta {
    let sum = delta_net as i128 + eps1 as i128 + eps2 as i128;
    let reduced = sum % h as i128;
    SignedDelta::reduce(reduced as i64, h)
}

/// One port's values at a poll.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SyncSample {
    pub time: Nanos,
    pub port: PortId,
    pub eps1: Nanos,
    pub eps2: i64,
    pub delta: i64,
}

/// Computes and pushes Δ for every port that has ticked. Ports whose
/// first tick (or the reference's) has not fired yet are skipped.
pub fn poll(cfg: &SyncConfig, bridge: &mut BridgeState, now: Nanos) -> Result<Vec<SyncSample>, BridgeError> {
    let reference = cfg.reference_port.and_then(|r| bridge.port(r)).map(|p| p.t_1h);
    let plan: Vec<_> = bridge
        .ports()
        .filter_map(|p| {
            let t_1h = p.t_1h?;
            let h = p.cfg.hyperperiod;
            let eps1 = epsilon1(p.t_jh, t_1h, h);
            let eps2 = match reference {
                Some(Some(r)) if Some(p.cfg.port_id) != cfg.reference_port => epsilon2(t_1h, r),
                Some(None) => return None,
                _ => 0,
            };
            Some((p.cfg.port_id, eps1, eps2, compose_delta(cfg.delta_net, eps1, eps2, h)))
        })
        .collect();
    let mut out = Vec::with_capacity(plan.len());
    for (port, eps1, eps2, delta) in plan {
        bridge.set_delta(port, delta.as_i64())?;
        out.push(SyncSample { time: now, port, eps1, eps2, delta: delta.as_i64() });
    }
    Ok(out)
}
