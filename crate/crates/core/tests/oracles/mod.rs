//! Brute-force reference models. Nothing here calls into the library; each
//! oracle recomputes its answer from the definitions with wide integers.

#![allow(dead_code)]

/// 2^48 as an unbounded-width integer.
pub const MODULUS: i128 = 1 << 48;

/// Position of `t_i` in the hyperperiod anchored at `t_anchor`, shifted by
/// `delta`: `((t_i − t_anchor) mod 2^48 + delta) mod h`.
pub fn modular_position(t_i: u64, t_anchor: u64, delta: i128, h: u64) -> u64 {
    let elapsed = (t_i as i128 - t_anchor as i128).rem_euclid(MODULUS);
    (elapsed + delta).rem_euclid(h as i128) as u64
}

/// Gate decision for a position: index of the `[start, end)` interval that
/// contains the position rounded down to the match granularity.
pub fn interval_membership(pos: u64, granularity: u64, open: &[(u64, u64)]) -> Option<usize> {
    let floor = pos / granularity * granularity;
    open.iter().position(|&(s, e)| s <= floor && floor < e)
}

/// The full gate oracle: modular position followed by interval membership.
pub fn modular_position_oracle(
    t_i: u64,
    t_anchor: u64,
    delta: i128,
    h: u64,
    granularity: u64,
    open: &[(u64, u64)],
) -> Option<usize> {
    interval_membership(modular_position(t_i, t_anchor, delta, h), granularity, open)
}

/// Whether a cyclic slice list is open at time `t`, found by walking the
/// slices from the start of the cycle.
pub fn slice_list_open(slices: &[(u64, bool)], t: u64) -> bool {
    let period: u64 = slices.iter().map(|s| s.0).sum();
    let mut at = t % period;
    for &(d, open) in slices {
        if at < d {
            return open;
        }
        at -= d;
    }
    unreachable!()
}

/// Smallest positive multiple of every period, by counting up in steps of
/// the largest period. Only for small inputs.
pub fn brute_lcm(periods: &[u64]) -> u64 {
    let step = *periods.iter().max().unwrap();
    let mut m = step;
    while !periods.iter().all(|p| m.is_multiple_of(*p)) {
        m += step;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleColor {
    Green,
    Yellow,
    Red,
}

/// Two-bucket token model advanced one nanosecond at a time. Buckets hold
/// nanobits (10⁻⁹ bit); a rate of r bit/s adds exactly r nanobits per ns.
/// Frames are `(arrival_ns, size_bytes, pre_yellow)`, sorted by arrival.
pub fn token_step_oracle(
    cir: u64,
    eir: u64,
    cbs: u64,
    ebs: u64,
    color_aware: bool,
    frames: &[(u64, u32, bool)],
) -> Vec<OracleColor> {
    const NANOBITS_PER_BYTE: u128 = 8 * 1_000_000_000;
    let cap_c = cbs as u128 * NANOBITS_PER_BYTE;
    let cap_e = ebs as u128 * NANOBITS_PER_BYTE;
    let (mut c, mut e) = (cap_c, cap_e);
    let mut now = frames.first().map_or(0, |f| f.0);
    let mut out = Vec::with_capacity(frames.len());
    for &(t, size, pre_yellow) in frames {
        while now < t {
            c = (c + cir as u128).min(cap_c);
            e = (e + eir as u128).min(cap_e);
            now += 1;
        }
        let need = size as u128 * NANOBITS_PER_BYTE;
        let green_ok = !(color_aware && pre_yellow);
        if green_ok && c >= need {
            c -= need;
            out.push(OracleColor::Green);
        } else if e >= need {
            e -= need;
            out.push(OracleColor::Yellow);
        } else {
            out.push(OracleColor::Red);
        }
    }
    out
}

/// Steady-state latency of a fluid FIFO fed above capacity: the queue
/// holds `queue_limit` bytes, so a frame waits for them to drain and then
/// for its own serialization. Below capacity the queue is empty.
pub fn fluid_queue_latency(offered_bps: u64, capacity_bps: u64, queue_limit: u64, frame_size: u32) -> f64 {
    let ser = frame_size as f64 * 8e9 / capacity_bps as f64;
    if offered_bps <= capacity_bps {
        ser
    } else {
        queue_limit as f64 * 8e9 / capacity_bps as f64 + ser
    }
}

/// Time-stepped fluid queue: integrates `dq/dt = offered − capacity` with
/// the queue clamped to `[0, queue_limit]` bytes, over `phases` of
/// `(duration_ns, offered_bps)`. Returns the queue level after each phase.
pub fn fluid_queue_levels(capacity_bps: u64, queue_limit: u64, phases: &[(u64, u64)]) -> Vec<f64> {
    let mut q = 0.0f64;
    let mut out = Vec::new();
    for &(d, offered) in phases {
        let net_bytes_per_ns = (offered as f64 - capacity_bps as f64) / 8e9;
        q = (q + net_bytes_per_ns * d as f64).clamp(0.0, queue_limit as f64);
        out.push(q);
    }
    out
}

/// ε₁ after `k` ticks whose spacing is `h + jitter`: the tick register has
/// moved `(k − 1)·(h + jitter)`, which is `(k − 1)·jitter` mod h.
pub fn epsilon1_accumulation(k: u64, jitter: i64, h: u64) -> u64 {
    ((k as i128 - 1) * jitter as i128).rem_euclid(h as i128) as u64
}
