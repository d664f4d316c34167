//! 48-bit wrap-around timestamps and the range-match key truncation.
//!
//! All time is integer nanoseconds. Durations are plain `u64` nanosecond
//! counts ([`Nanos`]); only data-plane timestamps carry the 48-bit wrap.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A duration or offset in nanoseconds.
pub type Nanos = u64;

pub const TIMESTAMP_BITS: u32 = 48;
/// 2^48, the modulus of the data-plane clock.
pub const TIMESTAMP_MODULUS: u64 = 1 << TIMESTAMP_BITS;
/// Largest representable timestamp, 2^48 - 1 ns.
pub const TIMESTAMP_MAX: u64 = TIMESTAMP_MODULUS - 1;

/// A data-plane ingress timestamp in nanoseconds, always `< 2^48`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp48(u64);

impl Timestamp48 {
    pub const ZERO: Timestamp48 = Timestamp48(0);
    pub const MAX: Timestamp48 = Timestamp48(TIMESTAMP_MAX);

    /// Reduces `ns` modulo 2^48.
    pub const fn new(ns: u64) -> Self {
        Timestamp48(ns & TIMESTAMP_MAX)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub const fn wrapping_add(self, d: Nanos) -> Self {
        Timestamp48::new(self.0.wrapping_add(d))
    }

    pub const fn wrapping_sub(self, d: Nanos) -> Self {
        Timestamp48::new(self.0.wrapping_sub(d))
    }

    /// Adds a signed offset modulo 2^48.
    pub const fn wrapping_offset(self, d: i64) -> Self {
        Timestamp48::new(self.0.wrapping_add(d as u64))
    }
}

impl From<u64> for Timestamp48 {
    fn from(ns: u64) -> Self {
        Timestamp48::new(ns)
    }
}

impl fmt::Display for Timestamp48 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// `(a - b) mod 2^48`: the elapsed time from `b` to `a` on the wrapping clock.
pub const fn wrap_diff(a: Timestamp48, b: Timestamp48) -> Nanos {
    if a.0 >= b.0 {
        a.0 - b.0
    } else {
        TIMESTAMP_MODULUS - b.0 + a.0
    }
}

/// Signed shortest-arc difference `a - b` on the 2^48 circle.
///
/// Ties (exactly half the circle apart) resolve to the negative value.
pub const fn signed_wrap_diff(a: Timestamp48, b: Timestamp48) -> i64 {
    let d = wrap_diff(a, b);
    if d < TIMESTAMP_MODULUS / 2 {
        d as i64
    } else {
        d as i64 - TIMESTAMP_MODULUS as i64
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("truncation window low bit {0} out of range 0..={max}", max = TruncationWindow::MAX_LOW_BIT)]
pub struct InvalidWindow(pub u32);

/// Selects the 20 contiguous timestamp bits used as the gate range-match key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct TruncationWindow {
    low_bit: u32,
}

impl TruncationWindow {
    pub const WIDTH: u32 = 20;
    pub const MAX_LOW_BIT: u32 = TIMESTAMP_BITS - Self::WIDTH;
    /// 2^11 ns granularity, 2^31 ns span.
    pub const DEFAULT_LOW_BIT: u32 = 11;

    pub fn new(low_bit: u32) -> Result<Self, InvalidWindow> {
        if low_bit > Self::MAX_LOW_BIT {
            return Err(InvalidWindow(low_bit));
        }
        Ok(TruncationWindow { low_bit })
    }

    pub const fn low_bit(self) -> u32 {
        self.low_bit
    }

    /// Smallest distinguishable time step, `2^low_bit` ns.
    pub const fn granularity(self) -> Nanos {
        1 << self.low_bit
    }

    /// Longest representable span, `2^(low_bit + 20)` ns.
    pub const fn span(self) -> Nanos {
        1 << (self.low_bit + Self::WIDTH)
    }

    /// Bits `[low_bit, low_bit + 19]` of `t`.
    pub const fn truncate(self, t: Timestamp48) -> u32 {
        self.truncate_nanos(t.0)
    }

    pub const fn truncate_nanos(self, t: u64) -> u32 {
        ((t >> self.low_bit) & ((1 << Self::WIDTH) - 1)) as u32
    }

    pub const fn is_aligned(self, t: Nanos) -> bool {
        t & (self.granularity() - 1) == 0
    }
}

impl Default for TruncationWindow {
    fn default() -> Self {
        TruncationWindow { low_bit: Self::DEFAULT_LOW_BIT }
    }
}

impl TryFrom<u32> for TruncationWindow {
    type Error = InvalidWindow;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        TruncationWindow::new(v)
    }
}

impl From<TruncationWindow> for u32 {
    fn from(w: TruncationWindow) -> u32 {
        w.low_bit
    }
}
