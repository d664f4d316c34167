//! Two-rate three-color token bucket policer and its PSFP color policies.
//!
//! Buckets C and E refill independently at CIR and EIR. Token counts are
//! kept in sub-byte units of 1/(8·10⁹) byte so that `rate[bit/s] × Δt[ns]`
//! adds an exact integer amount; no rounding ever happens.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::MeterId;
use crate::time::{wrap_diff, Timestamp48};

/// Token sub-units per byte.
pub const UNITS_PER_BYTE: u128 = 8_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Green,
    Yellow,
    Red,
}

impl Color {
    pub const fn name(self) -> &'static str {
        match self {
            Color::Green => "green",
            Color::Yellow => "yellow",
            Color::Red => "red",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    #[default]
    Blind,
    Aware,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrTcmConfig {
    /// Committed information rate, bit/s.
    pub cir: u64,
    /// Excess information rate, bit/s.
    pub eir: u64,
    /// Capacity of bucket C in bytes.
    pub cbs: u64,
    /// Capacity of bucket E in bytes.
    pub ebs: u64,
    pub color_mode: ColorMode,
    pub drop_on_yellow: bool,
    pub mark_all_red: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MeterConfigError {
    #[error("meter {meter}: {bucket} of {size} bytes cannot hold a {frame}-byte frame")]
    BucketTooSmall { meter: MeterId, bucket: &'static str, size: u64, frame: u32 },
}

impl TrTcmConfig {
    pub fn new(cir: u64, eir: u64, cbs: u64, ebs: u64) -> Self {
        TrTcmConfig {
            cir,
            eir,
            cbs,
            ebs,
            color_mode: ColorMode::Blind,
            drop_on_yellow: false,
            mark_all_red: false,
        }
    }

    /// A zero-sized bucket is allowed (it disables that color).
    pub fn validate(&self, meter: MeterId, largest_frame: u32) -> Result<(), MeterConfigError> {
        for (bucket, size) in [("CBS", self.cbs), ("EBS", self.ebs)] {
            if size != 0 && size < largest_frame as u64 {
                return Err(MeterConfigError::BucketTooSmall { meter, bucket, size, frame: largest_frame });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrTcmState {
    pub tokens_c: u128,
    pub tokens_e: u128,
    pub last_update: Option<Timestamp48>,
    pub blocked: bool,
}

impl TrTcmState {
    pub fn full(cfg: &TrTcmConfig) -> Self {
        TrTcmState {
            tokens_c: cfg.cbs as u128 * UNITS_PER_BYTE,
            tokens_e: cfg.ebs as u128 * UNITS_PER_BYTE,
            last_update: None,
            blocked: false,
        }
    }

    pub fn tokens_c_bytes(&self) -> u64 {
        (self.tokens_c / UNITS_PER_BYTE) as u64
    }

    pub fn tokens_e_bytes(&self) -> u64 {
        (self.tokens_e / UNITS_PER_BYTE) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeterAction {
    Forward,
    ForwardWithDei,
    /// Marked red by the buckets.
    DropRed,
    /// The meter was blocked by an earlier red frame.
    DropBlocked,
    /// Yellow (pre-colored or metered) with DropOnYellow set.
    DropYellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeterVerdict {
    /// Color after policies; DropOnYellow recolors to red.
    pub color: Color,
    pub action: MeterAction,
}

#[derive(Debug, Clone)]
pub struct FlowMeter {
    id: MeterId,
    cfg: TrTcmConfig,
    state: TrTcmState,
}

impl FlowMeter {
    pub fn new(id: MeterId, cfg: TrTcmConfig) -> Self {
        FlowMeter { id, state: TrTcmState::full(&cfg), cfg }
    }

    pub fn id(&self) -> MeterId {
        self.id
    }

    pub fn config(&self) -> &TrTcmConfig {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut TrTcmConfig {
        &mut self.cfg
    }

    pub fn state(&self) -> &TrTcmState {
        &self.state
    }

    fn refill(&mut self, now: Timestamp48) {
        if let Some(last) = self.state.last_update {
            let elapsed = wrap_diff(now, last) as u128;
            let cap_c = self.cfg.cbs as u128 * UNITS_PER_BYTE;
            let cap_e = self.cfg.ebs as u128 * UNITS_PER_BYTE;
            self.state.tokens_c = (self.state.tokens_c + self.cfg.cir as u128 * elapsed).min(cap_c);
            self.state.tokens_e = (self.state.tokens_e + self.cfg.eir as u128 * elapsed).min(cap_e);
        }
        self.state.last_update = Some(now);
    }

    /// Colors a frame and consumes tokens. `pre_color` is only honored in
    /// color-aware mode, where a yellow frame may not take green tokens.
    pub fn meter(&mut self, frame_size: u32, pre_color: Color, now: Timestamp48) -> Color {
        self.refill(now);
        let need = frame_size as u128 * UNITS_PER_BYTE;
        let may_be_green = self.cfg.color_mode == ColorMode::Blind || pre_color == Color::Green;
        if may_be_green && self.state.tokens_c >= need {
            self.state.tokens_c -= need;
            Color::Green
        } else if self.state.tokens_e >= need {
            self.state.tokens_e -= need;
            Color::Yellow
        } else {
            Color::Red
        }
    }

    /// Maps a metered color to an action, applying DropOnYellow and
    /// MarkAllFramesRed. `pre_yellow` is the DEI bit seen on ingress.
    pub fn apply_color_policy(&mut self, color: Color, pre_yellow: bool) -> MeterVerdict {
        let verdict = match color {
            Color::Red => MeterVerdict { color: Color::Red, action: MeterAction::DropRed },
            Color::Yellow | Color::Green if self.cfg.drop_on_yellow && (color == Color::Yellow || pre_yellow) => {
                MeterVerdict { color: Color::Red, action: MeterAction::DropYellow }
            }
            Color::Yellow => MeterVerdict { color: Color::Yellow, action: MeterAction::ForwardWithDei },
            Color::Green => MeterVerdict { color: Color::Green, action: MeterAction::Forward },
        };
        if verdict.color == Color::Red && self.cfg.mark_all_red {
            self.state.blocked = true;
        }
        verdict
    }

    /// Meter plus policy. A blocked meter marks every frame red without
    /// touching the buckets.
    pub fn police(&mut self, frame_size: u32, dei: bool, now: Timestamp48) -> MeterVerdict {
        if self.state.blocked {
            return MeterVerdict { color: Color::Red, action: MeterAction::DropBlocked };
        }
        let pre = if dei { Color::Yellow } else { Color::Green };
        let color = self.meter(frame_size, pre, now);
        self.apply_color_policy(color, dei)
    }

    pub fn is_blocked(&self) -> bool {
        self.state.blocked
    }

    /// Control-plane reset of the blocked flag.
    pub fn reset(&mut self) {
        self.state.blocked = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(ns: u64) -> Timestamp48 {
        Timestamp48::new(ns)
    }

    #[test]
    fn full_buckets_color_green() {
        let mut m = FlowMeter::new(1, TrTcmConfig::new(1_000_000, 1_000_000, 1500, 1500));
        assert_eq!(m.meter(1500, Color::Green, ts(0)), Color::Green);
        assert_eq!(m.state().tokens_c, 0);
    }

    #[test]
    fn empty_c_falls_to_e_then_red() {
        let mut m = FlowMeter::new(1, TrTcmConfig::new(0, 0, 1000, 1000));
        assert_eq!(m.meter(1000, Color::Green, ts(0)), Color::Green);
        assert_eq!(m.meter(1000, Color::Green, ts(1)), Color::Yellow);
        assert_eq!(m.meter(1, Color::Green, ts(2)), Color::Red);
        assert_eq!(m.state().tokens_e, 0);
    }

    #[test]
    fn refill_is_exact_and_capped() {
        // 8 bit/s for 1 s is exactly one byte
        let mut m = FlowMeter::new(1, TrTcmConfig::new(8, 0, 10, 0));
        assert_eq!(m.meter(10, Color::Green, ts(0)), Color::Green);
        assert_eq!(m.meter(1, Color::Green, ts(999_999_999)), Color::Red);
        assert_eq!(m.meter(1, Color::Green, ts(1_000_000_000)), Color::Green);
        assert_eq!(m.state().tokens_c, 0);
        m.meter(0, Color::Green, ts(100_000_000_000));
        assert_eq!(m.state().tokens_c_bytes(), 10);
    }

    #[test]
    fn refill_across_timestamp_wrap() {
        let mut m = FlowMeter::new(1, TrTcmConfig::new(8_000_000_000, 0, 100, 0));
        let start = Timestamp48::MAX.wrapping_sub(4);
        assert_eq!(m.meter(100, Color::Green, start), Color::Green);
        // ten nanoseconds later, across the wrap: 8e9 bit/s * 10 ns = 10 bytes
        assert_eq!(m.meter(10, Color::Green, start.wrapping_add(10)), Color::Green);
        assert_eq!(m.meter(1, Color::Green, start.wrapping_add(10)), Color::Red);
    }

    #[test]
    fn color_aware_yellow_skips_c() {
        let mut cfg = TrTcmConfig::new(0, 0, 1000, 1000);
        cfg.color_mode = ColorMode::Aware;
        let mut m = FlowMeter::new(1, cfg);
        assert_eq!(m.meter(100, Color::Yellow, ts(0)), Color::Yellow);
        assert_eq!(m.state().tokens_c_bytes(), 1000);
        cfg.color_mode = ColorMode::Blind;
        let mut m = FlowMeter::new(1, cfg);
        assert_eq!(m.meter(100, Color::Yellow, ts(0)), Color::Green);
    }

    #[test]
    fn single_rate_degenerate_case() {
        let mut m = FlowMeter::new(1, TrTcmConfig::new(1_000_000, 0, 2000, 0));
        let colors: Vec<_> = (0..50).map(|i| m.meter(500, Color::Green, ts(i * 1000))).collect();
        assert!(!colors.contains(&Color::Yellow));
        assert!(colors.contains(&Color::Red));
    }

    #[test]
    fn yellow_policy() {
        let mut m = FlowMeter::new(1, TrTcmConfig::new(0, 0, 0, 0));
        assert_eq!(m.apply_color_policy(Color::Yellow, false).action, MeterAction::ForwardWithDei);
        m.config_mut().drop_on_yellow = true;
        let v = m.apply_color_policy(Color::Yellow, false);
        assert_eq!(v, MeterVerdict { color: Color::Red, action: MeterAction::DropYellow });
        // pre-colored yellow is dropped as well
        assert_eq!(m.apply_color_policy(Color::Green, true).action, MeterAction::DropYellow);
        assert_eq!(m.apply_color_policy(Color::Green, false).action, MeterAction::Forward);
    }

    #[test]
    fn mark_all_red_blocks_after_first_red() {
        let mut cfg = TrTcmConfig::new(0, 0, 1000, 0);
        cfg.mark_all_red = true;
        let mut m = FlowMeter::new(1, cfg);
        assert_eq!(m.police(1000, false, ts(0)).action, MeterAction::Forward);
        assert_eq!(m.police(1000, false, ts(1)).action, MeterAction::DropRed);
        assert!(m.is_blocked());
        m.config_mut().cir = 8_000_000_000;
        // buckets would refill, but the meter stays blocked
        let v = m.police(10, false, ts(1_000_000));
        assert_eq!(v, MeterVerdict { color: Color::Red, action: MeterAction::DropBlocked });
        m.reset();
        assert_eq!(m.police(10, false, ts(2_000_000)).action, MeterAction::Forward);
    }

    #[test]
    fn bucket_validation() {
        let cfg = TrTcmConfig::new(1, 1, 1000, 0);
        assert!(cfg.validate(3, 1000).is_ok());
        assert!(matches!(cfg.validate(3, 1280), Err(MeterConfigError::BucketTooSmall { bucket: "CBS", .. })));
    }
}
