//! Per-stream filtering and policing (PSFP) for a programmable switch
//! pipeline, with a deterministic discrete-event simulator to exercise it.
//!
//! The data-plane pieces mirror what fits in a match-action pipeline:
//! 48-bit wrapping timestamps, a 20-bit truncated match window, exact or
//! ternary stream identification, stream gates matched on the position
//! inside a per-port hyperperiod, and two-rate three-color meters.

pub mod bridge;
pub mod filter;
pub mod frame;
pub mod gate;
pub mod meter;
pub mod scenario;
pub mod schedule;
pub mod sim;
pub mod sync;
pub mod time;

pub use bridge::{BridgeState, Counters, DropReason, Outcome, PortConfig};
pub use filter::{FilterTable, IdentificationKind, StreamFilterEntry, StreamIdKey, Ternary};
pub use frame::{Frame, MacAddr, PortId};
pub use gate::{apply_delta, relative_position, GateConfig, GateSlice, GateState, SignedDelta, StreamGate};
pub use meter::{Color, ColorMode, FlowMeter, TrTcmConfig};
pub use scenario::{Scenario, ScenarioError};
pub use schedule::{expand, hyperperiod, CompiledSchedule, GateSpec, HyperperiodBounds, SliceSpec, StreamGclSpec};
pub use sim::{RunSummary, Simulation};
pub use sync::{epsilon1, epsilon2, SyncConfig};
pub use time::{signed_wrap_diff, wrap_diff, Nanos, Timestamp48, TruncationWindow};
