//! Fixtures shared by the integration tests. Unlike the oracles these
//! build real library objects.

#![allow(dead_code)]

use std::path::PathBuf;

use psfp_core::bridge::{BridgeState, PortConfig};
use psfp_core::filter::{FilterTable, IdentificationKind, StreamFilterEntry, StreamIdKey};
use psfp_core::frame::{Frame, MacAddr};
use psfp_core::gate::{GateConfig, GateSlice};
use psfp_core::scenario::{RunOptions, Scenario};
use psfp_core::sim::{MetricsLog, RunSummary, SimSetup, Simulation};
use psfp_core::time::{Timestamp48, TruncationWindow};
use rand::Rng;

pub const DST: u64 = 0x01_00_5e_00_00_0a;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn golden_names() -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(scenarios_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "toml").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    v.sort();
    v
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(&scenarios_dir().join(format!("{name}.toml"))).unwrap()
}

pub fn setup(name: &str) -> SimSetup {
    load(name).compile(&RunOptions::default()).unwrap()
}

pub fn run(setup: SimSetup) -> (RunSummary, MetricsLog) {
    Simulation::new(setup).run().unwrap()
}

/// One port, one gate with the given open entries, one null-stream entry.
pub fn gate_bridge(h: u64, open: &[(u64, u64)], window: TruncationWindow) -> BridgeState {
    let gate = GateConfig {
        gate_id: 1,
        port: 1,
        hyperperiod: h,
        open_entries: open.iter().map(|&(start, end)| GateSlice { start, end, ipv: None, octet_budget: None }).collect(),
        invalid_rx: false,
        octets_exceeded: false,
    };
    let mut filter = FilterTable::new(IdentificationKind::NullStream);
    let mut e = StreamFilterEntry::new(StreamIdKey::null_stream(DST, 10), 1);
    e.gate_id = Some(1);
    filter.insert(e).unwrap();
    BridgeState::new(window, vec![PortConfig::new(1, h)], filter, vec![gate], vec![]).unwrap()
}

pub fn tagged(t: u64, size: u32) -> Frame {
    Frame::new(1, Timestamp48::new(t), size).with_vlan(10, 0, false).with_macs(MacAddr::from_u64(DST), MacAddr::default())
}

/// A random gate: hyperperiod up to 2^16 granules and sorted, disjoint,
/// granule-aligned open entries.
pub fn random_gate(rng: &mut impl Rng) -> (TruncationWindow, u64, Vec<(u64, u64)>) {
    let low_bit = rng.gen_range(0..=12);
    let w = TruncationWindow::new(low_bit).unwrap();
    let g = w.granularity();
    let granules = rng.gen_range(1..=1u64 << 16);
    let h = granules * g;
    let mut cuts: Vec<u64> = (0..rng.gen_range(0..12)).map(|_| rng.gen_range(0..=granules)).collect();
    cuts.sort();
    cuts.dedup();
    let mut open = Vec::new();
    for pair in cuts.chunks(2) {
        if let [a, b] = pair {
            if a < b {
                open.push((a * g, b * g));
            }
        }
    }
    (w, h, open)
}
