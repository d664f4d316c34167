//! End-to-end acceptance checks, one test per criterion. Each prints a
//! PASS/FAIL line with the measured values and then asserts; run with
//! `-- --nocapture` to see the lines for passing tests too.

mod oracles;
mod support;

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psfp_core::bridge::{schedule_ticks, DropReason, Outcome, DEFAULT_RECIRC_DELAY};
use psfp_core::meter::{Color, ColorMode, FlowMeter, TrTcmConfig};
use psfp_core::scenario::{RunOptions, Scenario};
use psfp_core::schedule::{expand, hyperperiod, HyperperiodBounds, SliceSpec, StreamGclSpec};
use psfp_core::sim::{Bin, MetricsLog};
use psfp_core::sync::epsilon1;
use psfp_core::time::{Timestamp48, TIMESTAMP_MODULUS};

use oracles::*;

const MS: u64 = 1_000_000;
const US: u64 = 1_000;

/// Scaled rates (÷1000) used by the golden scenarios.
const CIR: f64 = 70e6;
const EIR: f64 = 20e6;
const OFFERED: f64 = 100e6;
const LINK: u64 = 100_000_000;

fn verdict(n: u32, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    eprintln!("criterion {n:02} {status}: {detail}");
    assert!(ok, "criterion {n} failed: {detail}");
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

/// Mean rate in bit/s of one color over the bins starting in `[from, to)`.
fn color_rate(log: &MetricsLog, c: Color, from: u64, to: u64) -> f64 {
    let bytes: u64 = log.bins.iter().filter(|b| b.start >= from && b.start < to).map(|b| b.bytes(c)).sum();
    bytes as f64 * 8.0 * 1e9 / (to - from) as f64
}

fn bin_rate(b: &Bin, c: Color) -> f64 {
    b.bytes(c) as f64 * 8.0 * 1e9 / b.width() as f64
}

fn mean_latency(b: &Bin) -> f64 {
    b.latency.sum as f64 / b.latency.count as f64
}

const SER_64: u64 = 5_120;

/// Serialization-only latency: recirculation, at most one frame already
/// on the wire, and the frame's own serialization.
const SERIALIZATION_ONLY: u64 = DEFAULT_RECIRC_DELAY + 2 * SER_64;

fn plateau_expected(queue_limit: u64) -> f64 {
    DEFAULT_RECIRC_DELAY as f64 + fluid_queue_latency(180_000_000, LINK, queue_limit, 64)
}

#[test]
fn criterion_01_flow_meter_split() {
    let started = Instant::now();
    let (_, log) = support::run(support::setup("flow_meter"));
    let elapsed = started.elapsed();
    let (from, to) = (200 * MS, 1200 * MS);
    let g = color_rate(&log, Color::Green, from, to);
    let y = color_rate(&log, Color::Yellow, from, to);
    let r = color_rate(&log, Color::Red, from, to);
    let ok = within(g, CIR, 0.01)
        && within(y, EIR, 0.01)
        && within(r, OFFERED - CIR - EIR, 0.01)
        && elapsed.as_secs_f64() < 30.0;
    verdict(
        1,
        ok,
        &format!(
            "green {:.3} yellow {:.3} red {:.3} Mb/s over [0.2, 1.2) s, runtime {:.2} s",
            g / 1e6,
            y / 1e6,
            r / 1e6,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_drop_on_yellow_step() {
    let (_, log) = support::run(support::setup("flow_meter"));
    let (t0, t1) = (1200 * MS, 2200 * MS);
    let yellow_after: u64 = log.bins.iter().filter(|b| b.start >= t0 && b.start < t1).map(|b| b.bytes(Color::Yellow)).sum();
    let red_before = color_rate(&log, Color::Red, 200 * MS, t0);
    let first = log.bins.iter().find(|b| b.start == t0).unwrap();
    let step_first_bin = bin_rate(first, Color::Red) - red_before;
    let step_window = color_rate(&log, Color::Red, t0, t1) - red_before;
    let ok = yellow_after == 0 && within(step_first_bin, EIR, 0.01) && within(step_window, EIR, 0.01);
    verdict(
        2,
        ok,
        &format!(
            "yellow bytes after step {yellow_after}, red step {:.3} Mb/s in first bin, {:.3} Mb/s over 1 s",
            step_first_bin / 1e6,
            step_window / 1e6
        ),
    );
}

#[test]
fn criterion_03_mark_all_red_step() {
    let mut setup = support::setup("flow_meter");
    setup.trace = true;
    let (_, log) = support::run(setup);
    let t1 = 2200 * MS;
    let first_red = log
        .trace
        .iter()
        .position(|r| r.time.as_nanos() >= t1 && r.outcome.color() == Some(Color::Red))
        .expect("a red frame after the step");
    let t_red = log.trace[first_red].time.as_nanos();
    let late_forwards = log.trace[first_red..].iter().filter(|r| r.outcome.is_forwarded()).count();
    let late_bytes: u64 = log.bins.iter().filter(|b| b.start > t_red).map(|b| b.forwarded_bytes).sum();
    let late_records = log.forwarded.iter().filter(|f| f.time_ns >= t_red).count();
    let after = log.trace.len() - first_red;
    let ok = late_forwards == 0 && late_bytes == 0 && late_records == 0 && after > 0;
    verdict(
        3,
        ok,
        &format!("first red at {t_red} ns, {late_forwards} of {after} later frames forwarded"),
    );
}

const OPEN_1421: [(u64, u64); 2] = [(0, 100 * US), (500 * US, 700 * US)];
const H_1421: u64 = 800 * US;

#[test]
fn criterion_04_gcl_periodicity() {
    let scenario = support::load("gcl_1421");
    let compiled = scenario.compile_schedule().unwrap();
    let h = compiled.ports[&1];
    let setup = scenario.compile(&RunOptions::default()).unwrap();
    let duration = setup.duration;
    let g = setup.bridge.window().granularity();
    let (_, log) = support::run(setup);

    let periods = duration / h;
    let outside = log
        .forwarded
        .iter()
        .filter(|f| interval_membership(f.time_ns % h, g, &OPEN_1421).is_none())
        .count();
    // every frame in an open phase got through, every other frame did not
    let mismatched = log
        .trace
        .iter()
        .filter(|r| interval_membership(r.time.as_nanos() % h, g, &OPEN_1421).is_some() != r.outcome.is_forwarded())
        .count();
    let mut phases = std::collections::BTreeSet::new();
    for f in &log.forwarded {
        let k = interval_membership(f.time_ns % h, g, &OPEN_1421).unwrap_or(usize::MAX);
        phases.insert((f.time_ns / h, k));
    }
    let ok = h == H_1421 && duration.is_multiple_of(h) && periods == 5 && outside == 0 && mismatched == 0 && phases.len() == 10;
    verdict(
        4,
        ok,
        &format!(
            "{periods} periods of {h} ns, {} forwarded, {outside} outside open phases, {} phase windows used",
            log.forwarded.len(),
            phases.len()
        ),
    );
}

#[test]
fn criterion_05_delta_injection() {
    let mut setup = support::setup("gcl_1421_delta");
    let g = setup.bridge.window().granularity();
    setup.trace = true;
    let (sum, log) = support::run(setup);
    let (on, off, shift) = (1100 * US, 2700 * US, 300 * US as i128);
    let mut wrong = 0;
    let mut shifted = 0;
    for r in &log.trace {
        let t = r.time.as_nanos();
        let d = if (on..off).contains(&t) { shift } else { 0 };
        let expect = modular_position_oracle(t, 0, d, H_1421, g, &OPEN_1421).is_some();
        wrong += (expect != r.outcome.is_forwarded()) as u32;
        let unshifted = modular_position_oracle(t, 0, 0, H_1421, g, &OPEN_1421).is_some();
        shifted += (unshifted != r.outcome.is_forwarded()) as u32;
    }
    let times: Vec<u64> = log.trace.iter().map(|r| r.time.as_nanos()).collect();
    let unique = times.windows(2).all(|w| w[0] < w[1]);
    let c = &sum.counters;
    let processed = c.forwarded + c.best_effort + c.dropped_total();
    let ok = wrong == 0
        && shifted > 0
        && unique
        && sum.conservation_violations == 0
        && c.is_conserved()
        && processed == log.trace.len() as u64
        && c.ingested == processed + c.in_flight;
    verdict(
        5,
        ok,
        &format!(
            "{} frames, {wrong} off the shifted schedule, {shifted} differ from the unshifted one, \
             ingested {} = processed {processed} + in flight {}",
            log.trace.len(),
            c.ingested,
            c.in_flight
        ),
    );
}

#[test]
fn criterion_06_congested_baseline() {
    let setup = support::setup("overload_open_open");
    let limit = setup.links[0].queue_limit;
    let (_, log) = support::run(setup);
    let expected = plateau_expected(limit);
    let steady: Vec<f64> = log.bins.iter().skip(1).filter(|b| b.latency.count > 0).map(mean_latency).collect();
    let plateau = steady.iter().sum::<f64>() / steady.len() as f64;
    let tol = SER_64 as f64;
    let worst = steady.iter().map(|m| (m - expected).abs()).fold(0.0, f64::max);
    let ok = (plateau - expected).abs() <= tol && worst <= tol;
    verdict(
        6,
        ok,
        &format!(
            "plateau {plateau:.0} ns vs expected {expected:.0} ns (queue limit {limit} B), worst bin off by {worst:.0} ns, tolerance {tol:.0} ns"
        ),
    );
}

#[test]
fn criterion_07_one_sided_gate() {
    let setup = support::setup("overload_open_fifty");
    let limit = setup.links[0].queue_limit;
    let bin = setup.bin;
    let (_, log) = support::run(setup);
    let plateau = plateau_expected(limit);
    let floor = (DEFAULT_RECIRC_DELAY + SER_64) as f64;
    let mid = (plateau + floor) / 2.0;
    let means: Vec<f64> = log.bins.iter().map(mean_latency).collect();
    let mut runs: Vec<(bool, usize)> = Vec::new();
    for &m in &means {
        let high = m > mid;
        match runs.last_mut() {
            Some((h, n)) if *h == high => *n += 1,
            _ => runs.push((high, 1)),
        }
    }
    let phase_bins = (200 * MS / bin) as usize;
    let levels_ok = means.iter().all(|&m| {
        if m > mid {
            (m - plateau).abs() <= SER_64 as f64
        } else {
            m <= SERIALIZATION_ONLY as f64
        }
    });
    let lengths: Vec<usize> = runs.iter().map(|r| r.1).collect();
    // the final phase may be cut short by the end of the run
    let inner = &lengths[..lengths.len() - 1];
    let ok = !runs[0].0
        && runs.len() >= 4
        && inner.iter().all(|&n| n.abs_diff(phase_bins) <= 1)
        && lengths.last().is_some_and(|&n| n <= phase_bins + 1)
        && levels_ok;
    verdict(
        7,
        ok,
        &format!("phase lengths {lengths:?} bins (expected {phase_bins} ± 1), levels within tolerance: {levels_ok}"),
    );
}

#[test]
fn criterion_08_complementary_gates_with_sync() {
    let (sum, log) = support::run(support::setup("overload_fifty_fifty"));
    let worst_sync = log.bins.iter().map(|b| b.latency.max).max().unwrap();
    let eps2: Vec<i64> = log.sync.iter().filter(|s| s.port == 1).map(|s| s.eps2).collect();
    let (_, nosync) = support::run(support::setup("overload_fifty_fifty_nosync"));
    let worst_nosync = nosync.bins.iter().map(|b| b.latency.max).max().unwrap();
    let queued_bins = nosync.bins.iter().filter(|b| b.latency.max > SERIALIZATION_ONLY).count();
    let ok = sum.sync_samples > 0
        && !eps2.is_empty()
        && eps2.iter().all(|&e| e != 0)
        && log.bins.iter().filter(|b| b.latency.count > 0).count() * 2 >= log.bins.len() - 2
        && worst_sync <= SERIALIZATION_ONLY
        && queued_bins > 0;
    verdict(
        8,
        ok,
        &format!(
            "eps2 {:?} ns; with sync worst latency {worst_sync} ns (bound {SERIALIZATION_ONLY}); \
             without sync worst {worst_nosync} ns, {queued_bins} queueing bins",
            eps2.first()
        ),
    );
}

fn gate_cases(rng: &mut ChaCha8Rng, configs: usize, per_config: usize) -> (usize, usize, usize) {
    let mut mismatches = 0;
    let mut wrapped = 0;
    let mut total = 0;
    for _ in 0..configs {
        let (w, h, open) = support::random_gate(rng);
        let mut b = support::gate_bridge(h, &open, w);
        for _ in 0..per_config {
            let anchor = if rng.gen_bool(0.25) {
                TIMESTAMP_MODULUS - rng.gen_range(1..=4 * h.max(1 << 20))
            } else {
                rng.gen_range(0..TIMESTAMP_MODULUS)
            };
            let elapsed = if rng.gen_bool(0.9) { rng.gen_range(0..3 * h) } else { rng.gen_range(0..1u64 << 47) };
            let t_i = (anchor + elapsed) % TIMESTAMP_MODULUS;
            wrapped += (t_i < anchor) as usize;
            let delta = match rng.gen_range(0..3) {
                0 => 0,
                1 => rng.gen_range(-(2 * h as i64)..=2 * h as i64),
                _ => rng.gen(),
            };
            b.tick(1, Timestamp48::new(anchor)).unwrap();
            b.set_delta(1, delta).unwrap();
            let got = b.process(support::tagged(t_i, 64));
            let want = modular_position_oracle(t_i, anchor, delta as i128, h, w.granularity(), &open);
            let agree = match want {
                Some(_) => matches!(got, Outcome::Forward { .. }),
                None => got == Outcome::Drop(DropReason::GateClosed),
            };
            mismatches += (!agree) as usize;
            total += 1;
        }
    }
    (total, mismatches, wrapped)
}

fn meter_trace(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let cir = rng.gen_range(0..8_000_000_000u64);
    let eir = rng.gen_range(0..4_000_000_000u64);
    let cbs = rng.gen_range(0..20_000u64);
    let ebs = rng.gen_range(0..20_000u64);
    let aware = rng.gen_bool(0.5);
    let mut t = 0;
    let trace: Vec<(u64, u32, bool)> = (0..n)
        .map(|_| {
            t += rng.gen_range(0..2_000);
            (t, rng.gen_range(64..=1518), rng.gen_bool(0.2))
        })
        .collect();
    let want = token_step_oracle(cir, eir, cbs, ebs, aware, &trace);
    let mut cfg = TrTcmConfig::new(cir, eir, cbs, ebs);
    cfg.color_mode = if aware { ColorMode::Aware } else { ColorMode::Blind };
    let mut m = FlowMeter::new(1, cfg);
    let origin = Timestamp48::new(TIMESTAMP_MODULUS - rng.gen_range(0..t.max(1)));
    let mut byte_mismatch = 0;
    for (&(t, size, y), w) in trace.iter().zip(&want) {
        let got = m.meter(size, if y { Color::Yellow } else { Color::Green }, origin.wrapping_add(t));
        let w = match w {
            OracleColor::Green => Color::Green,
            OracleColor::Yellow => Color::Yellow,
            OracleColor::Red => Color::Red,
        };
        byte_mismatch += if got == w { 0 } else { size as usize };
    }
    (trace.len(), byte_mismatch)
}

fn schedule_cases(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let mut failures = 0;
    for _ in 0..n {
        let periods: Vec<u64> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(1..40)).collect();
        let h = hyperperiod(&periods, HyperperiodBounds::unbounded()).unwrap();
        failures += (h != brute_lcm(&periods)) as usize;

        let slices: Vec<(u64, bool)> = (0..rng.gen_range(1..6)).map(|_| (rng.gen_range(1..10), rng.gen_bool(0.5))).collect();
        let spec = StreamGclSpec::new(
            1,
            slices.iter().map(|&(d, o)| if o { SliceSpec::open(d) } else { SliceSpec::closed(d) }).collect(),
        );
        let reps = rng.gen_range(1..5);
        let h = spec.period() * reps;
        let entries = expand(&spec, h).unwrap();
        let disjoint = entries.windows(2).all(|w| w[0].end < w[1].start) && entries.iter().all(|e| e.start < e.end && e.end <= h);
        let covered: u64 = entries.iter().map(|e| e.end - e.start).sum();
        let open: u64 = slices.iter().filter(|s| s.1).map(|s| s.0).sum::<u64>() * reps;
        let membership = (0..h).all(|t| entries.iter().any(|e| e.start <= t && t < e.end) == slice_list_open(&slices, t));
        failures += (!(disjoint && covered == open && membership)) as usize;
    }
    failures
}

const DRIFT_SCENARIO: &str = r#"
schema_version = 1
name = "drift"

[run]
duration_ns = 1_000_000_000
low_bit = 5

[[ports]]
port = 1
drift_ns_per_tick = 37

[[ports]]
port = 2
tick_phase_ns = 250_000
drift_ns_per_tick = -11

[filter]
kind = "null_stream"

[[filter.entries]]
handle = 1
vlan_id = 10
eth_dst = "01:00:5e:00:00:0a"
gate = 1

[[gates]]
id = 1
port = 1
slices = [
  { duration_ns = 100_000, state = "open" },
  { duration_ns = 400_000, state = "closed" },
  { duration_ns = 200_000, state = "open" },
  { duration_ns = 100_000, state = "closed" },
]

[[gates]]
id = 2
port = 2
slices = [{ duration_ns = 800_000, state = "open" }]

[[sources]]
id = 1
port = 1
rate_bps = 10_000_000_000
frame_size = 64
[sources.header]
vlan_id = 10
eth_dst = "01:00:5e:00:00:0a"

[sync]
reference_port = 2
"#;

fn epsilon1_cases() -> (usize, usize) {
    let setup = Scenario::parse(DRIFT_SCENARIO).unwrap().compile(&RunOptions::default()).unwrap();
    let duration = setup.duration;
    let ports: Vec<_> = setup.bridge.ports().map(|p| p.cfg.clone()).collect();
    let (_, log) = support::run(setup);
    let mut bad = 0;
    for s in &log.sync {
        let cfg = ports.iter().find(|c| c.port_id == s.port).unwrap();
        let ticks = schedule_ticks(cfg, duration, &mut ChaCha8Rng::seed_from_u64(0));
        let k = ticks.iter().filter(|&&t| t <= s.time).count() as u64;
        bad += (s.eps1 != epsilon1_accumulation(k, cfg.jitter.drift_ns_per_tick, cfg.hyperperiod)) as usize;
    }
    // random per-tick jitter on top of drift, checked straight on the bridge
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = log.sync.len();
    for _ in 0..20 {
        let h = rng.gen_range(1_000..1_000_000);
        let mut cfg = psfp_core::bridge::PortConfig::new(1, h);
        cfg.jitter.drift_ns_per_tick = rng.gen_range(-300..300);
        cfg.jitter.random_ns = rng.gen_range(0..200);
        let ticks = schedule_ticks(&cfg, 100 * h, &mut rng);
        let t1 = Timestamp48::new(ticks[0]);
        for &t in &ticks {
            let e = epsilon1(Timestamp48::new(t), t1, h);
            bad += (e != modular_position(t, ticks[0], 0, h)) as usize;
            checked += 1;
        }
    }
    (checked, bad)
}

#[test]
fn criterion_09_property_suites() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51);
    let (gate_total, gate_bad, wrapped) = gate_cases(&mut rng, 100, 1_000);
    let mut meter_frames = 0;
    let mut meter_bad_bytes = 0;
    for _ in 0..4 {
        let (n, bad) = meter_trace(&mut rng, 10_000);
        meter_frames += n;
        meter_bad_bytes += bad;
    }
    let sched_bad = schedule_cases(&mut rng, 1_000);
    let (eps_checked, eps_bad) = epsilon1_cases();
    let mut conservation = String::new();
    let mut conservation_ok = true;
    for name in support::golden_names() {
        let setup = support::setup(&name);
        let checked = setup.check_conservation;
        let (sum, _) = support::run(setup);
        let ok = checked && sum.conservation_checked && sum.conservation_violations == 0 && sum.counters.is_conserved();
        conservation_ok &= ok;
        let _ = write!(conservation, " {name}:{}", if ok { "ok" } else { "VIOLATED" });
    }
    let ok = gate_total == 100_000
        && gate_bad == 0
        && wrapped > 0
        && meter_bad_bytes == 0
        && sched_bad == 0
        && eps_bad == 0
        && conservation_ok;
    verdict(
        9,
        ok,
        &format!(
            "(a) {gate_bad}/{gate_total} gate mismatches, {wrapped} across the wrap; \
             (b) {meter_bad_bytes} mismatched bytes over {meter_frames} frames; \
             (c) {sched_bad}/1000 schedule failures; (d) {eps_bad}/{eps_checked} eps1 mismatches; \
             (e){conservation}"
        ),
    );
}

fn capacity_toml(kind: &str, entries: usize, gate_entries: usize) -> String {
    let mut s = String::from("schema_version = 1\nname = \"capacity\"\n\n[run]\nduration_ns = 1_000_000\nlow_bit = 0\n\n");
    let _ = writeln!(s, "[filter]\nkind = \"{kind}\"\n");
    for i in 0..entries {
        let _ = writeln!(s, "[[filter.entries]]\nhandle = {}\nvlan_id = 10", i + 1);
        match kind {
            "null_stream" => {
                let _ = writeln!(s, "eth_dst = \"02:00:00:{:02x}:{:02x}:{:02x}\"", i >> 16, (i >> 8) & 0xff, i & 0xff);
            }
            _ => {
                let _ = writeln!(
                    s,
                    "eth_dst = \"02:00:00:00:00:01\"\nip_src = \"192.168.0.1\"\nip_dst = \"10.{}.{}.{}\"\n\
                     dscp = 0\nnext_protocol = 17\nl4_src_port = 1000\nl4_dst_port = 2000",
                    i >> 16,
                    (i >> 8) & 0xff,
                    i & 0xff
                );
            }
        }
        s.push('\n');
    }
    if gate_entries > 0 {
        s.push_str("[[ports]]\nport = 1\n\n[[gates]]\nid = 1\nport = 1\nslices = [\n");
        for _ in 0..gate_entries {
            s.push_str("  { duration_ns = 100, state = \"open\" },\n  { duration_ns = 100, state = \"closed\" },\n");
        }
        s.push_str("]\n");
    }
    s
}

fn capacity_case(kind: &str, entries: usize, gate_entries: usize, marker: &str) -> (bool, String) {
    let over = Scenario::parse(&capacity_toml(kind, entries + 1, gate_entries + (gate_entries > 0) as usize)).unwrap();
    let at = Scenario::parse(&capacity_toml(kind, entries, gate_entries)).unwrap();
    let over_diags = over.validate(&RunOptions::default());
    let at_diags = at.validate(&RunOptions::default());
    let hit = over_diags.iter().find(|d| d.message.starts_with(marker));
    let ok = over_diags.len() == 1 && hit.is_some() && at_diags.is_empty();
    let detail = match hit {
        Some(d) => d.message.clone(),
        None => format!("missing {marker}: {over_diags:?}"),
    };
    (ok, if at_diags.is_empty() { detail } else { format!("{detail}; at limit: {at_diags:?}") })
}

#[test]
fn criterion_10_capacity_limits() {
    let (null_ok, null_msg) = capacity_case("null_stream", 35_840, 0, "CapacityExceeded");
    let (ip_ok, ip_msg) = capacity_case("ip_exact", 32_768, 0, "CapacityExceeded");
    let (gate_ok, gate_msg) = capacity_case("null_stream", 0, 2_048, "EntryBudgetExceeded");
    let ok = null_ok
        && ip_ok
        && gate_ok
        && null_msg.contains("35840")
        && ip_msg.contains("32768")
        && gate_msg.contains("2048");
    verdict(10, ok, &format!("[{null_msg}] [{ip_msg}] [{gate_msg}]"));
}
