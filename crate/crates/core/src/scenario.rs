//! Scenario files: a self-contained TOML description of one experiment.
//!
//! Rates in a scenario file are given at hardware scale and divided by the
//! run's scale factor when compiled; durations are used as written. All
//! static checks run before the first event so a validated scenario never
//! fails mid-run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{BridgeState, PortConfig, TickJitter, DEFAULT_RECIRC_DELAY};
use crate::filter::{FilterTable, IdentificationKind, StreamFilterEntry, StreamIdKey, Ternary};
use crate::frame::{IpFields, MacAddr, PortId, VlanTag};
use crate::gate::{GateState, SignedDelta};
use crate::meter::{ColorMode, TrTcmConfig};
use crate::schedule::{self, CompiledSchedule, GateSpec, ScheduleError, SliceSpec, StreamGclSpec, MAX_TICK_PORTS};
use crate::sim::{
    calibrated_queue_limit, CbrSource, ControlAction, ControlEvent, HeaderTemplate, LinkConfig, MetricsLog, RunSummary,
    SimError, SimSetup, Simulation, DEFAULT_PLATEAU,
};
use crate::sync::{SyncConfig, DEFAULT_POLL_INTERVAL};
use crate::time::{Nanos, TruncationWindow};

pub const SCHEMA_VERSION: u32 = 1;

/// Default divisor applied to every rate in a scenario file.
pub const DEFAULT_SCALE: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub run: RunSection,
    #[serde(default)]
    pub ports: Vec<PortSection>,
    #[serde(default)]
    pub filter: Option<FilterSection>,
    #[serde(default)]
    pub gates: Vec<GateSection>,
    #[serde(default)]
    pub meters: Vec<MeterSection>,
    #[serde(default)]
    pub links: Vec<LinkSection>,
    #[serde(default)]
    pub sources: Vec<SourceSection>,
    #[serde(default)]
    pub sync: Option<SyncSection>,
    #[serde(default)]
    pub control_events: Vec<ControlSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub duration_ns: Nanos,
    #[serde(default)]
    pub bin_ns: Option<Nanos>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_low_bit")]
    pub low_bit: u32,
    #[serde(default)]
    pub clock_origin_ns: u64,
    #[serde(default = "default_gate_capacity")]
    pub gate_capacity: usize,
    #[serde(default = "default_true")]
    pub check_conservation: bool,
    #[serde(default)]
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PortSection {
    pub port: PortId,
    #[serde(default)]
    pub tick_phase_ns: Nanos,
    #[serde(default)]
    pub recirc_delay_ns: Option<Nanos>,
    /// Required when no gate sits on the port.
    #[serde(default)]
    pub hyperperiod_ns: Option<Nanos>,
    #[serde(default)]
    pub drift_ns_per_tick: i64,
    #[serde(default)]
    pub jitter_ns: u64,
    #[serde(default)]
    pub delta_ns: i64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub kind: IdentificationKind,
    #[serde(default)]
    pub capacity: Option<usize>,
    #[serde(default)]
    pub entries: Vec<EntrySection>,
}

/// A key field: an integer, a textual address (MAC, IPv4, IPv4/prefix),
/// or an explicit value/mask pair.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum FieldValue {
    Int(u64),
    Text(String),
    Masked { value: Scalar, mask: Scalar },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(u64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySection {
    pub handle: u32,
    pub vlan_id: u16,
    #[serde(default)]
    pub eth_dst: Option<FieldValue>,
    #[serde(default)]
    pub eth_src: Option<FieldValue>,
    #[serde(default)]
    pub ip_src: Option<FieldValue>,
    #[serde(default)]
    pub ip_dst: Option<FieldValue>,
    #[serde(default)]
    pub dscp: Option<FieldValue>,
    #[serde(default)]
    pub next_protocol: Option<FieldValue>,
    #[serde(default)]
    pub l4_src_port: Option<FieldValue>,
    #[serde(default)]
    pub l4_dst_port: Option<FieldValue>,
    #[serde(default)]
    pub gate: Option<u32>,
    #[serde(default)]
    pub meter: Option<u32>,
    #[serde(default)]
    pub max_sdu: Option<u32>,
    #[serde(default)]
    pub max_sdu_exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GateSection {
    pub id: u32,
    pub port: PortId,
    #[serde(default)]
    pub invalid_rx: bool,
    #[serde(default)]
    pub octets_exceeded: bool,
    #[serde(default)]
    pub octet_budget: Option<u64>,
    pub slices: Vec<SliceSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSection {
    pub duration_ns: Nanos,
    pub state: GateState,
    #[serde(default)]
    pub ipv: Option<u8>,
    #[serde(default)]
    pub octet_budget: Option<u64>,
    /// Repeat this slice pattern; expands to `repeat` identical slices.
    #[serde(default)]
    pub repeat: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MeterSection {
    pub id: u32,
    pub cir_bps: u64,
    pub eir_bps: u64,
    pub cbs_bytes: u64,
    pub ebs_bytes: u64,
    #[serde(default)]
    pub color_mode: ColorMode,
    #[serde(default)]
    pub drop_on_yellow: bool,
    #[serde(default)]
    pub mark_all_red: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub id: u32,
    pub capacity_bps: u64,
    /// Defaults to the limit that makes a saturated link plateau at
    /// `plateau_ns` of latency.
    #[serde(default)]
    pub queue_limit_bytes: Option<u64>,
    #[serde(default)]
    pub plateau_ns: Option<Nanos>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub id: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub port: PortId,
    pub rate_bps: u64,
    pub frame_size: u32,
    #[serde(default)]
    pub start_ns: Nanos,
    #[serde(default)]
    pub stop_ns: Option<Nanos>,
    #[serde(default)]
    pub link: Option<u32>,
    #[serde(default)]
    pub measure_latency: bool,
    #[serde(default)]
    pub header: HeaderSection,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HeaderSection {
    #[serde(default)]
    pub vlan_id: Option<u16>,
    #[serde(default)]
    pub pcp: u8,
    #[serde(default)]
    pub dei: bool,
    #[serde(default)]
    pub eth_dst: Option<MacAddr>,
    #[serde(default)]
    pub eth_src: Option<MacAddr>,
    #[serde(default)]
    pub ip: Option<IpFields>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SyncSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub delta_net_ns: i64,
    #[serde(default = "default_poll")]
    pub poll_interval_ns: Nanos,
    #[serde(default)]
    pub reference_port: Option<PortId>,
    #[serde(default)]
    pub first_poll_ns: Option<Nanos>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct ControlSection {
    pub at_ns: Nanos,
    #[serde(flatten)]
    pub action: ControlAction,
}

fn default_low_bit() -> u32 {
    TruncationWindow::DEFAULT_LOW_BIT
}

fn default_gate_capacity() -> usize {
    schedule::DEFAULT_GATE_CAPACITY
}

fn default_true() -> bool {
    true
}

fn default_poll() -> Nanos {
    DEFAULT_POLL_INTERVAL
}

/// A semantic error, anchored to the section it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub section: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.section, self.message),
            None => write!(f, "{}: {}", self.section, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{}parse error: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("{} validation error(s):\n{}", .0.len(), .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl ScenarioError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            ScenarioError::Invalid(d) => d,
            _ => &[],
        }
    }
}

/// Overrides applied on top of the file when compiling a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub scale: u64,
    pub seed: Option<u64>,
    pub bin: Option<Nanos>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { scale: DEFAULT_SCALE, seed: None, bin: None }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    text: String,
}

struct Diags<'a> {
    text: &'a str,
    list: Vec<Diagnostic>,
}

impl Diags<'_> {
    fn push(&mut self, header: &str, index: Option<usize>, message: impl Into<String>) {
        let section = match index {
            Some(i) => format!("[[{header}]] #{}", i + 1),
            None => format!("[{header}]"),
        };
        let line = locate(self.text, header, index);
        self.list.push(Diagnostic { line, section, message: message.into() });
    }
}

/// 1-based line of the `index`-th `[[header]]` (or of `[header]`).
fn locate(text: &str, header: &str, index: Option<usize>) -> Option<usize> {
    let (pat, n) = match index {
        Some(i) => (format!("[[{header}]]"), i),
        None => (format!("[{header}]"), 0),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim_start().starts_with(&pat))
        .nth(n)
        .map(|(i, _)| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_int(s: &str) -> Option<u64> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

#[derive(Clone, Copy)]
enum FieldKind {
    Mac,
    Ip,
    Int,
}

fn scalar(kind: FieldKind, s: &Scalar) -> Result<u64, String> {
    match s {
        Scalar::Int(v) => Ok(*v),
        Scalar::Text(t) => match kind {
            FieldKind::Mac => t.parse::<MacAddr>().map(MacAddr::to_u64).map_err(|e| e.to_string()),
            FieldKind::Ip => t.parse::<Ipv4Addr>().map(|a| u32::from(a) as u64).map_err(|e| format!("{t:?}: {e}")),
            FieldKind::Int => parse_int(t).ok_or_else(|| format!("invalid integer {t:?}")),
        },
    }
}

fn field(kind: FieldKind, v: &FieldValue) -> Result<Ternary, String> {
    match v {
        FieldValue::Int(i) => Ok(Ternary::exact(*i)),
        FieldValue::Text(t) => {
            if let (FieldKind::Ip, Some((addr, len))) = (kind, t.split_once('/')) {
                let a: Ipv4Addr = addr.parse().map_err(|e| format!("{t:?}: {e}"))?;
                let len: u32 = len.parse().ok().filter(|l| *l <= 32).ok_or_else(|| format!("bad prefix in {t:?}"))?;
                let mask = if len == 0 { 0 } else { (u32::MAX << (32 - len)) as u64 };
                return Ok(Ternary::masked(u32::from(a) as u64 & mask, mask));
            }
            Ok(Ternary::exact(scalar(kind, &Scalar::Text(t.clone()))?))
        }
        FieldValue::Masked { value, mask } => Ok(Ternary::masked(scalar(kind, value)?, scalar(kind, mask)?)),
    }
}

impl EntrySection {
    fn key(&self) -> Result<StreamIdKey, String> {
        let f = |kind, v: &Option<FieldValue>| v.as_ref().map(|v| field(kind, v)).transpose();
        Ok(StreamIdKey {
            vlan_id: self.vlan_id,
            eth_dst: f(FieldKind::Mac, &self.eth_dst)?,
            eth_src: f(FieldKind::Mac, &self.eth_src)?,
            ip_src: f(FieldKind::Ip, &self.ip_src)?,
            ip_dst: f(FieldKind::Ip, &self.ip_dst)?,
            dscp: f(FieldKind::Int, &self.dscp)?,
            next_protocol: f(FieldKind::Int, &self.next_protocol)?,
            l4_src_port: f(FieldKind::Int, &self.l4_src_port)?,
            l4_dst_port: f(FieldKind::Int, &self.l4_dst_port)?,
        })
    }
}

impl GateSection {
    fn gcl(&self) -> StreamGclSpec {
        let mut slices = Vec::new();
        for s in &self.slices {
            let one = SliceSpec { duration: s.duration_ns, state: s.state, ipv: s.ipv, octet_budget: s.octet_budget };
            slices.extend(std::iter::repeat_n(one, s.repeat.unwrap_or(1) as usize));
        }
        StreamGclSpec::new(self.id, slices)
    }
}

impl HeaderSection {
    fn template(&self) -> HeaderTemplate {
        HeaderTemplate {
            eth_dst: self.eth_dst.unwrap_or_default(),
            eth_src: self.eth_src.unwrap_or_default(),
            vlan: self.vlan_id.map(|vid| VlanTag { pcp: self.pcp, dei: self.dei, vid }),
            ip: self.ip,
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        Ok(Scenario { file, text: text.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn name(&self) -> String {
        self.file.name.clone().unwrap_or_else(|| "scenario".into())
    }

    /// All static checks; an empty list means the scenario can run.
    pub fn validate(&self, opts: &RunOptions) -> Vec<Diagnostic> {
        match self.compile(opts) {
            Ok(_) => Vec::new(),
            Err(ScenarioError::Invalid(d)) => d,
            Err(e) => vec![Diagnostic { line: None, section: "scenario".into(), message: e.to_string() }],
        }
    }

    /// Compiles only the gate schedule.
    pub fn compile_schedule(&self) -> Result<CompiledSchedule, ScenarioError> {
        let mut d = Diags { text: &self.text, list: Vec::new() };
        let window = self.window(&mut d);
        let sched = window.and_then(|w| self.schedule(w, &mut d));
        match sched {
            Some(s) if d.list.is_empty() => Ok(s),
            _ => Err(ScenarioError::Invalid(d.list)),
        }
    }

    fn window(&self, d: &mut Diags) -> Option<TruncationWindow> {
        match TruncationWindow::new(self.file.run.low_bit) {
            Ok(w) => Some(w),
            Err(e) => {
                d.push("run", None, e.to_string());
                None
            }
        }
    }

    fn schedule(&self, window: TruncationWindow, d: &mut Diags) -> Option<CompiledSchedule> {
        let f = &self.file;
        let gate_index: BTreeMap<u32, usize> = f.gates.iter().enumerate().map(|(i, g)| (g.id, i)).collect();
        let mut seen = BTreeSet::new();
        for (i, g) in f.gates.iter().enumerate() {
            if !seen.insert(g.id) {
                d.push("gates", Some(i), format!("duplicate gate id {}", g.id));
            }
            if let Some(ipv) = g.slices.iter().filter_map(|s| s.ipv).find(|v| *v > 7) {
                d.push("gates", Some(i), format!("IPV {ipv} exceeds 3 bits"));
            }
        }
        let specs: Vec<GateSpec> = f
            .gates
            .iter()
            .map(|g| GateSpec {
                gcl: g.gcl(),
                port: g.port,
                invalid_rx: g.invalid_rx,
                octets_exceeded: g.octets_exceeded,
                octet_budget: g.octet_budget,
            })
            .collect();
        match schedule::compile(&specs, window, f.run.gate_capacity) {
            Ok(s) => Some(s),
            Err(errs) => {
                for e in errs {
                    let gate = match &e {
                        ScheduleError::EmptyGcl { gate }
                        | ScheduleError::ZeroDuration { gate, .. }
                        | ScheduleError::NotMultiple { gate, .. }
                        | ScheduleError::Unaligned { gate, .. } => Some(*gate),
                        _ => None,
                    };
                    let kind = match &e {
                        ScheduleError::HyperperiodOutOfRange { .. } => "HyperperiodOutOfRange: ",
                        ScheduleError::EntryBudgetExceeded { .. } => "EntryBudgetExceeded: ",
                        ScheduleError::Unaligned { .. } => "SliceBoundaryNotAligned: ",
                        _ => "",
                    };
                    let idx = gate.and_then(|g| gate_index.get(&g).copied());
                    let idx = idx.or_else(|| (!f.gates.is_empty()).then_some(0));
                    d.push("gates", idx, format!("{kind}{e}"));
                }
                None
            }
        }
    }

    /// Validates and compiles into a runnable setup.
    pub fn compile(&self, opts: &RunOptions) -> Result<SimSetup, ScenarioError> {
        let f = &self.file;
        let mut d = Diags { text: &self.text, list: Vec::new() };
        if f.schema_version != SCHEMA_VERSION {
            d.list.push(Diagnostic {
                line: locate_key(&self.text, "schema_version"),
                section: "schema_version".into(),
                message: format!("unsupported schema version {}; expected {SCHEMA_VERSION}", f.schema_version),
            });
        }
        let run = &f.run;
        if run.duration_ns == 0 {
            d.push("run", None, "duration_ns must be positive");
        }
        let bin = opts.bin.or(run.bin_ns).unwrap_or((run.duration_ns / 100).max(1));
        if bin == 0 {
            d.push("run", None, "bin width must be positive");
        }
        if opts.scale == 0 {
            d.push("run", None, "scale must be positive");
        }
        let scale = opts.scale.max(1);
        let scaled = |v: u64| v / scale;

        let window = self.window(&mut d);
        let sched = window.and_then(|w| self.schedule(w, &mut d));

        // ports
        let mut ports = Vec::new();
        let mut port_ids = BTreeSet::new();
        if f.ports.len() > MAX_TICK_PORTS {
            d.push("ports", Some(MAX_TICK_PORTS), format!("at most {MAX_TICK_PORTS} ports may carry hyperperiod ticks"));
        }
        for (i, p) in f.ports.iter().enumerate() {
            if !port_ids.insert(p.port) {
                d.push("ports", Some(i), format!("duplicate port {}", p.port));
                continue;
            }
            let compiled_h = sched.as_ref().and_then(|s| s.ports.get(&p.port).copied());
            let h = match (compiled_h, p.hyperperiod_ns) {
                (Some(c), Some(given)) if c != given => {
                    d.push("ports", Some(i), format!("hyperperiod_ns {given} differs from the gate LCM {c}"));
                    c
                }
                (Some(c), _) => c,
                (None, Some(given)) if given > 0 => given,
                (None, _) => {
                    if sched.is_some() {
                        d.push("ports", Some(i), format!("port {} has no gates; set hyperperiod_ns", p.port));
                    }
                    1
                }
            };
            ports.push(PortConfig {
                port_id: p.port,
                hyperperiod: h,
                tick_phase: p.tick_phase_ns,
                recirc_delay: p.recirc_delay_ns.unwrap_or(DEFAULT_RECIRC_DELAY),
                delta: SignedDelta::reduce(p.delta_ns, h),
                jitter: TickJitter { drift_ns_per_tick: p.drift_ns_per_tick, random_ns: p.jitter_ns },
            });
        }
        for (i, g) in f.gates.iter().enumerate() {
            if !port_ids.contains(&g.port) {
                d.push("gates", Some(i), format!("gate {} sits on port {} which has no [[ports]] entry", g.id, g.port));
            }
        }

        // meters
        let largest_frame = f.sources.iter().map(|s| s.frame_size).max().unwrap_or(0);
        let mut meters = Vec::new();
        let mut meter_ids = BTreeSet::new();
        for (i, m) in f.meters.iter().enumerate() {
            if !meter_ids.insert(m.id) {
                d.push("meters", Some(i), format!("duplicate meter id {}", m.id));
            }
            let cfg = TrTcmConfig {
                cir: scaled(m.cir_bps),
                eir: scaled(m.eir_bps),
                cbs: m.cbs_bytes,
                ebs: m.ebs_bytes,
                color_mode: m.color_mode,
                drop_on_yellow: m.drop_on_yellow,
                mark_all_red: m.mark_all_red,
            };
            if let Err(e) = cfg.validate(m.id, largest_frame) {
                d.push("meters", Some(i), e.to_string());
            }
            meters.push((m.id, cfg));
        }

        // filter
        let gate_ids: BTreeSet<u32> = f.gates.iter().map(|g| g.id).collect();
        let mut filter = FilterTable::new(IdentificationKind::NullStream);
        if let Some(fs) = &f.filter {
            let cap = fs.capacity.unwrap_or(fs.kind.default_capacity());
            filter = FilterTable::with_capacity(fs.kind, cap);
            for (i, e) in fs.entries.iter().enumerate() {
                if let Some(g) = e.gate.filter(|g| !gate_ids.contains(g)) {
                    d.push("filter.entries", Some(i), format!("unknown gate {g}"));
                }
                if let Some(m) = e.meter.filter(|m| !meter_ids.contains(m)) {
                    d.push("filter.entries", Some(i), format!("unknown meter {m}"));
                }
                let key = match e.key() {
                    Ok(k) => k,
                    Err(msg) => {
                        d.push("filter.entries", Some(i), msg);
                        continue;
                    }
                };
                let mut entry = StreamFilterEntry::new(key, e.handle);
                entry.gate_id = e.gate;
                entry.meter_id = e.meter;
                entry.max_sdu = e.max_sdu;
                entry.max_sdu_exceeded = e.max_sdu_exceeded;
                if let Err(err) = filter.insert(entry) {
                    let full = matches!(err, crate::filter::FilterError::CapacityExceeded { .. });
                    let msg = if full {
                        format!("CapacityExceeded: {err} ({} entries given)", fs.entries.len())
                    } else {
                        err.to_string()
                    };
                    d.push("filter.entries", Some(i), msg);
                    if full {
                        break;
                    }
                }
            }
        }

        // links
        let mut links = Vec::new();
        let mut link_index = BTreeMap::new();
        for (i, l) in f.links.iter().enumerate() {
            if link_index.insert(l.id, i).is_some() {
                d.push("links", Some(i), format!("duplicate link id {}", l.id));
            }
            let capacity = scaled(l.capacity_bps);
            if capacity == 0 {
                d.push("links", Some(i), "capacity is zero after scaling");
            }
            let largest = f.sources.iter().filter(|s| s.link == Some(l.id)).map(|s| s.frame_size).max().unwrap_or(0);
            let queue_limit = l.queue_limit_bytes.unwrap_or_else(|| {
                calibrated_queue_limit(capacity, l.plateau_ns.unwrap_or(DEFAULT_PLATEAU), largest)
            });
            links.push(LinkConfig { id: l.id, capacity: capacity.max(1), queue_limit });
        }

        // sources
        let gate_ports: BTreeMap<u32, PortId> = f.gates.iter().map(|g| (g.id, g.port)).collect();
        let mut sources = Vec::new();
        let mut source_ids = BTreeSet::new();
        for (i, s) in f.sources.iter().enumerate() {
            if !source_ids.insert(s.id) {
                d.push("sources", Some(i), format!("duplicate source id {}", s.id));
            }
            let rate = scaled(s.rate_bps);
            if rate == 0 {
                d.push("sources", Some(i), "rate is zero after scaling");
            }
            if s.frame_size == 0 {
                d.push("sources", Some(i), "frame_size must be positive");
            }
            if s.header.pcp > 7 {
                d.push("sources", Some(i), format!("PCP {} exceeds 3 bits", s.header.pcp));
            }
            if s.header.vlan_id.is_some_and(|v| v > 0xfff) {
                d.push("sources", Some(i), "VLAN ID exceeds 12 bits");
            }
            let link = match s.link {
                Some(l) => match link_index.get(&l) {
                    Some(idx) => Some(*idx),
                    None => {
                        d.push("sources", Some(i), format!("unknown link {l}"));
                        None
                    }
                },
                None => None,
            };
            let mut src = CbrSource::new(s.id, s.port, rate, s.frame_size, s.header.template());
            src.name = s.name.clone().unwrap_or_else(|| format!("source{}", s.id));
            src.start = s.start_ns;
            src.stop = s.stop_ns.unwrap_or(Nanos::MAX);
            src.link = link;
            src.measure_latency = s.measure_latency;
            if let Some(c) = filter.classify(&src.frame(Default::default())) {
                if let Some(gp) = c.gate_id.and_then(|g| gate_ports.get(&g)) {
                    if *gp != s.port {
                        d.push(
                            "sources",
                            Some(i),
                            format!("frames match gate {} on port {gp} but enter on port {}", c.gate_id.unwrap_or(0), s.port),
                        );
                    }
                }
            }
            sources.push(src);
        }

        // sync
        let sync = match &f.sync {
            Some(s) => {
                if s.poll_interval_ns == 0 {
                    d.push("sync", None, "poll_interval_ns must be positive");
                }
                if let Some(r) = s.reference_port.filter(|r| !port_ids.contains(r)) {
                    d.push("sync", None, format!("reference port {r} has no [[ports]] entry"));
                }
                SyncConfig {
                    enabled: s.enabled,
                    delta_net: s.delta_net_ns,
                    poll_interval: s.poll_interval_ns,
                    reference_port: s.reference_port,
                    first_poll: s.first_poll_ns,
                }
            }
            None => SyncConfig::default(),
        };

        // control events
        let handles: BTreeSet<u32> =
            f.filter.iter().flat_map(|fs| fs.entries.iter().map(|e| e.handle)).collect();
        let mut control = Vec::new();
        for (i, c) in f.control_events.iter().enumerate() {
            let missing = match c.action {
                ControlAction::SetDropOnYellow { meter, .. }
                | ControlAction::SetMarkAllRed { meter, .. }
                | ControlAction::ResetMeter { meter } => (!meter_ids.contains(&meter)).then(|| format!("unknown meter {meter}")),
                ControlAction::SetDelta { port, .. } => (!port_ids.contains(&port)).then(|| format!("unknown port {port}")),
                ControlAction::ResetGate { gate } => (!gate_ids.contains(&gate)).then(|| format!("unknown gate {gate}")),
                ControlAction::ResetStream { handle } => {
                    (!handles.contains(&handle)).then(|| format!("unknown stream handle {handle}"))
                }
            };
            if let Some(m) = missing {
                d.push("control_events", Some(i), m);
            }
            control.push(ControlEvent { at: c.at_ns, action: c.action });
        }

        if !d.list.is_empty() {
            return Err(ScenarioError::Invalid(d.list));
        }
        let (Some(window), Some(sched)) = (window, sched) else {
            return Err(ScenarioError::Invalid(d.list));
        };
        let bridge = BridgeState::new(window, ports, filter, sched.gates, meters).map_err(|e| {
            ScenarioError::Invalid(vec![Diagnostic { line: None, section: "bridge".into(), message: e.to_string() }])
        })?;
        Ok(SimSetup {
            name: self.name(),
            duration: run.duration_ns,
            bin,
            seed: opts.seed.unwrap_or(run.seed),
            clock_origin: run.clock_origin_ns,
            bridge,
            sources,
            links,
            sync,
            control,
            trace: run.trace,
            check_conservation: run.check_conservation,
        })
    }

    pub fn run(&self, opts: &RunOptions) -> Result<(RunSummary, MetricsLog), ScenarioError> {
        Ok(Simulation::new(self.compile(opts)?).run()?)
    }
}

fn locate_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| l.trim_start().starts_with(key)).map(|i| i + 1)
}
