//! Stream identification and the maximum-SDU filter.
//!
//! A [`FilterTable`] holds entries of a single identification function,
//! mirroring a match table whose key layout is fixed at build time. Exact
//! kinds are looked up by hash; ternary kinds scan in insertion order and
//! the first hit wins.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Frame;

pub type StreamHandle = u32;
pub type GateId = u32;
pub type MeterId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentificationKind {
    NullStream,
    SourceMac,
    IpTernary,
    IpExact,
}

impl IdentificationKind {
    /// Entry limits of the reference hardware build, per key layout.
    pub const fn default_capacity(self) -> usize {
        match self {
            IdentificationKind::NullStream => 35840,
            IdentificationKind::SourceMac => 4096,
            IdentificationKind::IpTernary => 2048,
            IdentificationKind::IpExact => 32768,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            IdentificationKind::NullStream => "null_stream",
            IdentificationKind::SourceMac => "source_mac",
            IdentificationKind::IpTernary => "ip_ternary",
            IdentificationKind::IpExact => "ip_exact",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyField {
    EthDst,
    EthSrc,
    IpSrc,
    IpDst,
    Dscp,
    NextProtocol,
    L4SrcPort,
    L4DstPort,
}

impl KeyField {
    const fn width_mask(self) -> u64 {
        match self {
            KeyField::EthDst | KeyField::EthSrc => (1 << 48) - 1,
            KeyField::IpSrc | KeyField::IpDst => u32::MAX as u64,
            KeyField::Dscp => 0x3f,
            KeyField::NextProtocol => 0xff,
            KeyField::L4SrcPort | KeyField::L4DstPort => 0xffff,
        }
    }
}

/// A value/mask pair. A full-width mask is an exact match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ternary {
    pub value: u64,
    pub mask: u64,
}

impl Ternary {
    pub const fn exact(value: u64) -> Self {
        Ternary { value, mask: u64::MAX }
    }

    pub const fn masked(value: u64, mask: u64) -> Self {
        Ternary { value, mask }
    }

    pub const fn matches(self, v: u64) -> bool {
        v & self.mask == self.value & self.mask
    }

    fn is_exact_for(self, field: KeyField) -> bool {
        self.mask & field.width_mask() == field.width_mask()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamIdKey {
    pub vlan_id: u16,
    pub eth_dst: Option<Ternary>,
    pub eth_src: Option<Ternary>,
    pub ip_src: Option<Ternary>,
    pub ip_dst: Option<Ternary>,
    pub dscp: Option<Ternary>,
    pub next_protocol: Option<Ternary>,
    pub l4_src_port: Option<Ternary>,
    pub l4_dst_port: Option<Ternary>,
}

impl StreamIdKey {
    pub fn null_stream(eth_dst: u64, vlan_id: u16) -> Self {
        StreamIdKey { vlan_id, eth_dst: Some(Ternary::exact(eth_dst)), ..Default::default() }
    }

    fn field(&self, f: KeyField) -> Option<Ternary> {
        match f {
            KeyField::EthDst => self.eth_dst,
            KeyField::EthSrc => self.eth_src,
            KeyField::IpSrc => self.ip_src,
            KeyField::IpDst => self.ip_dst,
            KeyField::Dscp => self.dscp,
            KeyField::NextProtocol => self.next_protocol,
            KeyField::L4SrcPort => self.l4_src_port,
            KeyField::L4DstPort => self.l4_dst_port,
        }
    }

    fn has_ip_fields(&self) -> bool {
        IP_FIELDS.iter().any(|f| self.field(*f).is_some())
    }

    /// Checks the key against the field layout of `kind`.
    pub fn check(&self, kind: IdentificationKind) -> Result<(), KeyShapeError> {
        use FieldRule::*;
        if self.vlan_id > 0x0fff {
            return Err(KeyShapeError::VlanOutOfRange(self.vlan_id));
        }
        let rules: [(KeyField, FieldRule); 8] = match kind {
            IdentificationKind::NullStream => [
                (KeyField::EthDst, Exact),
                (KeyField::EthSrc, Absent),
                (KeyField::IpSrc, Absent),
                (KeyField::IpDst, Absent),
                (KeyField::Dscp, Absent),
                (KeyField::NextProtocol, Absent),
                (KeyField::L4SrcPort, Absent),
                (KeyField::L4DstPort, Absent),
            ],
            IdentificationKind::SourceMac => [
                (KeyField::EthDst, Ternary),
                (KeyField::EthSrc, Exact),
                (KeyField::IpSrc, Absent),
                (KeyField::IpDst, Absent),
                (KeyField::Dscp, Absent),
                (KeyField::NextProtocol, Absent),
                (KeyField::L4SrcPort, Absent),
                (KeyField::L4DstPort, Absent),
            ],
            IdentificationKind::IpTernary => [
                (KeyField::EthDst, Ternary),
                (KeyField::EthSrc, Ternary),
                (KeyField::IpSrc, Ternary),
                (KeyField::IpDst, Ternary),
                (KeyField::Dscp, Ternary),
                (KeyField::NextProtocol, Ternary),
                (KeyField::L4SrcPort, Ternary),
                (KeyField::L4DstPort, Ternary),
            ],
            IdentificationKind::IpExact => [
                (KeyField::EthDst, Exact),
                (KeyField::EthSrc, Absent),
                (KeyField::IpSrc, Exact),
                (KeyField::IpDst, Exact),
                (KeyField::Dscp, Exact),
                (KeyField::NextProtocol, Exact),
                (KeyField::L4SrcPort, Exact),
                (KeyField::L4DstPort, Exact),
            ],
        };
        for (field, rule) in rules {
            match (rule, self.field(field)) {
                (Absent, Some(_)) => return Err(KeyShapeError::Unexpected { field, kind }),
                (Exact, None) => return Err(KeyShapeError::Missing { field, kind }),
                (Exact, Some(t)) if !t.is_exact_for(field) => {
                    return Err(KeyShapeError::NotExact { field, kind })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn matches(&self, frame: &Frame) -> bool {
        let Some(vlan) = frame.vlan else { return false };
        if vlan.vid != self.vlan_id {
            return false;
        }
        let macs = [
            (self.eth_dst, frame.eth_dst.to_u64()),
            (self.eth_src, frame.eth_src.to_u64()),
        ];
        if !macs.iter().all(|(t, v)| t.is_none_or(|t| t.matches(*v))) {
            return false;
        }
        if !self.has_ip_fields() {
            return true;
        }
        let Some(ip) = frame.ip else { return false };
        let ip_values = ip_field_values(&ip);
        IP_FIELDS
            .iter()
            .zip(ip_values)
            .all(|(f, v)| self.field(*f).is_none_or(|t| t.matches(v)))
    }

    fn exact_index(&self) -> ExactKey {
        let v = |t: Option<Ternary>| t.map_or(0, |t| t.value);
        [
            self.vlan_id as u64,
            v(self.eth_dst) & KeyField::EthDst.width_mask(),
            v(self.ip_src) & KeyField::IpSrc.width_mask(),
            v(self.ip_dst) & KeyField::IpDst.width_mask(),
            v(self.dscp) & KeyField::Dscp.width_mask(),
            v(self.next_protocol) & KeyField::NextProtocol.width_mask(),
            v(self.l4_src_port) & KeyField::L4SrcPort.width_mask(),
            v(self.l4_dst_port) & KeyField::L4DstPort.width_mask(),
        ]
    }
}

const IP_FIELDS: [KeyField; 6] = [
    KeyField::IpSrc,
    KeyField::IpDst,
    KeyField::Dscp,
    KeyField::NextProtocol,
    KeyField::L4SrcPort,
    KeyField::L4DstPort,
];

fn ip_field_values(ip: &crate::frame::IpFields) -> [u64; 6] {
    [
        u32::from(ip.src) as u64,
        u32::from(ip.dst) as u64,
        ip.dscp as u64,
        ip.protocol as u64,
        ip.src_port as u64,
        ip.dst_port as u64,
    ]
}

type ExactKey = [u64; 8];

#[derive(Clone, Copy)]
enum FieldRule {
    Absent,
    Exact,
    Ternary,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyShapeError {
    #[error("{kind:?} keys do not match on {field:?}")]
    Unexpected { field: KeyField, kind: IdentificationKind },
    #[error("{kind:?} keys require {field:?}")]
    Missing { field: KeyField, kind: IdentificationKind },
    #[error("{kind:?} keys match {field:?} exactly; a partial mask was given")]
    NotExact { field: KeyField, kind: IdentificationKind },
    #[error("VLAN ID {0} exceeds 12 bits")]
    VlanOutOfRange(u16),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FilterError {
    #[error("stream identification table full: {kind} supports at most {capacity} entries")]
    CapacityExceeded { kind: &'static str, capacity: usize },
    #[error("duplicate stream handle {0}")]
    DuplicateHandle(StreamHandle),
    #[error("stream handle {handle} duplicates the exact key of stream handle {existing}")]
    DuplicateKey { handle: StreamHandle, existing: StreamHandle },
    #[error("stream handle {handle}: {source}")]
    KeyShape {
        handle: StreamHandle,
        #[source]
        source: KeyShapeError,
    },
    #[error("unknown stream handle {0}")]
    UnknownHandle(StreamHandle),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamFilterEntry {
    pub key: StreamIdKey,
    pub stream_handle: StreamHandle,
    pub gate_id: Option<GateId>,
    pub meter_id: Option<MeterId>,
    /// Largest admitted Ethernet frame size in bytes.
    pub max_sdu: Option<u32>,
    /// Permanently block the stream on the first oversized frame.
    pub max_sdu_exceeded: bool,
}

impl StreamFilterEntry {
    pub fn new(key: StreamIdKey, stream_handle: StreamHandle) -> Self {
        StreamFilterEntry {
            key,
            stream_handle,
            gate_id: None,
            meter_id: None,
            max_sdu: None,
            max_sdu_exceeded: false,
        }
    }
}

/// Result of a successful lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    pub stream_handle: StreamHandle,
    pub gate_id: Option<GateId>,
    pub meter_id: Option<MeterId>,
    pub(crate) index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SduDecision {
    Pass,
    /// Oversized; only this frame is dropped.
    Drop,
    /// Oversized and the stream is now permanently blocked.
    DropAndBlock,
    /// The stream was already blocked by an earlier frame.
    Blocked,
}

#[derive(Debug, Clone)]
pub struct FilterTable {
    kind: IdentificationKind,
    capacity: usize,
    entries: Vec<StreamFilterEntry>,
    blocked: Vec<bool>,
    handles: HashMap<StreamHandle, usize>,
    exact: HashMap<ExactKey, usize>,
    by_source: HashMap<(u64, u16), Vec<usize>>,
}

impl FilterTable {
    pub fn new(kind: IdentificationKind) -> Self {
        Self::with_capacity(kind, kind.default_capacity())
    }

    pub fn with_capacity(kind: IdentificationKind, capacity: usize) -> Self {
        FilterTable {
            kind,
            capacity,
            entries: Vec::new(),
            blocked: Vec::new(),
            handles: HashMap::new(),
            exact: HashMap::new(),
            by_source: HashMap::new(),
        }
    }

    pub fn kind(&self) -> IdentificationKind {
        self.kind
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StreamFilterEntry] {
        &self.entries
    }

    pub fn insert(&mut self, entry: StreamFilterEntry) -> Result<(), FilterError> {
        let handle = entry.stream_handle;
        if self.entries.len() >= self.capacity {
            return Err(FilterError::CapacityExceeded { kind: self.kind.name(), capacity: self.capacity });
        }
        entry.key.check(self.kind).map_err(|source| FilterError::KeyShape { handle, source })?;
        if self.handles.contains_key(&handle) {
            return Err(FilterError::DuplicateHandle(handle));
        }
        let idx = self.entries.len();
        match self.kind {
            IdentificationKind::NullStream | IdentificationKind::IpExact => {
                let k = entry.key.exact_index();
                if let Some(&existing) = self.exact.get(&k) {
                    let existing = self.entries[existing].stream_handle;
                    return Err(FilterError::DuplicateKey { handle, existing });
                }
                self.exact.insert(k, idx);
            }
            IdentificationKind::SourceMac => {
                let src = entry.key.eth_src.map_or(0, |t| t.value & KeyField::EthSrc.width_mask());
                self.by_source.entry((src, entry.key.vlan_id)).or_default().push(idx);
            }
            IdentificationKind::IpTernary => {}
        }
        self.handles.insert(handle, idx);
        self.entries.push(entry);
        self.blocked.push(false);
        Ok(())
    }

    pub fn classify(&self, frame: &Frame) -> Option<Classification> {
        let vlan = frame.vlan?;
        let idx = match self.kind {
            IdentificationKind::NullStream => {
                let mut k = [0u64; 8];
                k[0] = vlan.vid as u64;
                k[1] = frame.eth_dst.to_u64();
                self.exact.get(&k).copied()
            }
            IdentificationKind::IpExact => {
                let ip = frame.ip?;
                let v = ip_field_values(&ip);
                let k = [vlan.vid as u64, frame.eth_dst.to_u64(), v[0], v[1], v[2], v[3], v[4], v[5]];
                self.exact.get(&k).copied()
            }
            IdentificationKind::SourceMac => self
                .by_source
                .get(&(frame.eth_src.to_u64(), vlan.vid))?
                .iter()
                .copied()
                .find(|&i| self.entries[i].key.matches(frame)),
            IdentificationKind::IpTernary => self.entries.iter().position(|e| e.key.matches(frame)),
        }?;
        let e = &self.entries[idx];
        Some(Classification {
            stream_handle: e.stream_handle,
            gate_id: e.gate_id,
            meter_id: e.meter_id,
            index: idx,
        })
    }

    /// Applies the maximum-SDU filter for a classified frame, updating the
    /// stream's blocked flag.
    pub fn check_sdu(&mut self, c: &Classification, frame_size: u32) -> SduDecision {
        let entry = &self.entries[c.index];
        if entry.max_sdu.is_some_and(|max| frame_size > max) {
            if entry.max_sdu_exceeded {
                self.blocked[c.index] = true;
                return SduDecision::DropAndBlock;
            }
            return SduDecision::Drop;
        }
        if self.blocked[c.index] {
            return SduDecision::Blocked;
        }
        SduDecision::Pass
    }

    pub fn is_blocked(&self, handle: StreamHandle) -> Option<bool> {
        self.handles.get(&handle).map(|&i| self.blocked[i])
    }

    /// Control-plane reset of a stream's blocked flag.
    pub fn reset_stream(&mut self, handle: StreamHandle) -> Result<(), FilterError> {
        let i = *self.handles.get(&handle).ok_or(FilterError::UnknownHandle(handle))?;
        self.blocked[i] = false;
        Ok(())
    }
}
