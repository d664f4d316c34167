//! Simulated Ethernet frames as seen by the switch pipeline.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{Nanos, Timestamp48};

pub type PortId = u16;

/// Bytes prepended to a frame for its second pipeline pass.
pub const RECIRC_HEADER_LEN: u32 = 7;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid MAC address {0:?}")]
pub struct ParseMacError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);

    pub fn to_u64(self) -> u64 {
        self.0.iter().fold(0u64, |acc, b| (acc << 8) | *b as u64)
    }

    pub fn from_u64(v: u64) -> Self {
        let b = v.to_be_bytes();
        MacAddr([b[2], b[3], b[4], b[5], b[6], b[7]])
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(f, "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", b[0], b[1], b[2], b[3], b[4], b[5])
    }
}

impl FromStr for MacAddr {
    type Err = ParseMacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split([':', '-']);
        for byte in out.iter_mut() {
            let p = parts.next().ok_or_else(|| ParseMacError(s.to_string()))?;
            if p.len() != 2 {
                return Err(ParseMacError(s.to_string()));
            }
            *byte = u8::from_str_radix(p, 16).map_err(|_| ParseMacError(s.to_string()))?;
        }
        if parts.next().is_some() {
            return Err(ParseMacError(s.to_string()));
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 802.1Q tag fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct VlanTag {
    pub pcp: u8,
    pub dei: bool,
    pub vid: u16,
}

/// IPv4 5-tuple plus DSCP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IpFields {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    #[serde(default)]
    pub dscp: u8,
    #[serde(default)]
    pub protocol: u8,
    #[serde(default)]
    pub src_port: u16,
    #[serde(default)]
    pub dst_port: u16,
}

/// Metadata carried across the recirculation: the frame size learned in
/// egress and the Δ-adjusted relative position in the hyperperiod.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecircHeader {
    pub frame_size: u32,
    pub t_rel_adj: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub ingress_port: PortId,
    /// Ingress timestamp of the first pass.
    pub arrival: Timestamp48,
    /// Ethernet frame size in bytes, without any recirculation header.
    pub size: u32,
    pub eth_dst: MacAddr,
    pub eth_src: MacAddr,
    pub vlan: Option<VlanTag>,
    pub ip: Option<IpFields>,
    pub recirc: Option<RecircHeader>,
}

impl Frame {
    pub fn new(ingress_port: PortId, arrival: Timestamp48, size: u32) -> Self {
        Frame {
            ingress_port,
            arrival,
            size,
            eth_dst: MacAddr::default(),
            eth_src: MacAddr::default(),
            vlan: None,
            ip: None,
            recirc: None,
        }
    }

    pub fn with_vlan(mut self, vid: u16, pcp: u8, dei: bool) -> Self {
        self.vlan = Some(VlanTag { pcp, dei, vid });
        self
    }

    pub fn with_macs(mut self, dst: MacAddr, src: MacAddr) -> Self {
        self.eth_dst = dst;
        self.eth_src = src;
        self
    }

    pub fn with_ip(mut self, ip: IpFields) -> Self {
        self.ip = Some(ip);
        self
    }

    /// Size on the wire, including the recirculation header while attached.
    pub fn wire_size(&self) -> u32 {
        match self.recirc {
            Some(_) => self.size + RECIRC_HEADER_LEN,
            None => self.size,
        }
    }

    pub fn pcp(&self) -> u8 {
        self.vlan.map_or(0, |v| v.pcp)
    }

    pub fn dei(&self) -> bool {
        self.vlan.is_some_and(|v| v.dei)
    }
}
