use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::frame::{Frame, IpFields, MacAddr, PortId, VlanTag};
use crate::time::{Nanos, Timestamp48};

/// Header fields stamped on every frame of a source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HeaderTemplate {
    pub eth_dst: MacAddr,
    pub eth_src: MacAddr,
    pub vlan: Option<VlanTag>,
    pub ip: Option<IpFields>,
}

impl HeaderTemplate {
    pub fn vlan(vid: u16, pcp: u8, dei: bool) -> Self {
        HeaderTemplate { vlan: Some(VlanTag { pcp, dei, vid }), ..Default::default() }
    }

    pub fn untagged() -> Self {
        HeaderTemplate::default()
    }

    pub fn with_ip(mut self, src: Ipv4Addr, dst: Ipv4Addr) -> Self {
        self.ip = Some(IpFields { src, dst, dscp: 0, protocol: 17, src_port: 0, dst_port: 0 });
        self
    }
}

/// Constant bit rate source. Departure k is at
/// `start + ⌊k · size · 8·10⁹ / rate⌋`, so the long-run rate is exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CbrSource {
    pub id: u32,
    pub name: String,
    pub port: PortId,
    /// bit/s
    pub rate: u64,
    pub frame_size: u32,
    pub start: Nanos,
    /// First instant at which no more frames are sent.
    pub stop: Nanos,
    pub header: HeaderTemplate,
    /// Index of the egress link forwarded frames join, if any.
    pub link: Option<usize>,
    pub measure_latency: bool,
}

impl CbrSource {
    pub fn new(id: u32, port: PortId, rate: u64, frame_size: u32, header: HeaderTemplate) -> Self {
        CbrSource {
            id,
            name: format!("source{id}"),
            port,
            rate,
            frame_size,
            start: 0,
            stop: Nanos::MAX,
            header,
            link: None,
            measure_latency: false,
        }
    }

    /// Time of the k-th departure, or `None` at or past `stop`.
    pub fn departure(&self, k: u64) -> Option<Nanos> {
        if self.rate == 0 {
            return None;
        }
        let offset = k as u128 * self.frame_size as u128 * 8_000_000_000 / self.rate as u128;
        let t = self.start as u128 + offset;
        (t < self.stop as u128).then_some(t as Nanos)
    }

    pub fn frame(&self, arrival: Timestamp48) -> Frame {
        Frame {
            ingress_port: self.port,
            arrival,
            size: self.frame_size,
            eth_dst: self.header.eth_dst,
            eth_src: self.header.eth_src,
            vlan: self.header.vlan,
            ip: self.header.ip,
            recirc: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn departures_are_exact() {
        let mut s = CbrSource::new(1, 1, 90_000_000, 64, HeaderTemplate::untagged());
        // 512 bits at 90 Mb/s = 5688.89 ns
        assert_eq!(s.departure(0), Some(0));
        assert_eq!(s.departure(1), Some(5688));
        assert_eq!(s.departure(9), Some(51_200));
        s.stop = 51_200;
        assert_eq!(s.departure(9), None);
        let count = (0..).take_while(|k| s.departure(*k).is_some()).count();
        assert_eq!(count, 9);
    }
}
