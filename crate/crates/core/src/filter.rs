//! L2-L4 header decoding and the protocol/port filter applied before tuple
//! generation.

use std::collections::BTreeSet;
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::capture::PacketRecord;

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;

/// Why a frame was dropped before filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DropReason {
    #[error("not an IP frame")]
    NotIp,
    #[error("header extends past the captured bytes")]
    Truncated,
    #[error("non-initial IP fragment")]
    Fragment,
    #[error("malformed IP or transport header")]
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedHeaders {
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub ip_proto: u8,
    /// Present only for TCP and UDP.
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    /// Offset of the L4 payload within the frame.
    pub payload_offset: usize,
    pub payload_len: usize,
}

impl ParsedHeaders {
    pub fn payload<'a>(&self, frame: &'a [u8]) -> &'a [u8] {
        &frame[self.payload_offset..self.payload_offset + self.payload_len]
    }
}

#[inline]
fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

/// Decodes Ethernet (one optional 802.1Q tag), IPv4 or IPv6 and the TCP/UDP
/// ports. Never reads past `pkt.data`.
pub fn decode_headers(pkt: &PacketRecord) -> Result<ParsedHeaders, DropReason> {
    decode_frame(&pkt.data)
}

pub fn decode_frame(frame: &[u8]) -> Result<ParsedHeaders, DropReason> {
    if frame.len() < 14 {
        return Err(DropReason::Truncated);
    }
    let mut off = 12;
    let mut ethertype = be16(frame, off);
    off += 2;
    if ethertype == ETHERTYPE_VLAN {
        if frame.len() < off + 4 {
            return Err(DropReason::Truncated);
        }
        ethertype = be16(frame, off + 2);
        off += 4;
        if ethertype == ETHERTYPE_VLAN || ethertype == ETHERTYPE_QINQ {
            return Err(DropReason::NotIp);
        }
    }
    match ethertype {
        ETHERTYPE_IPV4 => decode_ipv4(frame, off),
        ETHERTYPE_IPV6 => decode_ipv6(frame, off),
        _ => Err(DropReason::NotIp),
    }
}

fn decode_ipv4(frame: &[u8], off: usize) -> Result<ParsedHeaders, DropReason> {
    if frame.len() < off + 20 {
        return Err(DropReason::Truncated);
    }
    let ip = &frame[off..];
    if ip[0] >> 4 != 4 {
        return Err(DropReason::Malformed);
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    if ihl < 20 {
        return Err(DropReason::Malformed);
    }
    if ip.len() < ihl {
        return Err(DropReason::Truncated);
    }
    let total_len = usize::from(be16(ip, 2));
    if total_len < ihl {
        return Err(DropReason::Malformed);
    }
    if be16(ip, 6) & 0x1fff != 0 {
        return Err(DropReason::Fragment);
    }
    let proto = ip[9];
    let src = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let ip_end = (off + total_len).min(frame.len());
    decode_l4(frame, off + ihl, ip_end, proto, src.into(), dst.into())
}

fn decode_ipv6(frame: &[u8], off: usize) -> Result<ParsedHeaders, DropReason> {
    if frame.len() < off + 40 {
        return Err(DropReason::Truncated);
    }
    let ip = &frame[off..off + 40];
    if ip[0] >> 4 != 6 {
        return Err(DropReason::Malformed);
    }
    let payload_len = usize::from(be16(ip, 4));
    let mut next = ip[6];
    let mut a = [0u8; 16];
    a.copy_from_slice(&ip[8..24]);
    let src = Ipv6Addr::from(a);
    a.copy_from_slice(&ip[24..40]);
    let dst = Ipv6Addr::from(a);
    let ip_end = (off + 40 + payload_len).min(frame.len());
    let mut l4 = off + 40;
    // Hop-by-hop, routing and fragment headers; anything else is treated as
    // the upper-layer protocol.
    while matches!(next, 0 | 43 | 44) {
        if frame.len() < l4 + 8 {
            return Err(DropReason::Truncated);
        }
        let ext = &frame[l4..l4 + 8];
        if next == 44 {
            if be16(ext, 2) >> 3 != 0 {
                return Err(DropReason::Fragment);
            }
            next = ext[0];
            l4 += 8;
        } else {
            next = ext[0];
            l4 += (usize::from(ext[1]) + 1) * 8;
        }
    }
    if l4 > frame.len() {
        return Err(DropReason::Truncated);
    }
    decode_l4(frame, l4, ip_end, next, src.into(), dst.into())
}

fn decode_l4(
    frame: &[u8],
    l4: usize,
    ip_end: usize,
    proto: u8,
    src_ip: IpAddr,
    dst_ip: IpAddr,
) -> Result<ParsedHeaders, DropReason> {
    let (ports, header_len) = match proto {
        PROTO_TCP => {
            if frame.len() < l4 + 20 {
                return Err(DropReason::Truncated);
            }
            let doff = usize::from(frame[l4 + 12] >> 4) * 4;
            if doff < 20 {
                return Err(DropReason::Malformed);
            }
            if frame.len() < l4 + doff {
                return Err(DropReason::Truncated);
            }
            (Some((be16(frame, l4), be16(frame, l4 + 2))), doff)
        }
        PROTO_UDP => {
            if frame.len() < l4 + 8 {
                return Err(DropReason::Truncated);
            }
            (Some((be16(frame, l4), be16(frame, l4 + 2))), 8)
        }
        _ => (None, 0),
    };
    let payload_offset = l4 + header_len;
    Ok(ParsedHeaders {
        src_ip,
        dst_ip,
        ip_proto: proto,
        src_port: ports.map(|p| p.0),
        dst_port: ports.map(|p| p.1),
        payload_offset,
        payload_len: ip_end.saturating_sub(payload_offset),
    })
}

/// IP protocol number; (de)serialized as `"tcp"`/`"udp"`/`"icmp"` or a number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IpProto(pub u8);

impl IpProto {
    pub const TCP: IpProto = IpProto(PROTO_TCP);
    pub const UDP: IpProto = IpProto(PROTO_UDP);

    fn name(self) -> Option<&'static str> {
        match self.0 {
            1 => Some("icmp"),
            PROTO_TCP => Some("tcp"),
            PROTO_UDP => Some("udp"),
            _ => None,
        }
    }
}

impl fmt::Display for IpProto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => f.write_str(n),
            None => write!(f, "{}", self.0),
        }
    }
}

impl Serialize for IpProto {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.name() {
            Some(n) => s.serialize_str(n),
            None => s.serialize_u8(self.0),
        }
    }
}

impl<'de> Deserialize<'de> for IpProto {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(u8),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(n) => Ok(IpProto(n)),
            Repr::Name(s) => match s.to_ascii_lowercase().as_str() {
                "tcp" => Ok(IpProto::TCP),
                "udp" => Ok(IpProto::UDP),
                "icmp" => Ok(IpProto(1)),
                other => Err(serde::de::Error::custom(format!("unknown protocol name {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterError {
    #[error("dst_ports must not be empty when given")]
    EmptyPortSet,
}

/// A fixed protocol + destination-port predicate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proto: Option<IpProto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_ports: Option<BTreeSet<u16>>,
}

impl FilterSpec {
    /// TCP to the given destination ports.
    pub fn tcp_ports(ports: &[u16]) -> Self {
        FilterSpec { proto: Some(IpProto::TCP), dst_ports: Some(ports.iter().copied().collect()) }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        match &self.dst_ports {
            Some(p) if p.is_empty() => Err(FilterError::EmptyPortSet),
            _ => Ok(()),
        }
    }
}

pub fn matches(spec: &FilterSpec, hdrs: &ParsedHeaders) -> bool {
    let proto_ok = spec.proto.is_none_or(|p| p.0 == hdrs.ip_proto);
    let port_ok = match &spec.dst_ports {
        None => true,
        Some(ports) => hdrs.dst_port.is_some_and(|p| ports.contains(&p)),
    };
    proto_ok && port_ok
}
