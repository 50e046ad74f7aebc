//! Turns filtered packets into `<src ip, hostname>` observations.
//!
//! Hostnames come from the first HTTP/1.x `Host` header of a request or from
//! the SNI extension of a TLS ClientHello. Only the first request in a packet
//! is examined and nothing is reassembled across packets.

mod http;
mod log;
mod tls;

use std::net::IpAddr;
use std::sync::Arc;

use thiserror::Error;

use crate::capture::PacketRecord;
use crate::filter::{self, DropReason, FilterSpec, ParsedHeaders};
use crate::par::{self, Exec};

pub use http::extract_http_host;
pub use log::{TupleCsvError, TupleCsvReader, TupleCsvWriter, CSV_HEADER};
pub use tls::extract_tls_sni;

pub const MAX_HOSTNAME_LEN: usize = 253;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no HTTP Host header")]
pub struct NoHost;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no TLS server name")]
pub struct NoSni;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("packet carries no extractable hostname")]
pub struct NoTuple;

/// One observation: a user (source address) visited a hostname.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlowTuple {
    pub src_ip: IpAddr,
    pub hostname: Arc<str>,
    pub ts_micros: u64,
}

impl FlowTuple {
    pub fn new(src_ip: IpAddr, hostname: impl Into<Arc<str>>, ts_micros: u64) -> Self {
        FlowTuple { src_ip, hostname: hostname.into(), ts_micros }
    }
}

#[inline]
fn allowed_host_byte(b: u8) -> bool {
    matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'.' | b'-' | b'_')
}

/// True when `h` already satisfies the normalized hostname rules.
pub fn is_normalized_hostname(h: &str) -> bool {
    !h.is_empty() && h.len() <= MAX_HOSTNAME_LEN && !h.ends_with('.') && h.bytes().all(allowed_host_byte)
}

/// Normalizes a raw host value: trims spaces and tabs, drops a `:<digits>`
/// port suffix and one trailing dot, lowercases, and rejects anything left
/// outside `[a-z0-9._-]` (which covers IDNs that are not already punycode).
pub fn normalize_host_bytes(raw: &[u8]) -> Option<String> {
    let start = raw.iter().position(|&b| b != b' ' && b != b'\t')?;
    let end = raw.iter().rposition(|&b| b != b' ' && b != b'\t')? + 1;
    let mut v = &raw[start..end];
    if let Some(colon) = v.iter().rposition(|&b| b == b':') {
        let port = &v[colon + 1..];
        if !port.is_empty() && port.iter().all(u8::is_ascii_digit) {
            v = &v[..colon];
        }
    }
    if let Some(stripped) = v.strip_suffix(b".") {
        v = stripped;
    }
    let host: String = v.iter().map(|b| b.to_ascii_lowercase() as char).collect();
    if v.is_ascii() && is_normalized_hostname(&host) {
        Some(host)
    } else {
        None
    }
}

pub fn normalize_hostname(raw: &str) -> Option<String> {
    normalize_host_bytes(raw.as_bytes())
}

/// Extracts a tuple from a decoded packet. Port 80 tries HTTP only, port 443
/// TLS only, anything else HTTP then TLS.
pub fn make_tuple(pkt: &PacketRecord, hdrs: &ParsedHeaders) -> Result<FlowTuple, NoTuple> {
    let payload = hdrs.payload(&pkt.data);
    hostname_from_payload(payload, hdrs.dst_port).map(|h| FlowTuple::new(hdrs.src_ip, h, pkt.ts_micros)).ok_or(NoTuple)
}

fn hostname_from_payload(payload: &[u8], dst_port: Option<u16>) -> Option<String> {
    if payload.is_empty() {
        return None;
    }
    match dst_port {
        Some(80) => extract_http_host(payload).ok(),
        Some(443) => extract_tls_sni(payload).ok(),
        _ => extract_http_host(payload).ok().or_else(|| extract_tls_sni(payload).ok()),
    }
}

/// Outcome of running one frame through decode, filter and extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameOutcome {
    Tuple(FlowTuple),
    /// Not IP, a non-initial fragment, or rejected by the filter.
    FilteredOut,
    /// Passed the filter but carried no hostname, or had malformed headers.
    ParseFailure,
    /// Headers cut short by the capture length.
    Truncated,
}

pub fn process_frame(spec: &FilterSpec, ts_micros: u64, frame: &[u8]) -> FrameOutcome {
    let hdrs = match filter::decode_frame(frame) {
        Ok(h) => h,
        Err(DropReason::NotIp | DropReason::Fragment) => return FrameOutcome::FilteredOut,
        Err(DropReason::Truncated) => return FrameOutcome::Truncated,
        Err(DropReason::Malformed) => return FrameOutcome::ParseFailure,
    };
    if !filter::matches(spec, &hdrs) {
        return FrameOutcome::FilteredOut;
    }
    match hostname_from_payload(hdrs.payload(frame), hdrs.dst_port) {
        Some(h) => FrameOutcome::Tuple(FlowTuple::new(hdrs.src_ip, h, ts_micros)),
        None => FrameOutcome::ParseFailure,
    }
}

/// Decode/filter/extract a batch of packets, preserving input order.
pub fn process_batch(exec: Exec, spec: &FilterSpec, batch: &[PacketRecord]) -> Vec<FrameOutcome> {
    par::map_slice(exec, batch, |p| process_frame(spec, p.ts_micros, &p.data))
}
