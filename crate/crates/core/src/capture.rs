//! Packet sources: classic pcap trace files, in-memory buffers and synthetic
//! generators, plus the discard sink used as the capture throughput baseline.
//!
//! Only the classic libpcap format is understood (24-byte global header,
//! 16-byte record headers, Ethernet link type). Nanosecond traces are
//! truncated to microseconds on read.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

pub const MAGIC_MICRO: u32 = 0xa1b2_c3d4;
pub const MAGIC_NANO: u32 = 0xa1b2_3c4d;
pub const LINKTYPE_ETHERNET: u32 = 1;
pub const GLOBAL_HEADER_LEN: usize = 24;
pub const RECORD_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("unrecognized pcap magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported link type {0} (only Ethernet is accepted)")]
    UnsupportedLinkType(u32),
    #[error("pcap global header is truncated")]
    TruncatedHeader,
    #[error("truncated record: header announces {expected} bytes, {available} available")]
    TruncatedRecord { expected: usize, available: usize },
    #[error("timestamp {0} us does not fit a pcap record header")]
    TimestampRange(u64),
}

/// One captured link-layer frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub ts_micros: u64,
    /// Length on the wire; never smaller than the captured length.
    pub original_len: u32,
    pub data: Vec<u8>,
}

impl PacketRecord {
    pub fn new(ts_micros: u64, data: Vec<u8>) -> Self {
        let original_len = data.len() as u32;
        PacketRecord { ts_micros, original_len, data }
    }

    pub fn captured_len(&self) -> usize {
        self.data.len()
    }
}

/// Borrowed view of a record inside an in-memory pcap buffer.
#[derive(Debug, Clone, Copy)]
pub struct PacketRef<'a> {
    pub ts_micros: u64,
    pub original_len: u32,
    pub data: &'a [u8],
}

impl PacketRef<'_> {
    pub fn to_owned(&self) -> PacketRecord {
        PacketRecord { ts_micros: self.ts_micros, original_len: self.original_len, data: self.data.to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Big,
    Little,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsResolution {
    Micro,
    Nano,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapHeader {
    /// Magic after endianness normalization: [`MAGIC_MICRO`] or [`MAGIC_NANO`].
    pub magic: u32,
    pub endianness: Endianness,
    pub ts_resolution: TsResolution,
    pub version_major: u16,
    pub version_minor: u16,
    pub thiszone: i32,
    pub sigfigs: u32,
    pub snaplen: u32,
    pub linktype: u32,
}

impl PcapHeader {
    pub fn new(endianness: Endianness, ts_resolution: TsResolution, snaplen: u32) -> Self {
        let magic = match ts_resolution {
            TsResolution::Micro => MAGIC_MICRO,
            TsResolution::Nano => MAGIC_NANO,
        };
        PcapHeader {
            magic,
            endianness,
            ts_resolution,
            version_major: 2,
            version_minor: 4,
            thiszone: 0,
            sigfigs: 0,
            snaplen,
            linktype: LINKTYPE_ETHERNET,
        }
    }

    pub fn parse(buf: &[u8]) -> Result<Self, CaptureError> {
        if buf.len() < GLOBAL_HEADER_LEN {
            return Err(CaptureError::TruncatedHeader);
        }
        let raw = [buf[0], buf[1], buf[2], buf[3]];
        let (endianness, magic) = match (u32::from_le_bytes(raw), u32::from_be_bytes(raw)) {
            (m @ (MAGIC_MICRO | MAGIC_NANO), _) => (Endianness::Little, m),
            (_, m @ (MAGIC_MICRO | MAGIC_NANO)) => (Endianness::Big, m),
            (m, _) => return Err(CaptureError::BadMagic(m)),
        };
        let ts_resolution = if magic == MAGIC_NANO { TsResolution::Nano } else { TsResolution::Micro };
        let u16_at = |o: usize| read_u16(endianness, [buf[o], buf[o + 1]]);
        let u32_at = |o: usize| read_u32(endianness, [buf[o], buf[o + 1], buf[o + 2], buf[o + 3]]);
        let header = PcapHeader {
            magic,
            endianness,
            ts_resolution,
            version_major: u16_at(4),
            version_minor: u16_at(6),
            thiszone: u32_at(8) as i32,
            sigfigs: u32_at(12),
            snaplen: u32_at(16),
            linktype: u32_at(20),
        };
        if header.linktype != LINKTYPE_ETHERNET {
            return Err(CaptureError::UnsupportedLinkType(header.linktype));
        }
        Ok(header)
    }

    pub fn to_bytes(&self) -> [u8; GLOBAL_HEADER_LEN] {
        let mut out = [0u8; GLOBAL_HEADER_LEN];
        let e = self.endianness;
        out[0..4].copy_from_slice(&write_u32(e, self.magic));
        out[4..6].copy_from_slice(&write_u16(e, self.version_major));
        out[6..8].copy_from_slice(&write_u16(e, self.version_minor));
        out[8..12].copy_from_slice(&write_u32(e, self.thiszone as u32));
        out[12..16].copy_from_slice(&write_u32(e, self.sigfigs));
        out[16..20].copy_from_slice(&write_u32(e, self.snaplen));
        out[20..24].copy_from_slice(&write_u32(e, self.linktype));
        out
    }

    /// Decodes a 16-byte record header into `(ts_micros, incl_len, orig_len)`.
    fn decode_record(&self, h: &[u8]) -> (u64, u32, u32) {
        let e = self.endianness;
        let at = |o: usize| read_u32(e, [h[o], h[o + 1], h[o + 2], h[o + 3]]);
        let (sec, sub, incl, orig) = (at(0), at(4), at(8), at(12));
        let sub_us = match self.ts_resolution {
            TsResolution::Micro => u64::from(sub),
            TsResolution::Nano => u64::from(sub) / 1000,
        };
        (u64::from(sec) * 1_000_000 + sub_us, incl, orig)
    }

    fn encode_record(&self, ts_micros: u64, incl: u32, orig: u32) -> Result<[u8; RECORD_HEADER_LEN], CaptureError> {
        let sec = u32::try_from(ts_micros / 1_000_000).map_err(|_| CaptureError::TimestampRange(ts_micros))?;
        let us = (ts_micros % 1_000_000) as u32;
        let sub = match self.ts_resolution {
            TsResolution::Micro => us,
            TsResolution::Nano => us * 1000,
        };
        let e = self.endianness;
        let mut out = [0u8; RECORD_HEADER_LEN];
        out[0..4].copy_from_slice(&write_u32(e, sec));
        out[4..8].copy_from_slice(&write_u32(e, sub));
        out[8..12].copy_from_slice(&write_u32(e, incl));
        out[12..16].copy_from_slice(&write_u32(e, orig));
        Ok(out)
    }
}

fn read_u16(e: Endianness, b: [u8; 2]) -> u16 {
    match e {
        Endianness::Big => u16::from_be_bytes(b),
        Endianness::Little => u16::from_le_bytes(b),
    }
}

fn read_u32(e: Endianness, b: [u8; 4]) -> u32 {
    match e {
        Endianness::Big => u32::from_be_bytes(b),
        Endianness::Little => u32::from_le_bytes(b),
    }
}

fn write_u16(e: Endianness, v: u16) -> [u8; 2] {
    match e {
        Endianness::Big => v.to_be_bytes(),
        Endianness::Little => v.to_le_bytes(),
    }
}

fn write_u32(e: Endianness, v: u32) -> [u8; 4] {
    match e {
        Endianness::Big => v.to_be_bytes(),
        Endianness::Little => v.to_le_bytes(),
    }
}

/// A single-consumer stream of packets.
pub trait PacketSource {
    /// `Ok(None)` marks end-of-stream. A [`CaptureError::TruncatedRecord`] is
    /// reported once and followed by end-of-stream.
    fn next_packet(&mut self) -> Result<Option<PacketRecord>, CaptureError>;
}

impl<S: PacketSource + ?Sized> PacketSource for Box<S> {
    fn next_packet(&mut self) -> Result<Option<PacketRecord>, CaptureError> {
        (**self).next_packet()
    }
}

/// Streaming reader over any `Read` carrying a classic pcap file.
pub struct PcapReader<R> {
    inner: R,
    header: PcapHeader,
    done: bool,
}

/// Opens a trace file and parses its global header.
pub fn open_pcap(path: impl AsRef<Path>) -> Result<PcapReader<BufReader<File>>, CaptureError> {
    let file = File::open(path)?;
    PcapReader::new(BufReader::with_capacity(1 << 16, file))
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, CaptureError> {
        let mut buf = [0u8; GLOBAL_HEADER_LEN];
        let got = read_full(&mut inner, &mut buf)?;
        if got < GLOBAL_HEADER_LEN {
            return Err(CaptureError::TruncatedHeader);
        }
        let header = PcapHeader::parse(&buf)?;
        Ok(PcapReader { inner, header, done: false })
    }

    pub fn header(&self) -> &PcapHeader {
        &self.header
    }
}

/// Reads until `buf` is full or EOF; returns the byte count read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

impl<R: Read> PacketSource for PcapReader<R> {
    fn next_packet(&mut self) -> Result<Option<PacketRecord>, CaptureError> {
        if self.done {
            return Ok(None);
        }
        let mut rh = [0u8; RECORD_HEADER_LEN];
        let got = read_full(&mut self.inner, &mut rh)?;
        if got == 0 {
            self.done = true;
            return Ok(None);
        }
        if got < RECORD_HEADER_LEN {
            self.done = true;
            return Err(CaptureError::TruncatedRecord { expected: RECORD_HEADER_LEN, available: got });
        }
        let (ts_micros, incl, orig) = self.header.decode_record(&rh);
        // Grows with the bytes actually present, so a corrupt length cannot
        // trigger a huge allocation.
        let mut data = Vec::new();
        (&mut self.inner).take(u64::from(incl)).read_to_end(&mut data)?;
        if data.len() < incl as usize {
            self.done = true;
            return Err(CaptureError::TruncatedRecord { expected: incl as usize, available: data.len() });
        }
        Ok(Some(PacketRecord { ts_micros, original_len: orig.max(incl), data }))
    }
}

/// Zero-copy reader over a pcap file held in memory.
pub struct PcapSlice<'a> {
    buf: &'a [u8],
    pos: usize,
    header: PcapHeader,
    done: bool,
}

impl<'a> PcapSlice<'a> {
    pub fn new(buf: &'a [u8]) -> Result<Self, CaptureError> {
        let header = PcapHeader::parse(buf)?;
        Ok(PcapSlice { buf, pos: GLOBAL_HEADER_LEN, header, done: false })
    }

    pub fn header(&self) -> &PcapHeader {
        &self.header
    }

    pub fn next_ref(&mut self) -> Result<Option<PacketRef<'a>>, CaptureError> {
        if self.done {
            return Ok(None);
        }
        let rest = &self.buf[self.pos..];
        if rest.is_empty() {
            self.done = true;
            return Ok(None);
        }
        if rest.len() < RECORD_HEADER_LEN {
            self.done = true;
            return Err(CaptureError::TruncatedRecord { expected: RECORD_HEADER_LEN, available: rest.len() });
        }
        let (ts_micros, incl, orig) = self.header.decode_record(&rest[..RECORD_HEADER_LEN]);
        let body = &rest[RECORD_HEADER_LEN..];
        let incl_len = incl as usize;
        if body.len() < incl_len {
            self.done = true;
            return Err(CaptureError::TruncatedRecord { expected: incl_len, available: body.len() });
        }
        self.pos += RECORD_HEADER_LEN + incl_len;
        Ok(Some(PacketRef { ts_micros, original_len: orig.max(incl), data: &body[..incl_len] }))
    }
}

impl PacketSource for PcapSlice<'_> {
    fn next_packet(&mut self) -> Result<Option<PacketRecord>, CaptureError> {
        Ok(self.next_ref()?.map(|p| p.to_owned()))
    }
}

/// Writes classic pcap files in either byte order and timestamp resolution.
pub struct PcapWriter<W: Write> {
    inner: W,
    header: PcapHeader,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, header: PcapHeader) -> Result<Self, CaptureError> {
        inner.write_all(&header.to_bytes())?;
        Ok(PcapWriter { inner, header })
    }

    pub fn write_packet(&mut self, pkt: &PacketRecord) -> Result<(), CaptureError> {
        let incl = pkt.data.len() as u32;
        let rh = self.header.encode_record(pkt.ts_micros, incl, pkt.original_len.max(incl))?;
        self.inner.write_all(&rh)?;
        self.inner.write_all(&pkt.data)?;
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W, CaptureError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Serializes records into an in-memory little-endian microsecond pcap.
pub fn pcap_bytes(packets: &[PacketRecord]) -> Vec<u8> {
    let header = PcapHeader::new(Endianness::Little, TsResolution::Micro, 65_535);
    let mut w = PcapWriter::new(Vec::new(), header).expect("writing to a Vec cannot fail");
    for p in packets {
        w.write_packet(p).expect("synthetic timestamps fit the record header");
    }
    w.into_inner().expect("flushing a Vec cannot fail")
}

/// Packets held in memory, replayed in order.
#[derive(Debug, Default)]
pub struct MemorySource {
    packets: std::vec::IntoIter<PacketRecord>,
}

impl MemorySource {
    pub fn new(packets: Vec<PacketRecord>) -> Self {
        MemorySource { packets: packets.into_iter() }
    }
}

impl PacketSource for MemorySource {
    fn next_packet(&mut self) -> Result<Option<PacketRecord>, CaptureError> {
        Ok(self.packets.next())
    }
}

/// Emits `count` copies of a template frame with timestamps advancing by
/// `gap_micros`.
#[derive(Debug, Clone)]
pub struct RepeatSource {
    template: PacketRecord,
    remaining: u64,
    gap_micros: u64,
}

impl RepeatSource {
    pub fn new(template: PacketRecord, count: u64, gap_micros: u64) -> Self {
        RepeatSource { template, remaining: count, gap_micros }
    }
}

impl PacketSource for RepeatSource {
    fn next_packet(&mut self) -> Result<Option<PacketRecord>, CaptureError> {
        if self.remaining == 0 {
            return Ok(None);
        }
        self.remaining -= 1;
        let pkt = self.template.clone();
        self.template.ts_micros += self.gap_micros;
        Ok(Some(pkt))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CaptureStats {
    pub packets: u64,
    /// Sum of `original_len`.
    pub bytes: u64,
    pub elapsed_secs: f64,
    /// The source ended on a truncated record.
    pub truncated: bool,
}

impl CaptureStats {
    pub fn mpps(&self) -> f64 {
        if self.elapsed_secs > 0.0 {
            self.packets as f64 / self.elapsed_secs / 1e6
        } else {
            0.0
        }
    }

    pub fn gbps(&self) -> f64 {
        if self.elapsed_secs > 0.0 {
            self.bytes as f64 * 8.0 / self.elapsed_secs / 1e9
        } else {
            0.0
        }
    }
}

/// Drains a source, counting packets and wire bytes.
pub fn discard_sink<S: PacketSource + ?Sized>(source: &mut S) -> Result<CaptureStats, CaptureError> {
    let start = Instant::now();
    let mut stats = CaptureStats::default();
    loop {
        match source.next_packet() {
            Ok(Some(p)) => {
                stats.packets += 1;
                stats.bytes += u64::from(p.original_len);
            }
            Ok(None) => break,
            Err(CaptureError::TruncatedRecord { .. }) => stats.truncated = true,
            Err(e) => return Err(e),
        }
    }
    stats.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(stats)
}

/// Allocation-free discard path over an in-memory trace.
pub fn discard_slice(buf: &[u8]) -> Result<CaptureStats, CaptureError> {
    let start = Instant::now();
    let mut src = PcapSlice::new(buf)?;
    let mut stats = CaptureStats::default();
    loop {
        match src.next_ref() {
            Ok(Some(p)) => {
                stats.packets += 1;
                stats.bytes += u64::from(p.original_len);
            }
            Ok(None) => break,
            Err(CaptureError::TruncatedRecord { .. }) => stats.truncated = true,
            Err(e) => return Err(e),
        }
    }
    stats.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(i: u8, len: usize) -> Vec<u8> {
        (0..len).map(|j| i.wrapping_add(j as u8)).collect()
    }

    fn header_bytes(magic_bytes: [u8; 4], linktype_le: u32) -> Vec<u8> {
        let mut v = magic_bytes.to_vec();
        v.extend_from_slice(&[2, 0, 4, 0]);
        v.extend_from_slice(&[0; 8]);
        v.extend_from_slice(&65535u32.to_le_bytes());
        v.extend_from_slice(&linktype_le.to_le_bytes());
        v
    }

    #[test]
    fn little_endian_micro_magic() {
        let buf = header_bytes([0xd4, 0xc3, 0xb2, 0xa1], 1);
        let r = PcapReader::new(&buf[..]).unwrap();
        assert_eq!(r.header().endianness, Endianness::Little);
        assert_eq!(r.header().ts_resolution, TsResolution::Micro);
        assert_eq!(r.header().snaplen, 65535);
    }

    #[test]
    fn big_endian_micro_magic() {
        let h = PcapHeader::new(Endianness::Big, TsResolution::Micro, 1500).to_bytes();
        assert_eq!(&h[..4], &[0xa1, 0xb2, 0xc3, 0xd4]);
        let r = PcapReader::new(&h[..]).unwrap();
        assert_eq!(r.header().endianness, Endianness::Big);
        assert_eq!(r.header().snaplen, 1500);
    }

    #[test]
    fn short_file_is_truncated_header() {
        let buf = [0xd4u8, 0xc3, 0xb2, 0xa1, 2, 0, 4, 0, 0, 0];
        assert!(matches!(PcapReader::new(&buf[..]), Err(CaptureError::TruncatedHeader)));
        assert!(matches!(PcapSlice::new(&buf[..]), Err(CaptureError::TruncatedHeader)));
    }

    #[test]
    fn bad_magic_and_linktype() {
        let buf = header_bytes([1, 2, 3, 4], 1);
        assert!(matches!(PcapReader::new(&buf[..]), Err(CaptureError::BadMagic(_))));
        let buf = header_bytes([0xd4, 0xc3, 0xb2, 0xa1], 101);
        assert!(matches!(PcapReader::new(&buf[..]), Err(CaptureError::UnsupportedLinkType(101))));
    }

    #[test]
    fn record_of_sixty_bytes() {
        let pkt = PacketRecord::new(1_000_000, frame(7, 60));
        let bytes = pcap_bytes(std::slice::from_ref(&pkt));
        let mut r = PcapReader::new(&bytes[..]).unwrap();
        let got = r.next_packet().unwrap().unwrap();
        assert_eq!(got.captured_len(), 60);
        assert_eq!(got.original_len, 60);
        assert_eq!(got, pkt);
        assert!(r.next_packet().unwrap().is_none());
    }

    #[test]
    fn short_body_reports_truncated_once() {
        let mut bytes = pcap_bytes(&[PacketRecord::new(5, frame(1, 60))]);
        bytes.truncate(GLOBAL_HEADER_LEN + RECORD_HEADER_LEN + 30);
        let mut r = PcapReader::new(&bytes[..]).unwrap();
        match r.next_packet() {
            Err(CaptureError::TruncatedRecord { expected: 60, available: 30 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(r.next_packet().unwrap().is_none());

        let mut s = PcapSlice::new(&bytes).unwrap();
        assert!(matches!(s.next_ref(), Err(CaptureError::TruncatedRecord { .. })));
        assert!(s.next_ref().unwrap().is_none());
    }

    #[test]
    fn empty_body_is_end_of_stream() {
        let bytes = pcap_bytes(&[]);
        assert_eq!(bytes.len(), GLOBAL_HEADER_LEN);
        let mut r = PcapReader::new(&bytes[..]).unwrap();
        assert!(r.next_packet().unwrap().is_none());
    }

    #[test]
    fn nanosecond_timestamps_truncate() {
        let header = PcapHeader::new(Endianness::Little, TsResolution::Nano, 65535);
        let mut w = PcapWriter::new(Vec::new(), header).unwrap();
        w.write_packet(&PacketRecord::new(3_000_123, frame(0, 10))).unwrap();
        let mut bytes = w.into_inner().unwrap();
        // Bump the nanosecond field by 999 ns: still the same microsecond.
        let sub = GLOBAL_HEADER_LEN + 4;
        let ns = u32::from_le_bytes(bytes[sub..sub + 4].try_into().unwrap()) + 999;
        bytes[sub..sub + 4].copy_from_slice(&ns.to_le_bytes());
        let mut r = PcapReader::new(&bytes[..]).unwrap();
        assert_eq!(r.header().ts_resolution, TsResolution::Nano);
        assert_eq!(r.next_packet().unwrap().unwrap().ts_micros, 3_000_123);
    }

    #[test]
    fn discard_counts_synthetic_source() {
        let mut template = PacketRecord::new(0, frame(0, 64));
        template.original_len = 1500;
        let mut src = RepeatSource::new(template, 1_000_000, 1);
        let stats = discard_sink(&mut src).unwrap();
        assert_eq!(stats.packets, 1_000_000);
        assert_eq!(stats.bytes, 1_500_000_000);
        assert!(!stats.truncated);
    }

    #[test]
    fn discard_empty_source() {
        let stats = discard_sink(&mut MemorySource::default()).unwrap();
        assert_eq!((stats.packets, stats.bytes), (0, 0));
    }

    #[test]
    fn discard_flags_truncation_after_ten_packets() {
        // Hand-built: 10 complete 40-byte records, then a header announcing
        // 40 bytes followed by only 12.
        let mut bytes = PcapHeader::new(Endianness::Big, TsResolution::Micro, 65535).to_bytes().to_vec();
        for i in 0..11u32 {
            bytes.extend_from_slice(&i.to_be_bytes());
            bytes.extend_from_slice(&0u32.to_be_bytes());
            bytes.extend_from_slice(&40u32.to_be_bytes());
            bytes.extend_from_slice(&40u32.to_be_bytes());
            let body = if i < 10 { 40 } else { 12 };
            bytes.extend(std::iter::repeat_n(0xabu8, body));
        }
        let stats = discard_sink(&mut PcapReader::new(&bytes[..]).unwrap()).unwrap();
        assert_eq!(stats.packets, 10);
        assert_eq!(stats.bytes, 400);
        assert!(stats.truncated);
        let stats = discard_slice(&bytes).unwrap();
        assert_eq!(stats.packets, 10);
        assert!(stats.truncated);
    }
}
