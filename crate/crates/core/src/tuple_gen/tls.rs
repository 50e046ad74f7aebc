use super::{normalize_host_bytes, NoSni};

const CONTENT_HANDSHAKE: u8 = 0x16;
const HANDSHAKE_CLIENT_HELLO: u8 = 0x01;
const EXT_SERVER_NAME: u16 = 0x0000;
const NAME_TYPE_HOST: u8 = 0x00;

/// Bounds-checked big-endian reader.
struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Some(head)
    }

    /// Like `take` but clamps to what is left, for lengths that may point past
    /// the captured bytes.
    fn take_upto(&mut self, n: usize) -> &'a [u8] {
        let n = n.min(self.buf.len());
        self.take(n).unwrap_or_default()
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_be_bytes([b[0], b[1]]))
    }

    fn u24(&mut self) -> Option<usize> {
        self.take(3).map(|b| usize::from(b[0]) << 16 | usize::from(b[1]) << 8 | usize::from(b[2]))
    }

    fn vec8(&mut self) -> Option<&'a [u8]> {
        let n = self.u8()?;
        self.take(n.into())
    }

    fn vec16(&mut self) -> Option<&'a [u8]> {
        let n = self.u16()?;
        self.take(n.into())
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// Returns the first host_name entry of the SNI extension in a ClientHello
/// that starts this payload.
pub fn extract_tls_sni(payload: &[u8]) -> Result<String, NoSni> {
    sni(payload).and_then(normalize_host_bytes).ok_or(NoSni)
}

fn sni(payload: &[u8]) -> Option<&[u8]> {
    let mut record = Reader::new(payload);
    if record.u8()? != CONTENT_HANDSHAKE {
        return None;
    }
    let (major, _minor) = (record.u8()?, record.u8()?);
    if major != 3 {
        return None;
    }
    let record_len = record.u16()?;
    let mut hs = Reader::new(record.take_upto(record_len.into()));
    if hs.u8()? != HANDSHAKE_CLIENT_HELLO {
        return None;
    }
    let hs_len = hs.u24()?;
    let mut hello = Reader::new(hs.take_upto(hs_len));
    hello.take(2 + 32)?; // legacy_version, random
    hello.vec8()?; // session id
    hello.vec16()?; // cipher suites
    hello.vec8()?; // compression methods
    let mut exts = Reader::new(hello.vec16()?);
    while !exts.is_empty() {
        let ext_type = exts.u16()?;
        let data = exts.vec16()?;
        if ext_type != EXT_SERVER_NAME {
            continue;
        }
        let mut ext = Reader::new(data);
        let mut names = Reader::new(ext.vec16()?);
        while !names.is_empty() {
            let name_type = names.u8()?;
            let name = names.vec16()?;
            if name_type == NAME_TYPE_HOST {
                return Some(name);
            }
        }
        return None;
    }
    None
}
