//! Offline tuple source: `ts_micros,src_ip,hostname` CSV logs.

use std::io::{Read, Write};
use std::net::IpAddr;

use serde::Deserialize;
use thiserror::Error;

use super::{normalize_hostname, FlowTuple};

pub const CSV_HEADER: [&str; 3] = ["ts_micros", "src_ip", "hostname"];

#[derive(Debug, Error)]
pub enum TupleCsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: expected header ts_micros,src_ip,hostname")]
    BadHeader { line: u64 },
    #[error("line {line}: invalid hostname {host:?}")]
    BadHostname { line: u64, host: String },
}

#[derive(Deserialize)]
struct Row {
    ts_micros: u64,
    src_ip: IpAddr,
    hostname: String,
}

pub struct TupleCsvReader<R: Read> {
    rows: csv::StringRecordsIntoIter<R>,
    headers: csv::StringRecord,
}

impl<R: Read> TupleCsvReader<R> {
    pub fn new(inner: R) -> Result<Self, TupleCsvError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(inner);
        let headers = rdr.headers()?;
        if headers.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(TupleCsvError::BadHeader { line: 1 });
        }
        let headers = headers.clone();
        Ok(TupleCsvReader { rows: rdr.into_records(), headers })
    }
}

impl<R: Read> Iterator for TupleCsvReader<R> {
    type Item = Result<FlowTuple, TupleCsvError>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = match self.rows.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(e.into())),
        };
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = match record.deserialize(Some(&self.headers)) {
            Ok(r) => r,
            Err(e) => return Some(Err(e.into())),
        };
        Some(match normalize_hostname(&row.hostname) {
            Some(h) => Ok(FlowTuple::new(row.src_ip, h, row.ts_micros)),
            None => Err(TupleCsvError::BadHostname { line, host: row.hostname }),
        })
    }
}

pub struct TupleCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TupleCsvWriter<W> {
    pub fn new(inner: W) -> Result<Self, TupleCsvError> {
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(inner);
        inner.write_record(CSV_HEADER)?;
        Ok(TupleCsvWriter { inner })
    }

    pub fn write(&mut self, t: &FlowTuple) -> Result<(), TupleCsvError> {
        let ts = t.ts_micros.to_string();
        let ip = t.src_ip.to_string();
        self.inner.write_record([ts.as_str(), ip.as_str(), &t.hostname])?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W, TupleCsvError> {
        self.inner.into_inner().map_err(|e| TupleCsvError::Csv(csv::Error::from(e.into_error())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read() {
        let tuples = vec![
            FlowTuple::new("10.0.0.1".parse().unwrap(), "a.example", 5),
            FlowTuple::new("2001:db8:0:0:0:0:0:1".parse().unwrap(), "b.example", 6),
        ];
        let mut w = TupleCsvWriter::new(Vec::new()).unwrap();
        for t in &tuples {
            w.write(t).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text, "ts_micros,src_ip,hostname\n5,10.0.0.1,a.example\n6,2001:db8::1,b.example\n");
        let back: Vec<_> = TupleCsvReader::new(&bytes[..]).unwrap().map(Result::unwrap).collect();
        assert_eq!(back, tuples);
    }

    #[test]
    fn rejects_bad_rows() {
        let text = "ts_micros,src_ip,hostname\n1,10.0.0.1,Good.Example\n2,10.0.0.1,bad host\n3,notanip,x.y\n";
        let rows: Vec<_> = TupleCsvReader::new(text.as_bytes()).unwrap().collect();
        assert_eq!(&*rows[0].as_ref().unwrap().hostname, "good.example");
        assert!(matches!(rows[1], Err(TupleCsvError::BadHostname { line: 3, .. })));
        assert!(matches!(rows[2], Err(TupleCsvError::Csv(_))));
        assert!(matches!(TupleCsvReader::new("a,b,c\n".as_bytes()), Err(TupleCsvError::BadHeader { .. })));
    }
}
