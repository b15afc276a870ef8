//! Trace file formats.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! header  : magic "HMMVTRC\0" (8) | version u8 | reserved [0u8; 7] | record count u64
//! record  : time_ns u64 | vm u16 | vcpu u16 | kind u8 (0 read, 1 write) | pad u8 | page u64
//! ```
//!
//! The CSV mirror has the header `time_ns,vm,vcpu,kind,page` with `kind`
//! spelled `read` or `write`.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{AccessEvent, Trace};
use crate::error::{Error, Result};
use crate::model::AccessKind;

pub const TRACE_MAGIC: [u8; 8] = *b"HMMVTRC\0";
pub const TRACE_VERSION: u8 = 1;

const HEADER_LEN: u64 = 24;
const RECORD_LEN: u64 = 22;

pub fn write_trace<W: Write>(trace: &Trace, mut w: W) -> Result<()> {
    w.write_all(&TRACE_MAGIC)?;
    w.write_all(&[TRACE_VERSION, 0, 0, 0, 0, 0, 0, 0])?;
    w.write_all(&(trace.events.len() as u64).to_le_bytes())?;
    let mut rec = [0u8; RECORD_LEN as usize];
    for e in &trace.events {
        rec[0..8].copy_from_slice(&e.time.to_le_bytes());
        rec[8..10].copy_from_slice(&e.vm.to_le_bytes());
        rec[10..12].copy_from_slice(&e.vcpu.to_le_bytes());
        rec[12] = match e.kind {
            AccessKind::Read => 0,
            AccessKind::Write => 1,
        };
        rec[13] = 0;
        rec[14..22].copy_from_slice(&e.page.to_le_bytes());
        w.write_all(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads as many bytes as available into `buf`; returns how many were read.
fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(n)
}

/// Decodes and validates a binary trace.
pub fn read_trace<R: Read>(mut r: R) -> Result<Trace> {
    let mut header = [0u8; HEADER_LEN as usize];
    let got = fill(&mut r, &mut header)?;
    let bad_header = |reason: String| Error::TraceParse { record: 0, offset: 0, reason };
    if got < HEADER_LEN as usize {
        return Err(Error::TraceParse {
            record: 0,
            offset: got as u64,
            reason: "truncated header".into(),
        });
    }
    if header[0..8] != TRACE_MAGIC {
        return Err(bad_header("bad magic".into()));
    }
    if header[8] != TRACE_VERSION {
        return Err(bad_header(format!("unsupported version {}", header[8])));
    }
    let count = u64::from_le_bytes(header[16..24].try_into().unwrap());

    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut rec = [0u8; RECORD_LEN as usize];
    for i in 0..count {
        let offset = HEADER_LEN + i * RECORD_LEN;
        let got = fill(&mut r, &mut rec)?;
        if got < rec.len() {
            return Err(Error::TraceParse {
                record: i,
                offset: offset + got as u64,
                reason: format!("truncated record ({got} of {RECORD_LEN} bytes)"),
            });
        }
        let kind = match rec[12] {
            0 => AccessKind::Read,
            1 => AccessKind::Write,
            k => {
                return Err(Error::TraceParse {
                    record: i,
                    offset: offset + 12,
                    reason: format!("unknown access kind {k}"),
                })
            }
        };
        events.push(AccessEvent {
            time: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
            vm: u16::from_le_bytes(rec[8..10].try_into().unwrap()),
            vcpu: u16::from_le_bytes(rec[10..12].try_into().unwrap()),
            kind,
            page: u64::from_le_bytes(rec[14..22].try_into().unwrap()),
        });
    }
    let trailing = fill(&mut r, &mut [0u8; 1])?;
    if trailing != 0 {
        return Err(Error::TraceParse {
            record: count,
            offset: HEADER_LEN + count * RECORD_LEN,
            reason: "trailing bytes after last record".into(),
        });
    }
    let trace = Trace::new(events);
    trace.validate(None)?;
    Ok(trace)
}

pub fn store_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    write_trace(trace, BufWriter::new(File::create(path)?))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    read_trace(BufReader::new(File::open(path)?))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CsvRow {
    time_ns: u64,
    vm: u16,
    vcpu: u16,
    kind: AccessKind,
    page: u64,
}

pub fn store_trace_csv(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in &trace.events {
        w.serialize(CsvRow { time_ns: e.time, vm: e.vm, vcpu: e.vcpu, kind: e.kind, page: e.page })?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_trace_csv(path: impl AsRef<Path>) -> Result<Trace> {
    let mut r = csv::Reader::from_path(path)?;
    let mut events = Vec::new();
    for (i, row) in r.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| Error::TraceParse {
            record: i as u64,
            offset: e.position().map_or(0, |p| p.byte()),
            reason: e.to_string(),
        })?;
        events.push(AccessEvent { time: row.time_ns, vm: row.vm, vcpu: row.vcpu, page: row.page, kind: row.kind });
    }
    let trace = Trace::new(events);
    trace.validate(None)?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        Trace::new(vec![
            AccessEvent::read(0, 0, 7),
            AccessEvent { time: 10, vm: 1, vcpu: 3, page: u64::MAX - 1, kind: AccessKind::Write },
            AccessEvent { time: 10, vm: 1, vcpu: 4, page: 0, kind: AccessKind::Read },
        ])
    }

    fn encode(t: &Trace) -> Vec<u8> {
        let mut buf = Vec::new();
        write_trace(t, &mut buf).unwrap();
        buf
    }

    #[test]
    fn byte_layout() {
        let buf = encode(&sample());
        assert_eq!(buf.len() as u64, HEADER_LEN + 3 * RECORD_LEN);
        assert_eq!(&buf[0..8], b"HMMVTRC\0");
        assert_eq!(buf[8], 1);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 3);
        let r1 = &buf[24 + 22..24 + 44];
        assert_eq!(u64::from_le_bytes(r1[0..8].try_into().unwrap()), 10);
        assert_eq!(u16::from_le_bytes(r1[8..10].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(r1[10..12].try_into().unwrap()), 3);
        assert_eq!(r1[12], 1);
        assert_eq!(r1[13], 0);
        assert_eq!(u64::from_le_bytes(r1[14..22].try_into().unwrap()), u64::MAX - 1);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        store_trace(&sample(), &p).unwrap();
        assert_eq!(load_trace(&p).unwrap(), sample());

        let c = dir.path().join("t.csv");
        store_trace_csv(&sample(), &c).unwrap();
        assert_eq!(load_trace_csv(&c).unwrap(), sample());
    }

    #[test]
    fn truncated_names_offset() {
        let buf = encode(&sample());
        let cut = &buf[..buf.len() - 5];
        match read_trace(cut) {
            Err(Error::TraceParse { record, offset, .. }) => {
                assert_eq!(record, 2);
                assert_eq!(offset, cut.len() as u64);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_trace(&buf[..10]), Err(Error::TraceParse { offset: 10, .. })));
    }

    #[test]
    fn bad_kind_and_magic() {
        let mut buf = encode(&sample());
        buf[24 + 12] = 7;
        assert!(matches!(read_trace(&buf[..]), Err(Error::TraceParse { record: 0, .. })));
        let mut buf = encode(&sample());
        buf[0] = b'X';
        assert!(read_trace(&buf[..]).is_err());
    }

    #[test]
    fn decreasing_time_is_validation_error() {
        let t = Trace::new(vec![AccessEvent::read(10, 0, 0), AccessEvent::read(5, 0, 0)]);
        let buf = encode(&t);
        assert!(matches!(read_trace(&buf[..]), Err(Error::Validation(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn event() -> impl Strategy<Value = (u64, u16, u16, bool, u64)> {
            (0u64..1000, any::<u16>(), any::<u16>(), any::<bool>(), any::<u64>())
        }

        proptest! {
            #[test]
            fn binary_round_trip(raw in proptest::collection::vec(event(), 0..64)) {
                let mut events: Vec<AccessEvent> = raw.into_iter().map(|(time, vm, vcpu, w, page)| AccessEvent {
                    time, vm, vcpu, page,
                    kind: if w { AccessKind::Write } else { AccessKind::Read },
                }).collect();
                events.sort_by_key(|e| (e.time, e.vm, e.vcpu));
                let t = Trace::new(events);
                prop_assert_eq!(read_trace(&encode(&t)[..]).unwrap(), t);
            }
        }
    }
}
