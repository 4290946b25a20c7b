//! Classic libpcap capture files.
//!
//! Layout: a 24-byte global header followed by records, each a 16-byte
//! record header plus `incl_len` captured octets. The magic number fixes the
//! byte order of every multi-byte header field in the file. pcapng is not
//! handled here.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

pub const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
pub const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
pub const LINKTYPE_ETHERNET: u32 = 1;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
// Anything larger than this is a corrupt length field, not a frame.
const MAX_RECORD_LEN: u32 = 256 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed capture file: {0}")]
    MalformedFile(String),
}

/// Byte order of the header fields, as announced by the magic number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn u16(self, b: [u8; 2]) -> u16 {
        match self {
            ByteOrder::Little => u16::from_le_bytes(b),
            ByteOrder::Big => u16::from_be_bytes(b),
        }
    }

    fn u32(self, b: [u8; 4]) -> u32 {
        match self {
            ByteOrder::Little => u32::from_le_bytes(b),
            ByteOrder::Big => u32::from_be_bytes(b),
        }
    }

    fn put_u16(self, v: u16) -> [u8; 2] {
        match self {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }

    fn put_u32(self, v: u32) -> [u8; 4] {
        match self {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Timestamp {
    pub secs: u32,
    pub micros: u32,
}

/// One captured frame, untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacketView {
    pub capture_id: Arc<str>,
    /// 0-based ordinal within the capture.
    pub index: usize,
    pub timestamp: Timestamp,
    pub link_type: u32,
    pub bytes: Vec<u8>,
}

/// The global header fields we care about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalHeader {
    pub byte_order: ByteOrder,
    pub nanosecond: bool,
    pub version_major: u16,
    pub version_minor: u16,
    pub snaplen: u32,
    pub link_type: u32,
}

impl GlobalHeader {
    pub fn parse(bytes: &[u8; GLOBAL_HEADER_LEN]) -> Result<Self, PcapError> {
        let raw = [bytes[0], bytes[1], bytes[2], bytes[3]];
        let (byte_order, nanosecond) = match (u32::from_le_bytes(raw), u32::from_be_bytes(raw)) {
            (MAGIC_MICROS, _) => (ByteOrder::Little, false),
            (MAGIC_NANOS, _) => (ByteOrder::Little, true),
            (_, MAGIC_MICROS) => (ByteOrder::Big, false),
            (_, MAGIC_NANOS) => (ByteOrder::Big, true),
            _ => {
                return Err(PcapError::MalformedFile(format!(
                    "unrecognised magic number {:02x}{:02x}{:02x}{:02x}",
                    raw[0], raw[1], raw[2], raw[3]
                )))
            }
        };
        let u16_at = |i: usize| byte_order.u16([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| byte_order.u32([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        Ok(GlobalHeader {
            byte_order,
            nanosecond,
            version_major: u16_at(4),
            version_minor: u16_at(6),
            snaplen: u32_at(16),
            link_type: u32_at(20),
        })
    }
}

/// A record whose header promised more octets than the file holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncatedRecord {
    pub index: usize,
    pub claimed: u32,
    pub available: usize,
}

/// Streaming reader over the records of one capture.
///
/// Iteration ends at the first truncated record; inspect
/// [`PcapReader::truncated`] afterwards to see whether that happened.
pub struct PcapReader<R> {
    inner: R,
    header: GlobalHeader,
    capture_id: Arc<str>,
    next_index: usize,
    truncated: Option<TruncatedRecord>,
    done: bool,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R, capture_id: impl Into<Arc<str>>) -> Result<Self, PcapError> {
        let mut buf = [0u8; GLOBAL_HEADER_LEN];
        let got = read_up_to(&mut inner, &mut buf)?;
        if got < GLOBAL_HEADER_LEN {
            return Err(PcapError::MalformedFile(format!(
                "global header is {got} bytes, expected {GLOBAL_HEADER_LEN}"
            )));
        }
        let header = GlobalHeader::parse(&buf)?;
        Ok(PcapReader {
            inner,
            header,
            capture_id: capture_id.into(),
            next_index: 0,
            truncated: None,
            done: false,
        })
    }

    pub fn header(&self) -> &GlobalHeader {
        &self.header
    }

    pub fn truncated(&self) -> Option<&TruncatedRecord> {
        self.truncated.as_ref()
    }

    fn read_record(&mut self) -> Result<Option<RawPacketView>, PcapError> {
        let index = self.next_index;
        let mut rec = [0u8; RECORD_HEADER_LEN];
        let got = read_up_to(&mut self.inner, &mut rec)?;
        if got == 0 {
            return Ok(None);
        }
        if got < RECORD_HEADER_LEN {
            self.truncated = Some(TruncatedRecord { index, claimed: RECORD_HEADER_LEN as u32, available: got });
            return Ok(None);
        }
        let bo = self.header.byte_order;
        let field = |i: usize| bo.u32([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]);
        let secs = field(0);
        let frac = field(4);
        let incl_len = field(8);
        if incl_len > MAX_RECORD_LEN {
            self.truncated = Some(TruncatedRecord { index, claimed: incl_len, available: 0 });
            return Ok(None);
        }
        let mut bytes = vec![0u8; incl_len as usize];
        let got = read_up_to(&mut self.inner, &mut bytes)?;
        if got < bytes.len() {
            self.truncated = Some(TruncatedRecord { index, claimed: incl_len, available: got });
            return Ok(None);
        }
        let micros = if self.header.nanosecond { frac / 1000 } else { frac };
        self.next_index += 1;
        Ok(Some(RawPacketView {
            capture_id: Arc::clone(&self.capture_id),
            index,
            timestamp: Timestamp { secs, micros },
            link_type: self.header.link_type,
            bytes,
        }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<RawPacketView, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_record() {
            Ok(Some(pkt)) => Some(Ok(pkt)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Every record of a capture, plus the truncation warning if reading stopped early.
#[derive(Debug, Clone)]
pub struct Capture {
    pub header: GlobalHeader,
    pub packets: Vec<RawPacketView>,
    pub truncated: Option<TruncatedRecord>,
}

impl Capture {
    pub fn warning_count(&self) -> usize {
        usize::from(self.truncated.is_some())
    }
}

pub fn read_capture_from<R: Read>(inner: R, capture_id: impl Into<Arc<str>>) -> Result<Capture, PcapError> {
    let mut reader = PcapReader::new(inner, capture_id)?;
    let mut packets = Vec::new();
    for pkt in reader.by_ref() {
        packets.push(pkt?);
    }
    if let Some(t) = reader.truncated() {
        log::warn!(
            "{}: record {} claims {} bytes but only {} remain; stopped reading",
            reader.capture_id,
            t.index,
            t.claimed,
            t.available
        );
    }
    Ok(Capture { header: reader.header, packets, truncated: reader.truncated })
}

/// Reads a capture from disk; the path (as given) becomes the capture id.
pub fn read_capture(path: impl AsRef<Path>) -> Result<Capture, PcapError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_capture_from(BufReader::new(file), path.to_string_lossy().as_ref())
}

/// Writes classic pcap files in either byte order.
pub struct PcapWriter<W: Write> {
    inner: W,
    byte_order: ByteOrder,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, link_type: u32, byte_order: ByteOrder) -> io::Result<Self> {
        let mut hdr = Vec::with_capacity(GLOBAL_HEADER_LEN);
        hdr.extend_from_slice(&byte_order.put_u32(MAGIC_MICROS));
        hdr.extend_from_slice(&byte_order.put_u16(2));
        hdr.extend_from_slice(&byte_order.put_u16(4));
        hdr.extend_from_slice(&byte_order.put_u32(0)); // thiszone
        hdr.extend_from_slice(&byte_order.put_u32(0)); // sigfigs
        hdr.extend_from_slice(&byte_order.put_u32(65535));
        hdr.extend_from_slice(&byte_order.put_u32(link_type));
        inner.write_all(&hdr)?;
        Ok(PcapWriter { inner, byte_order })
    }

    pub fn write_packet(&mut self, timestamp: Timestamp, bytes: &[u8]) -> io::Result<()> {
        let bo = self.byte_order;
        let len = u32::try_from(bytes.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
        let mut rec = [0u8; RECORD_HEADER_LEN];
        rec[0..4].copy_from_slice(&bo.put_u32(timestamp.secs));
        rec[4..8].copy_from_slice(&bo.put_u32(timestamp.micros));
        rec[8..12].copy_from_slice(&bo.put_u32(len));
        rec[12..16].copy_from_slice(&bo.put_u32(len));
        self.inner.write_all(&rec)?;
        self.inner.write_all(bytes)
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Convenience: writes `frames` as an Ethernet capture at `path`.
pub fn write_capture(path: impl AsRef<Path>, frames: &[(Timestamp, Vec<u8>)]) -> io::Result<()> {
    let file = File::create(path)?;
    let mut w = PcapWriter::new(BufWriter::new(file), LINKTYPE_ETHERNET, ByteOrder::Little)?;
    for (ts, bytes) in frames {
        w.write_packet(*ts, bytes)?;
    }
    w.into_inner()?.flush()
}
