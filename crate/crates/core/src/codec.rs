//! Little-endian encoding helpers shared by every on-disk format.

pub(crate) fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

pub(crate) fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_i64(out: &mut Vec<u8>, v: i64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Appends the CRC-32 of `out[start..]`.
pub(crate) fn seal(out: &mut Vec<u8>, start: usize) {
    let crc = crc32(&out[start..]);
    put_u32(out, crc);
}

/// Forward-only reader over a byte slice. Every getter returns `None` on short input.
#[derive(Debug, Clone)]
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn at(buf: &'a [u8], pos: usize) -> Self {
        Self { buf, pos }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.remaining() < n {
            return None;
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.bytes(N).map(|b| b.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Option<u8> {
        self.array::<1>().map(|b| b[0])
    }

    pub(crate) fn u16(&mut self) -> Option<u16> {
        self.array().map(u16::from_le_bytes)
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.array().map(u32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        self.array().map(u64::from_le_bytes)
    }

    pub(crate) fn i64(&mut self) -> Option<i64> {
        self.array().map(i64::from_le_bytes)
    }

    /// Reads a CRC-32 and checks it against `buf[start..pos]`.
    pub(crate) fn check_crc(&mut self, start: usize) -> Option<()> {
        let end = self.pos;
        let stored = self.u32()?;
        (crc32(&self.buf[start..end]) == stored).then_some(())
    }
}

/// Six-byte header used by every file format: four magic bytes + u16 version.
pub(crate) const HEADER_LEN: usize = 6;

pub(crate) fn header(magic: &[u8; 4], version: u16) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(magic);
    h[4..].copy_from_slice(&version.to_le_bytes());
    h
}

/// Outcome of inspecting the start of an append-only log file.
#[derive(Debug, PartialEq, Eq)]
pub(crate) enum HeaderState {
    /// Full valid header present.
    Valid,
    /// File shorter than a header but consistent with one (a torn header write).
    Torn,
    /// Bytes contradict the expected magic/version.
    Bad,
}

pub(crate) fn inspect_header(bytes: &[u8], magic: &[u8; 4], version: u16) -> HeaderState {
    let expected = header(magic, version);
    if bytes.len() < HEADER_LEN {
        if expected.starts_with(bytes) {
            HeaderState::Torn
        } else {
            HeaderState::Bad
        }
    } else if bytes[..HEADER_LEN] == expected {
        HeaderState::Valid
    } else {
        HeaderState::Bad
    }
}
