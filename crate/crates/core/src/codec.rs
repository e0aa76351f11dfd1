//! Little-endian binary helpers shared by the embedding file, the cluster
//! model blob and the record log.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FDMS";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// `magic | format version u32 | count u64 | dim u32`
pub fn write_header(out: &mut Vec<u8>, count: u64, dim: u32) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
}

/// Returns `(count, dim)`.
pub fn read_header(reader: &mut ByteReader<'_>) -> Result<(u64, u32)> {
    let magic = reader.take(4)?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}")));
    }
    let version = reader.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(4, format!("unsupported format version {version}")));
    }
    let count = reader.u64()?;
    let dim = reader.u32()?;
    Ok((count, dim))
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_i64(out: &mut Vec<u8>, v: i64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_u32(out, bytes.len() as u32);
    out.extend_from_slice(bytes);
}

pub fn put_str(out: &mut Vec<u8>, s: &str) {
    put_bytes(out, s.as_bytes());
}

pub fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over a byte slice that reports absolute offsets on failure.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self::with_base(buf, 0)
    }

    /// `base` is added to every reported offset.
    pub fn with_base(buf: &'a [u8], base: u64) -> Self {
        Self { buf, pos: 0, base }
    }

    pub fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!("truncated: need {n} bytes, {} available", self.remaining()),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn string(&mut self) -> Result<String> {
        let at = self.offset();
        let raw = self.bytes()?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(at, "invalid utf-8 string"))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.offset(), "length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let mut buf = Vec::new();
        write_header(&mut buf, 7, 3);
        assert_eq!(buf.len(), HEADER_LEN);
        let mut r = ByteReader::new(&buf);
        assert_eq!(read_header(&mut r).unwrap(), (7, 3));
    }

    #[test]
    fn truncation_reports_offset() {
        let buf = [1u8, 2, 3];
        let mut r = ByteReader::with_base(&buf, 100);
        r.take(2).unwrap();
        match r.u32() {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 102),
            other => panic!("unexpected {other:?}"),
        }
    }
}
