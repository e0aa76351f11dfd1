//! Record log: a sequence of CRC-framed batches of length-prefixed records.
//!
//! Batch frame: `"BTCH" | seq u64 | count u32 | payload_len u64 | payload | crc32 u32`.
//! A batch becomes visible only once its frame is complete and its checksum
//! verifies, so replay stops at the last committed batch.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::codec::{self, ByteReader};
use crate::embedding::{EmbeddingVector, RawSample};
use crate::error::{Error, Result};

use super::{Label, StoredRecord};

const BATCH_MAGIC: &[u8; 4] = b"BTCH";
const FRAME_HEAD: usize = 4 + 8 + 4 + 8;

pub(crate) fn encode_record(out: &mut Vec<u8>, r: &StoredRecord) {
    let mut body = Vec::with_capacity(64 + r.embedding.dim() * 4 + r.label.payload.len());
    codec::put_str(&mut body, &r.sample_id);
    codec::put_u32(&mut body, r.embedding.dim() as u32);
    codec::put_f32s(&mut body, r.embedding.values());
    codec::put_str(&mut body, &r.label.schema);
    codec::put_bytes(&mut body, &r.label.payload);
    codec::put_str(&mut body, &r.source);
    codec::put_i64(&mut body, r.ingested_at);
    match &r.raw {
        None => body.push(0),
        Some(raw) => {
            body.push(1);
            codec::put_u32(&mut body, raw.shape.len() as u32);
            raw.shape.iter().for_each(|&d| codec::put_u64(&mut body, d as u64));
            codec::put_f32s(&mut body, &raw.payload);
        }
    }
    codec::put_bytes(out, &body);
}

pub(crate) fn decode_record(r: &mut ByteReader<'_>) -> Result<StoredRecord> {
    let start = r.offset();
    let body = r.bytes()?;
    let mut b = ByteReader::with_base(body, start + 4);
    let sample_id = b.string()?;
    let dim = b.u32()? as usize;
    let values = b.f32s(dim)?;
    let embedding = EmbeddingVector::new(values).map_err(|_| Error::NonFiniteValue { id: sample_id.clone() })?;
    let schema = b.string()?;
    let payload = b.bytes()?.to_vec();
    let source = b.string()?;
    let ingested_at = b.i64()?;
    let raw = match b.u8()? {
        0 => None,
        1 => {
            let ndims = b.u32()? as usize;
            let shape = (0..ndims).map(|_| b.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let payload = b.f32s(len)?;
            Some(RawSample {
                id: sample_id.clone(),
                shape,
                payload,
                source: source.clone(),
            })
        }
        tag => return Err(Error::format(b.offset() - 1, format!("bad raw-payload tag {tag}"))),
    };
    Ok(StoredRecord {
        sample_id,
        embedding,
        label: Label { schema, payload },
        source,
        ingested_at,
        raw,
    })
}

pub(crate) fn encode_batch(seq: u64, records: &[StoredRecord]) -> Vec<u8> {
    let mut payload = Vec::new();
    for r in records {
        encode_record(&mut payload, r);
    }
    let mut frame = Vec::with_capacity(FRAME_HEAD + payload.len() + 4);
    frame.extend_from_slice(BATCH_MAGIC);
    codec::put_u64(&mut frame, seq);
    codec::put_u32(&mut frame, records.len() as u32);
    codec::put_u64(&mut frame, payload.len() as u64);
    frame.extend_from_slice(&payload);
    codec::put_u32(&mut frame, crc32fast::hash(&payload));
    frame
}

/// Outcome of replaying a log file.
pub(crate) struct Replay {
    pub batches: Vec<(u64, Vec<StoredRecord>)>,
    /// Length of the committed prefix.
    pub valid_len: u64,
    pub file_len: u64,
}

/// Reads every complete batch. A torn or corrupt tail ends the replay.
pub(crate) fn replay(bytes: &[u8]) -> Replay {
    let mut batches = Vec::new();
    let mut pos = 0usize;
    while bytes.len() - pos >= FRAME_HEAD {
        match read_frame(&bytes[pos..], pos as u64) {
            Ok((seq, records, used)) => {
                batches.push((seq, records));
                pos += used;
            }
            Err(e) => {
                tracing::warn!("record log: discarding tail at byte {pos}: {e}");
                break;
            }
        }
    }
    Replay {
        batches,
        valid_len: pos as u64,
        file_len: bytes.len() as u64,
    }
}

fn read_frame(buf: &[u8], base: u64) -> Result<(u64, Vec<StoredRecord>, usize)> {
    let mut r = ByteReader::with_base(buf, base);
    if r.take(4)? != BATCH_MAGIC {
        return Err(Error::format(base, "bad batch magic"));
    }
    let seq = r.u64()?;
    let count = r.u32()? as usize;
    let len = r.u64()? as usize;
    let payload_at = r.offset();
    let payload = r.take(len)?;
    let crc = r.u32()?;
    if crc32fast::hash(payload) != crc {
        return Err(Error::format(payload_at, "batch checksum mismatch"));
    }
    let mut p = ByteReader::with_base(payload, payload_at);
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        records.push(decode_record(&mut p)?);
    }
    Ok((seq, records, FRAME_HEAD + len + 4))
}

/// Appending writer over one log file.
pub(crate) struct LogWriter {
    file: File,
    len: u64,
}

impl LogWriter {
    /// Opens `path`, truncating any uncommitted tail found by `replay`.
    pub fn open(path: &Path, valid_len: u64) -> Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        let actual = file.metadata()?.len();
        if actual != valid_len {
            file.set_len(valid_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Self { file, len: valid_len })
    }

    pub fn read_all(path: &Path) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        if path.exists() {
            File::open(path)?.read_to_end(&mut buf)?;
        }
        Ok(buf)
    }

    /// Appends and syncs one frame. On failure the file is cut back so no
    /// partial batch survives.
    pub fn append(&mut self, frame: &[u8]) -> Result<()> {
        let result = self.file.write_all(frame).and_then(|_| self.file.sync_data());
        if let Err(e) = result {
            let _ = self.file.set_len(self.len);
            let _ = self.file.seek(SeekFrom::Start(self.len));
            return Err(e.into());
        }
        self.len += frame.len() as u64;
        Ok(())
    }
}
