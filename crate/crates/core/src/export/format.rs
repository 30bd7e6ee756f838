use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::mask::{MASK_RATE, MASK_TOKEN_SHARE, RANDOM_TOKEN_SHARE};
use super::pack::{PackMode, TrainingExample};
use super::ExportError;

/// First eight bytes of every record file.
pub const MAGIC: &[u8; 8] = b"CFMLM\0\x01\0";
pub const FORMAT_NAME: &str = "corpusforge-mlm-records";
pub const FORMAT_VERSION: u32 = 1;

/// Field layout of one record payload, in order. Each record is a u32
/// little-endian payload length followed by the payload.
pub const RECORD_FIELDS: &[(&str, &str)] = &[
    ("seq_len", "u32"),
    ("input_ids", "u32[seq_len]"),
    ("segment_ids", "u8[seq_len]"),
    ("attention_mask", "u8[seq_len]"),
    ("masked_count", "u32"),
    ("masked_positions", "u32[masked_count]"),
    ("masked_labels", "u32[masked_count]"),
    ("next_sentence_label", "i8 (0 = actual next, 1 = random next, -1 = absent)"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub layout: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingSpec {
    pub rate: f64,
    pub mask_token_share: f64,
    pub random_token_share: f64,
    pub unchanged_share: f64,
}

impl Default for MaskingSpec {
    fn default() -> Self {
        Self {
            rate: MASK_RATE,
            mask_token_share: MASK_TOKEN_SHARE,
            random_token_share: RANDOM_TOKEN_SHARE,
            unchanged_share: 1.0 - MASK_TOKEN_SHARE - RANDOM_TOKEN_SHARE,
        }
    }
}

/// JSON schema written next to a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub byte_order: String,
    pub magic_hex: String,
    pub fields: Vec<FieldSpec>,
    pub seq_len: usize,
    pub record_count: u64,
    pub mode: PackMode,
    pub seed: u64,
    pub vocab_size: usize,
    pub vocab_sha256: String,
    pub special_ids: SpecialIds,
    pub masking: MaskingSpec,
    pub records_sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
    pub unk: u32,
    pub pad: u32,
}

pub fn record_fields() -> Vec<FieldSpec> {
    RECORD_FIELDS
        .iter()
        .map(|(n, l)| FieldSpec { name: (*n).into(), layout: (*l).into() })
        .collect()
}

pub fn encode_record(ex: &TrainingExample, buf: &mut Vec<u8>) {
    let n = ex.input_ids.len();
    let m = ex.masked_positions.len();
    let payload = 4 + 4 * n + 2 * n + 4 + 8 * m + 1;
    buf.reserve(4 + payload);
    buf.extend_from_slice(&(payload as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    for id in &ex.input_ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    buf.extend_from_slice(&ex.segment_ids);
    buf.extend_from_slice(&ex.attention_mask);
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    for p in &ex.masked_positions {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    for l in &ex.masked_labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    let nsp: i8 = ex.next_sentence_label.map_or(-1, |l| l as i8);
    buf.push(nsp as u8);
}

pub struct RecordWriter<W: Write> {
    inner: W,
    buf: Vec<u8>,
    count: u64,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut inner: W) -> std::io::Result<Self> {
        inner.write_all(MAGIC)?;
        Ok(Self { inner, buf: Vec::with_capacity(8192), count: 0 })
    }

    pub fn write(&mut self, ex: &TrainingExample) -> std::io::Result<()> {
        self.buf.clear();
        encode_record(ex, &mut self.buf);
        self.count += 1;
        self.inner.write_all(&self.buf)
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ExportError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ExportError::Format(format!("truncated record at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ExportError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>, ExportError> {
        Ok(self
            .take(n.checked_mul(4).ok_or_else(|| ExportError::Format("length overflow".into()))?)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

/// Decodes a whole record file.
pub fn decode_records(bytes: &[u8]) -> Result<Vec<TrainingExample>, ExportError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ExportError::Format("missing record-file magic".into()));
    }
    let mut c = Cursor { bytes, pos: MAGIC.len() };
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let payload = c.u32()? as usize;
        let start = c.pos;
        let n = c.u32()? as usize;
        let input_ids = c.u32s(n)?;
        let segment_ids = c.take(n)?.to_vec();
        let attention_mask = c.take(n)?.to_vec();
        let m = c.u32()? as usize;
        let masked_positions = c.u32s(m)?;
        let masked_labels = c.u32s(m)?;
        let nsp = c.take(1)?[0] as i8;
        if c.pos - start != payload {
            return Err(ExportError::Format(format!(
                "record at byte {} declares {payload} bytes but holds {}",
                start - 4,
                c.pos - start
            )));
        }
        let next_sentence_label = match nsp {
            -1 => None,
            0 | 1 => Some(nsp as u8),
            other => return Err(ExportError::Format(format!("bad next-sentence label {other}"))),
        };
        out.push(TrainingExample {
            input_ids,
            segment_ids,
            attention_mask,
            masked_positions,
            masked_labels,
            next_sentence_label,
        });
    }
    Ok(out)
}

pub fn read_record_file<R: Read>(mut r: R) -> Result<Vec<TrainingExample>, ExportError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| ExportError::Format(e.to_string()))?;
    decode_records(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TrainingExample> {
        vec![
            TrainingExample {
                input_ids: vec![2, 9, 4, 3, 0],
                segment_ids: vec![0, 0, 0, 0, 0],
                attention_mask: vec![1, 1, 1, 1, 0],
                masked_positions: vec![2],
                masked_labels: vec![11],
                next_sentence_label: None,
            },
            TrainingExample {
                input_ids: vec![2, 9, 3, 8, 3],
                segment_ids: vec![0, 0, 0, 1, 1],
                attention_mask: vec![1; 5],
                masked_positions: vec![],
                masked_labels: vec![],
                next_sentence_label: Some(1),
            },
        ]
    }

    #[test]
    fn encode_decode() {
        let mut w = RecordWriter::new(Vec::new()).unwrap();
        for ex in sample() {
            w.write(&ex).unwrap();
        }
        assert_eq!(w.count(), 2);
        let bytes = w.into_inner();
        assert_eq!(decode_records(&bytes).unwrap(), sample());
    }

    #[test]
    fn truncation_detected() {
        let mut w = RecordWriter::new(Vec::new()).unwrap();
        w.write(&sample()[0]).unwrap();
        let bytes = w.into_inner();
        assert!(decode_records(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_records(b"nope").is_err());
    }
}
