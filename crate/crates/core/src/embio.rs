//! Embedding container: one file per (model, layer) holding a `[T, D]` f32
//! tensor per snippet.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! "PEMB" | version u32 = 1 | name_len u16 | name (UTF-8) | layer u32
//! | dtype u8 = 0 (f32) | ndim u8 = 2 | dims 2 × u64 | count u64
//! | count × (id_len u16 | id (UTF-8) | offset u64)
//! | payload: count × T·D f32 LE, row-major
//! ```
//!
//! Offsets are measured from the start of the payload. Records are stored in
//! index order, so the offset of record `i` is `i · T · D · 4`; a reader
//! rejects anything else, and rejects bytes after the payload.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PEMB";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum EmbioError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version {version} at offset {offset}")]
    BadVersion { version: u32, offset: usize },
    #[error("truncated {what} at offset {offset}: need {need} bytes, {available} available")]
    Truncated {
        what: &'static str,
        offset: usize,
        need: u64,
        available: usize,
    },
    #[error("invalid {what} at offset {offset}: {msg}")]
    Invalid {
        what: &'static str,
        offset: usize,
        msg: String,
    },
    #[error("record {id} has shape {actual:?}, container shape is {expected:?}")]
    ShapeMismatch {
        id: String,
        expected: [usize; 2],
        actual: Vec<usize>,
    },
    #[error("duplicate snippet id {0}")]
    DuplicateId(String),
    #[error("{what} too long: {len} bytes (max {max})")]
    TooLong { what: &'static str, len: usize, max: usize },
}

pub type Result<T> = std::result::Result<T, EmbioError>;

/// Little-endian writer.
#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { buf: Vec::with_capacity(n) }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, values: &[f32]) {
        self.buf.reserve(values.len() * 4);
        for v in values {
            self.bytes(&v.to_le_bytes());
        }
    }

    /// `u16` length prefix plus UTF-8 bytes.
    pub fn str16(&mut self, what: &'static str, s: &str) -> Result<()> {
        let len = u16::try_from(s.len()).map_err(|_| EmbioError::TooLong {
            what,
            len: s.len(),
            max: u16::MAX as usize,
        })?;
        self.u16(len);
        self.bytes(s.as_bytes());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Little-endian reader that reports byte offsets in its errors.
#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, what: &'static str, n: u64) -> Result<&'a [u8]> {
        if n > self.remaining() as u64 {
            return Err(EmbioError::Truncated {
                what,
                offset: self.pos,
                need: n,
                available: self.remaining(),
            });
        }
        let n = n as usize;
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(what, N as u64)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub fn str16(&mut self, what: &'static str) -> Result<String> {
        let len = self.u16(what)?;
        let start = self.pos;
        let bytes = self.take(what, len as u64)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| EmbioError::Invalid {
            what,
            offset: start,
            msg: e.to_string(),
        })
    }

    pub fn f32s(&mut self, what: &'static str, count: u64) -> Result<Vec<f32>> {
        let bytes = self.take(what, count.saturating_mul(4))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerMeta {
    pub model_name: String,
    pub layer: u32,
    /// `[T, D]` of every record.
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub snippet_id: String,
    /// Row-major `T · D` values.
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: ContainerMeta,
    pub records: Vec<Record>,
}

impl Container {
    pub fn get(&self, snippet_id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.snippet_id == snippet_id)
    }

    pub fn record_len(&self) -> usize {
        self.meta.shape[0] * self.meta.shape[1]
    }
}

/// Serialize records. Every record must have `shape[0] · shape[1]` values and
/// a unique id.
pub fn encode(meta: &ContainerMeta, records: &[(&str, &[f32])]) -> Result<Vec<u8>> {
    let per = meta.shape[0] * meta.shape[1];
    let mut seen = HashSet::new();
    for (id, values) in records {
        if values.len() != per {
            return Err(EmbioError::ShapeMismatch {
                id: id.to_string(),
                expected: meta.shape,
                actual: vec![values.len()],
            });
        }
        if !seen.insert(*id) {
            return Err(EmbioError::DuplicateId(id.to_string()));
        }
    }
    let index_bytes: usize = records.iter().map(|(id, _)| 2 + id.len() + 8).sum();
    let mut w = ByteWriter::with_capacity(64 + meta.model_name.len() + index_bytes + records.len() * per * 4);
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.str16("model name", &meta.model_name)?;
    w.u32(meta.layer);
    w.u8(DTYPE_F32);
    w.u8(2);
    w.u64(meta.shape[0] as u64);
    w.u64(meta.shape[1] as u64);
    w.u64(records.len() as u64);
    for (i, (id, _)) in records.iter().enumerate() {
        w.str16("snippet id", id)?;
        w.u64((i * per * 4) as u64);
    }
    for (_, values) in records {
        w.f32s(values);
    }
    Ok(w.into_bytes())
}

/// Parse a container. Never reads past the buffer; any inconsistency is an
/// error carrying the byte offset where it was found.
pub fn decode(bytes: &[u8]) -> Result<Container> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take("magic", 4).map_err(|_| EmbioError::BadMagic { offset: 0 })?;
    if magic != MAGIC {
        return Err(EmbioError::BadMagic { offset: 0 });
    }
    let at = r.offset();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(EmbioError::BadVersion { version, offset: at });
    }
    let model_name = r.str16("model name")?;
    let layer = r.u32("layer")?;
    let at = r.offset();
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(EmbioError::Invalid { what: "dtype", offset: at, msg: format!("unsupported dtype {dtype}") });
    }
    let at = r.offset();
    let ndim = r.u8("ndim")?;
    if ndim != 2 {
        return Err(EmbioError::Invalid { what: "ndim", offset: at, msg: format!("expected 2, got {ndim}") });
    }
    let at = r.offset();
    let (t, d) = (r.u64("dims")?, r.u64("dims")?);
    let per = t.checked_mul(d).filter(|n| n.checked_mul(4).is_some()).ok_or(EmbioError::Invalid {
        what: "dims",
        offset: at,
        msg: format!("{t} x {d} overflows"),
    })?;
    let at = r.offset();
    let count = r.u64("count")?;
    // Each index entry needs at least 10 bytes, which bounds a sane count.
    if count > (r.remaining() / 10) as u64 {
        return Err(EmbioError::Truncated {
            what: "index",
            offset: at,
            need: count.saturating_mul(10),
            available: r.remaining(),
        });
    }
    let record_bytes = per * 4;
    let mut ids = Vec::with_capacity(count as usize);
    let mut seen = HashSet::new();
    for i in 0..count {
        let id_at = r.offset();
        let id = r.str16("snippet id")?;
        let off_at = r.offset();
        let offset = r.u64("record offset")?;
        if offset != i * record_bytes {
            return Err(EmbioError::Invalid {
                what: "record offset",
                offset: off_at,
                msg: format!("record {i} at {offset}, expected {}", i * record_bytes),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(EmbioError::Invalid { what: "snippet id", offset: id_at, msg: format!("duplicate id {id}") });
        }
        ids.push(id);
    }
    let payload_at = r.offset();
    let need = count.checked_mul(record_bytes).ok_or(EmbioError::Truncated {
        what: "payload",
        offset: payload_at,
        need: u64::MAX,
        available: r.remaining(),
    })?;
    if need != r.remaining() as u64 {
        if need > r.remaining() as u64 {
            return Err(EmbioError::Truncated { what: "payload", offset: payload_at, need, available: r.remaining() });
        }
        return Err(EmbioError::Invalid {
            what: "payload",
            offset: payload_at + need as usize,
            msg: format!("{} trailing bytes", r.remaining() as u64 - need),
        });
    }
    let mut records = Vec::with_capacity(ids.len());
    for id in ids {
        let values = r.f32s("payload", per)?;
        records.push(Record { snippet_id: id, values });
    }
    Ok(Container {
        meta: ContainerMeta { model_name, layer, shape: [t as usize, d as usize] },
        records,
    })
}

pub fn write_container(path: &Path, meta: &ContainerMeta, records: &[(&str, &[f32])]) -> Result<()> {
    let bytes = encode(meta, records)?;
    let io = |source| EmbioError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|source| EmbioError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}

/// Conventional file name for a (model, layer) container.
pub fn container_file_name(model: &str, layer: u32) -> String {
    format!("{model}_layer{layer:02}.pemb")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(t: usize, d: usize) -> ContainerMeta {
        ContainerMeta { model_name: "toy".into(), layer: 3, shape: [t, d] }
    }

    #[test]
    fn empty_container_round_trips() {
        let bytes = encode(&meta(4, 5), &[]).unwrap();
        let c = decode(&bytes).unwrap();
        assert!(c.records.is_empty());
        assert_eq!(c.meta, meta(4, 5));
    }

    #[test]
    fn payload_size_for_table_shape() {
        let v = vec![0.5f32; 248 * 768];
        let recs: Vec<(&str, &[f32])> = vec![("a", &v), ("b", &v), ("c", &v)];
        let bytes = encode(&meta(248, 768), &recs).unwrap();
        let header = 4 + 4 + 2 + 3 + 4 + 1 + 1 + 16 + 8;
        let index = 3 * (2 + 1 + 8);
        assert_eq!(bytes.len() - header - index, 3 * 248 * 768 * 4);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let v = vec![0.0f32; 4];
        let err = encode(&meta(2, 2), &[("x", &v), ("x", &v)]).unwrap_err();
        assert!(matches!(err, EmbioError::DuplicateId(_)));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = vec![0.0f32; 4];
        let b = vec![0.0f32; 3];
        assert!(matches!(
            encode(&meta(2, 2), &[("a", &a), ("b", &b)]),
            Err(EmbioError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn corrupted_magic_reports_offset_zero() {
        let mut bytes = encode(&meta(1, 1), &[("a", &[1.0])]).unwrap();
        bytes[1] = b'X';
        assert_eq!(decode(&bytes).unwrap_err().to_string(), "bad magic at offset 0");
    }

    #[test]
    fn oversized_count_is_truncation() {
        let mut bytes = encode(&meta(2, 2), &[("a", &[1.0, 2.0, 3.0, 4.0])]).unwrap();
        let count_at = 4 + 4 + 2 + 3 + 4 + 1 + 1 + 16;
        bytes[count_at..count_at + 8].copy_from_slice(&1_000_000u64.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(EmbioError::Truncated { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&meta(1, 2), &[("a", &[1.0, 2.0])]).unwrap();
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(EmbioError::Invalid { what: "payload", .. })));
    }

    #[test]
    fn every_truncation_point_errors() {
        let v: Vec<f32> = (0..12).map(|i| i as f32).collect();
        let bytes = encode(&meta(3, 4), &[("first", &v), ("second", &v)]).unwrap();
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            t in 1usize..6,
            d in 1usize..6,
            bits in prop::collection::vec(prop::collection::vec(any::<u32>(), 36), 0..5),
            name in "[a-z0-9-]{0,12}",
            layer in any::<u32>(),
        ) {
            let m = ContainerMeta { model_name: name, layer, shape: [t, d] };
            let values: Vec<Vec<f32>> = bits.iter().map(|b| b[..t * d].iter().map(|&x| f32::from_bits(x)).collect()).collect();
            let ids: Vec<String> = (0..values.len()).map(|i| format!("s_w{i:03}")).collect();
            let recs: Vec<(&str, &[f32])> = ids.iter().map(String::as_str).zip(values.iter().map(Vec::as_slice)).collect();
            let bytes = encode(&m, &recs).unwrap();
            let c = decode(&bytes).unwrap();
            prop_assert_eq!(&c.meta, &m);
            prop_assert_eq!(c.records.len(), values.len());
            for (r, v) in c.records.iter().zip(&values) {
                let a: Vec<u32> = r.values.iter().map(|x| x.to_bits()).collect();
                let b: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
            prop_assert_eq!(encode(&c.meta, &c.records.iter().map(|r| (r.snippet_id.as_str(), r.values.as_slice())).collect::<Vec<_>>()).unwrap(), bytes);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode(&bytes);
        }
    }
}
