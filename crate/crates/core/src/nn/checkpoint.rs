//! Parameter checkpoints in the embedding-container envelope:
//!
//! ```text
//! "PCKP" | version u32 = 1 | json_len u32 | JSON metadata
//! | count u64 | count × (name_len u16 | name | ndim u8 | ndim × u64 | f32 LE values)
//! ```

use std::fs;
use std::path::Path;

use serde_json::Value;

use super::params::ParamStore;
use super::tensor::{numel, Real, Tensor};
use super::{NnError, Result};
use crate::embio::{ByteReader, ByteWriter, EmbioError};

const MAGIC: &[u8; 4] = b"PCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn err(e: impl std::fmt::Display) -> NnError {
    NnError::Checkpoint(e.to_string())
}

impl Checkpoint {
    pub fn from_store<T: Real>(store: &ParamStore<T>, metadata: Value) -> Self {
        Self {
            metadata,
            tensors: store.iter().map(|(_, p)| (p.name.clone(), p.value().cast())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.metadata).map_err(err)?;
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(u32::try_from(json.len()).map_err(err)?);
        w.bytes(&json);
        w.u64(self.tensors.len() as u64);
        for (name, t) in &self.tensors {
            w.str16("tensor name", name).map_err(err)?;
            w.u8(u8::try_from(t.ndim()).map_err(err)?);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f32s(t.data());
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take("magic", 4).map_err(err)? != MAGIC {
            return Err(err(EmbioError::BadMagic { offset: 0 }));
        }
        let at = r.offset();
        let version = r.u32("version").map_err(err)?;
        if version != VERSION {
            return Err(err(EmbioError::BadVersion { version, offset: at }));
        }
        let len = r.u32("metadata length").map_err(err)?;
        let json = r.take("metadata", len as u64).map_err(err)?;
        let metadata = serde_json::from_slice(json).map_err(err)?;
        let count = r.u64("count").map_err(err)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.str16("tensor name").map_err(err)?;
            let ndim = r.u8("ndim").map_err(err)?;
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                let d = r.u64("dim").map_err(err)?;
                shape.push(usize::try_from(d).map_err(err)?);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| err("shape overflows"))?;
            let data = r.f32s("tensor data", n as u64).map_err(err)?;
            debug_assert_eq!(numel(&shape), data.len());
            tensors.push((name, Tensor::from_vec(shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(err(format!("{} trailing bytes at offset {}", r.remaining(), r.offset())));
        }
        Ok(Self { metadata, tensors })
    }

    /// Copy every tensor into the same-named parameter of `store`. All
    /// parameters must be present with matching shapes.
    pub fn apply<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(err(format!("{} tensors for {} parameters", self.tensors.len(), store.len())));
        }
        for (name, t) in &self.tensors {
            let id = store.find(name).ok_or_else(|| err(format!("unknown parameter {name}")))?;
            store.set(id, t.cast())?;
        }
        Ok(())
    }
}

pub fn save_checkpoint<T: Real>(path: &Path, store: &ParamStore<T>, metadata: Value) -> Result<()> {
    let bytes = Checkpoint::from_store(store, metadata).to_bytes()?;
    fs::write(path, bytes).map_err(|e| err(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}
