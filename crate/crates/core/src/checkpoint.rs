//! Versioned binary checkpoint container: a JSON header describing the
//! model configuration followed by named tensor records (name, dtype,
//! shape, trainable flag, raw little-endian values), sorted by name so
//! serialization is canonical. Scaffolding lives under its own namespace;
//! detaching for deployment is a namespace drop and re-attaching restores
//! the original file byte for byte.

use crate::error::{Error, Result};
use crate::model::VitalConfig;
use crate::numerics::store::{ParamStore, NS_SCAFFOLD};
use crate::scalar::{Dtype, Real};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"VITALCKP";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: VitalConfig,
    pub dtype: Dtype,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub raw: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub records: BTreeMap<String, Record>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetachOutcome {
    Detached { removed: usize },
    /// No scaffolding namespace present; the input is returned unchanged.
    AlreadyDetached,
}

impl Checkpoint {
    pub fn from_store<F: Real>(config: &VitalConfig, store: &ParamStore<F>) -> Self {
        let mut records = BTreeMap::new();
        for (name, param) in store.iter() {
            let mut raw = Vec::with_capacity(param.value.len() * F::DTYPE.size_bytes());
            for &v in param.value.data() {
                v.write_le(&mut raw);
            }
            records.insert(
                name.clone(),
                Record {
                    dtype: F::DTYPE,
                    shape: param.value.shape().to_vec(),
                    trainable: param.trainable,
                    raw,
                },
            );
        }
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                model: config.clone(),
                dtype: F::DTYPE,
            },
            records,
        }
    }

    pub fn to_store<F: Real>(&self) -> Result<ParamStore<F>> {
        let mut store = ParamStore::new();
        for (name, rec) in &self.records {
            if rec.dtype != F::DTYPE {
                return Err(Error::Format(format!(
                    "record '{name}' is {}, expected {}",
                    rec.dtype,
                    F::DTYPE
                )));
            }
            let width = rec.dtype.size_bytes();
            let count: usize = rec.shape.iter().product();
            if rec.raw.len() != count * width {
                return Err(Error::Format(format!(
                    "record '{name}': {} bytes for {} values",
                    rec.raw.len(),
                    count
                )));
            }
            let data: Vec<F> = rec
                .raw
                .chunks_exact(width)
                .map(|c| F::read_le(c))
                .collect();
            store.insert(name.clone(), Tensor::new(rec.shape.clone(), data), rec.trainable);
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (name, rec) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match rec.dtype {
                Dtype::F32 => 0,
                Dtype::F64 => 1,
            });
            out.push(u8::from(rec.trainable));
            out.extend_from_slice(&(rec.shape.len() as u32).to_le_bytes());
            for &d in &rec.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(rec.raw.len() as u64).to_le_bytes());
            out.extend_from_slice(&rec.raw);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = cur.take_u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(cur.take(header_len)?)?;
        let count = cur.take_u64()? as usize;
        let mut records = BTreeMap::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("record name is not utf-8".into()))?;
            let dtype = match cur.take(1)?[0] {
                0 => Dtype::F32,
                1 => Dtype::F64,
                other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
            };
            let trainable = cur.take(1)?[0] != 0;
            let rank = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.take_u64()? as usize);
            }
            let raw_len = cur.take_u64()? as usize;
            let raw = cur.take(raw_len)?.to_vec();
            records.insert(
                name,
                Record {
                    dtype,
                    shape,
                    trainable,
                    raw,
                },
            );
        }
        Ok(Self { header, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn has_scaffolding(&self) -> bool {
        self.records.keys().any(|n| n.starts_with(NS_SCAFFOLD))
    }

    /// Drops every scaffolding record, leaving backbone, adapters and the
    /// LM head. Already-detached inputs come back unchanged.
    pub fn detach_scaffolding(&self) -> (Checkpoint, DetachOutcome) {
        if !self.has_scaffolding() {
            return (self.clone(), DetachOutcome::AlreadyDetached);
        }
        let mut out = self.clone();
        let doomed: Vec<String> = out
            .records
            .keys()
            .filter(|n| n.starts_with(NS_SCAFFOLD))
            .cloned()
            .collect();
        for name in &doomed {
            out.records.remove(name);
        }
        (
            out,
            DetachOutcome::Detached {
                removed: doomed.len(),
            },
        )
    }

    /// Restores scaffolding records from a donor checkpoint (typically the
    /// original training checkpoint).
    pub fn reattach_scaffolding(&self, donor: &Checkpoint) -> Result<Checkpoint> {
        let mut out = self.clone();
        let mut restored = 0usize;
        for (name, rec) in &donor.records {
            if name.starts_with(NS_SCAFFOLD) {
                out.records.insert(name.clone(), rec.clone());
                restored += 1;
            }
        }
        if restored == 0 {
            return Err(Error::Detached(
                "donor checkpoint holds no scaffolding records".into(),
            ));
        }
        Ok(out)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
