//! Self-describing binary parameter container.
//!
//! Layout: 8-byte magic `CSWNCKPT`, u32 LE format version, u64 LE manifest
//! length, UTF-8 JSON manifest, then every tensor as f32 LE in manifest order.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{numel, Array};

const MAGIC: &[u8; 8] = b"CSWNCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: String,
    seed: u64,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// What produced the file, e.g. `"unet"` or `"pretrain"`.
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    payload: Vec<f32>,
}

fn format_err(path: &str, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_owned(), reason: reason.into() }
}

impl Checkpoint {
    pub fn from_store<T: Scalar>(kind: &str, config: &impl Serialize, store: &ParamStore<T>) -> Result<Self> {
        let mut tensors = Vec::with_capacity(store.len());
        let mut payload = Vec::with_capacity(store.num_elements());
        for (name, value) in store.iter() {
            tensors.push(TensorEntry { name: name.to_owned(), shape: value.shape().to_vec(), offset: payload.len() });
            payload.extend(value.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)));
        }
        Ok(Self {
            kind: kind.to_owned(),
            seed: store.seed(),
            config: serde_json::to_value(config)?,
            tensors,
            payload,
        })
    }

    pub fn config_as<C: DeserializeOwned>(&self) -> Result<C> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn get(&self, name: &str) -> Option<Array<f32>> {
        let e = self.tensors.iter().find(|e| e.name == name)?;
        let n = numel(&e.shape);
        Array::new(&e.shape, self.payload[e.offset..e.offset + n].to_vec()).ok()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            kind: self.kind.clone(),
            seed: self.seed,
            config: self.config.clone(),
            tensors: self.tensors.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + 4 * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(format_err(path, "not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(format_err(path, format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + len).ok_or_else(|| format_err(path, "truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| format_err(path, e.to_string()))?;
        let raw = &bytes[20 + len..];
        if raw.len() % 4 != 0 {
            return Err(format_err(path, "payload is not a whole number of f32 values"));
        }
        let payload: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let mut expected = 0;
        for e in &manifest.tensors {
            if e.offset != expected {
                return Err(format_err(path, format!("tensor {} has offset {} (expected {expected})", e.name, e.offset)));
            }
            expected += numel(&e.shape);
        }
        if expected != payload.len() {
            return Err(format_err(path, format!("payload holds {} values, manifest needs {expected}", payload.len())));
        }
        Ok(Self {
            kind: manifest.kind,
            seed: manifest.seed,
            config: manifest.config,
            tensors: manifest.tensors,
            payload,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, &path.display().to_string())
    }

    /// Copies every tensor whose name starts with `prefix` into `store`.
    ///
    /// Both sides must hold exactly the same set of names under the prefix,
    /// with equal shapes; otherwise nothing is copied and the differing
    /// names are reported.
    pub fn restore_prefix<T: Scalar>(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<usize> {
        let mut differing = Vec::new();
        let mut copies = Vec::new();
        for id in store.ids() {
            let name = store.name(id);
            if !name.starts_with(prefix) {
                continue;
            }
            match self.tensors.iter().find(|e| e.name == name) {
                Some(e) if e.shape == store.get(id).shape() => copies.push((id, e)),
                _ => differing.push(name.to_owned()),
            }
        }
        for e in self.tensors.iter().filter(|e| e.name.starts_with(prefix)) {
            if store.id(&e.name).is_none() {
                differing.push(e.name.clone());
            }
        }
        if !differing.is_empty() {
            differing.sort();
            return Err(Error::ArchitectureMismatch(differing));
        }
        let count = copies.len();
        for (id, e) in copies {
            let n = numel(&e.shape);
            let values = self.payload[e.offset..e.offset + n].iter().map(|&v| T::of(v as f64)).collect();
            store.set(id, Array::new(&e.shape, values)?)?;
        }
        Ok(count)
    }

    /// Restores every tensor; the store must match the checkpoint exactly.
    pub fn restore<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<usize> {
        self.restore_prefix(store, "")
    }
}
