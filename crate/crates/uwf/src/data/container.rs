//! The UWFD tensor container.
//!
//! Layout: `b"UWFD"`, version (u32 LE), header length (u64 LE), a UTF-8 JSON
//! header `{"tensors": [{"name", "dtype", "shape"}...], "meta": {...}}`, then
//! the payloads in header order, little-endian, complex values interleaved
//! as (re, im).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, C64};

pub const MAGIC: &[u8; 4] = b"UWFD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    C128(Vec<C64>),
}

impl TensorData {
    fn dtype(&self) -> &'static str {
        match self {
            TensorData::F64(_) => "f64",
            TensorData::C128(_) => "c128",
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::C128(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Tensor::new(name.into(), shape, TensorData::F64(data))
    }

    pub fn c128(name: impl Into<String>, shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        Tensor::new(name.into(), shape, TensorData::C128(data))
    }

    fn new(name: String, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::Dim(format!("tensor {name}: shape {shape:?} holds {want}, got {}", data.len())));
        }
        Ok(Tensor { name, shape, data })
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Named tensors plus free-form JSON metadata. Order is preserved.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub tensors: Vec<Tensor>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    /// Insert or replace by name.
    pub fn put(&mut self, t: Tensor) {
        match self.tensors.iter_mut().find(|x| x.name == t.name) {
            Some(slot) => *slot = t,
            None => self.tensors.push(t),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    pub fn f64(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let t = self.require(name)?;
        match &t.data {
            TensorData::F64(v) => Ok((&t.shape, v)),
            _ => Err(Error::Format(format!("tensor {name} is not f64"))),
        }
    }

    pub fn c128(&self, name: &str) -> Result<(&[usize], &[C64])> {
        let t = self.require(name)?;
        match &t.data {
            TensorData::C128(v) => Ok((&t.shape, v)),
            _ => Err(Error::Format(format!("tensor {name} is not c128"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            tensors: self
                .tensors
                .iter()
                .map(|t| Entry { name: t.name.clone(), dtype: t.data.dtype().into(), shape: t.shape.clone() })
                .collect(),
            meta: serde_json::Value::Object(self.meta.clone()),
        };
        let hjson = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + hjson.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        for t in &self.tensors {
            match &t.data {
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::C128(v) => v.iter().for_each(|z| {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a UWFD container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let hend = 16u64
            .checked_add(hlen)
            .filter(|e| *e <= bytes.len() as u64)
            .ok_or_else(|| Error::Format(format!("header length {hlen} exceeds file size {}", bytes.len())))?
            as usize;
        let header: Header = serde_json::from_slice(&bytes[16..hend])
            .map_err(|e| Error::Format(format!("container header at offset 16: {e}")))?;
        let mut pos = hend;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let count = e
                .shape
                .iter()
                .try_fold(1usize, |a, &b| a.checked_mul(b))
                .ok_or_else(|| Error::Format(format!("tensor {} shape overflows", e.name)))?;
            let width = match e.dtype.as_str() {
                "f64" => 8,
                "c128" => 16,
                other => return Err(Error::Format(format!("tensor {}: unknown dtype {other}", e.name))),
            };
            let nbytes = count
                .checked_mul(width)
                .filter(|n| pos + n <= bytes.len())
                .ok_or_else(|| Error::Format(format!("tensor {} truncated at offset {pos}", e.name)))?;
            let raw = &bytes[pos..pos + nbytes];
            let f = |i: usize| f64::from_le_bytes(raw[8 * i..8 * i + 8].try_into().unwrap());
            let data = if width == 8 {
                TensorData::F64((0..count).map(f).collect())
            } else {
                TensorData::C128((0..count).map(|i| c(f(2 * i), f(2 * i + 1))).collect())
            };
            pos += nbytes;
            tensors.push(Tensor { name: e.name, shape: e.shape, data });
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after payload", bytes.len() - pos)));
        }
        let meta = match header.meta {
            serde_json::Value::Object(m) => m,
            serde_json::Value::Null => Default::default(),
            _ => return Err(Error::Format("container meta must be an object".into())),
        };
        Ok(Container { tensors, meta })
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Container::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
