//! The "MRSV" binary tensor format.
//!
//! Single tensor file:
//!
//! ```text
//! "MRSV" | dtype: u32 | ndim: u32 | dims: u32 x ndim | payload (little-endian)
//! ```
//!
//! dtype 1 is `f32`, dtype 2 is `f64`. Dtype 0 marks a named container:
//!
//! ```text
//! "MRSV" | 0: u32 | meta_len: u32 | meta (UTF-8 JSON) | count: u32 |
//!     count x (name_len: u32 | name | dtype: u32 | ndim: u32 | dims | payload)
//! ```
//!
//! Features are stored as `f32`, parameters and optimizer moments as `f64`,
//! so every write/read pair is lossless.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MRSV";

const DTYPE_CONTAINER: u32 = 0;
const DTYPE_F32: u32 = 1;
const DTYPE_F64: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_f32_matrix(m: &Array2<f32>) -> Self {
        Tensor {
            dims: m.shape().to_vec(),
            data: TensorData::F32(m.iter().copied().collect()),
        }
    }

    pub fn from_f64_matrix(m: &Array2<f64>) -> Self {
        Tensor {
            dims: m.shape().to_vec(),
            data: TensorData::F64(m.iter().copied().collect()),
        }
    }

    pub fn from_f32_vec(v: &[f32]) -> Self {
        Tensor {
            dims: vec![v.len()],
            data: TensorData::F32(v.to_vec()),
        }
    }

    pub fn to_f32_matrix(&self) -> Result<Array2<f32>> {
        let (r, c) = self.matrix_dims()?;
        match &self.data {
            TensorData::F32(v) => Ok(Array2::from_shape_vec((r, c), v.clone())
                .expect("dims validated against payload length")),
            TensorData::F64(_) => Err(Error::format("tensor", "expected f32 payload, found f64")),
        }
    }

    pub fn to_f64_matrix(&self) -> Result<Array2<f64>> {
        let (r, c) = self.matrix_dims()?;
        match &self.data {
            TensorData::F64(v) => Ok(Array2::from_shape_vec((r, c), v.clone())
                .expect("dims validated against payload length")),
            TensorData::F32(_) => Err(Error::format("tensor", "expected f64 payload, found f32")),
        }
    }

    pub fn to_f32_vec(&self) -> Result<Array1<f32>> {
        if self.dims.len() != 1 {
            return Err(Error::format(
                "tensor",
                format!("expected 1-d tensor, found {} dims", self.dims.len()),
            ));
        }
        match &self.data {
            TensorData::F32(v) => Ok(Array1::from(v.clone())),
            TensorData::F64(_) => Err(Error::format("tensor", "expected f32 payload, found f64")),
        }
    }

    fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::format(
                "tensor",
                format!("expected 2-d tensor, found dims {other:?}"),
            )),
        }
    }

    fn encode_body(&self, out: &mut Vec<u8>) {
        let dtype = match self.data {
            TensorData::F32(_) => DTYPE_F32,
            TensorData::F64(_) => DTYPE_F64,
        };
        out.extend_from_slice(&dtype.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * 8);
        out.extend_from_slice(MAGIC);
        self.encode_body(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic()?;
        let dtype = r.u32()?;
        let t = r.tensor_body(dtype)?;
        r.finish()?;
        Ok(t)
    }
}

/// Ordered named tensors plus a JSON metadata header.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub entries: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Container {
            meta,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("json values always serialize");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&DTYPE_CONTAINER.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            t.encode_body(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic()?;
        if r.u32()? != DTYPE_CONTAINER {
            return Err(Error::format(
                "mrsv container",
                "file holds a single tensor",
            ));
        }
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::format("mrsv container", format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format("mrsv container", "entry name is not utf-8"))?
                .to_string();
            let dtype = r.u32()?;
            entries.push((name, r.tensor_body(dtype)?));
        }
        r.finish()?;
        Ok(Container { meta, entries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("mrsv", "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self) -> Result<()> {
        if self.take(4)? != MAGIC {
            return Err(Error::format("mrsv", "bad magic"));
        }
        Ok(())
    }

    fn tensor_body(&mut self, dtype: u32) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(self.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let data = match dtype {
            DTYPE_F32 => TensorData::F32(
                self.take(n * 4)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DTYPE_F64 => TensorData::F64(
                self.take(n * 8)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect(),
            ),
            other => return Err(Error::format("mrsv", format!("unknown dtype code {other}"))),
        };
        Ok(Tensor { dims, data })
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format("mrsv", "trailing bytes after payload"));
        }
        Ok(())
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    fs::write(path, c.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::from_bytes(&bytes)
}
