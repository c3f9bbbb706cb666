//! Versioned binary container of named `f64` tensors.
//!
//! Layout (little endian): magic `PLNTCKPT`, `u32` version, `u32`-prefixed
//! model kind string, `u32` tensor count, then per tensor a `u32`-prefixed
//! name, `u64` rows, `u64` cols and `rows * cols` raw `f64` values. Values are
//! stored as their bit patterns, so save/load is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::neural::Matrix;

const MAGIC: &[u8; 8] = b"PLNTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model kind, e.g. `planetoid-t` or `feat`.
    pub kind: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            value,
        });
    }

    pub fn push_vector(&mut self, name: impl Into<String>, values: &[f64]) {
        let m = Matrix::from_vec(1, values.len(), values.to_vec()).expect("shape matches");
        self.push(name, m);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.value)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::Data(format!("checkpoint ({}) lacks tensor {name}", self.kind)))
    }

    pub fn require_vector(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.require(name)?;
        if m.rows() != 1 {
            return Err(Error::Data(format!("tensor {name} is not a vector")));
        }
        Ok(m.data().to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        write_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            write_str(&mut out, &t.name);
            out.extend_from_slice(&(t.value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.value.cols() as u64).to_le_bytes());
            for v in t.value.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let kind = read_str(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.len()))
                .ok_or_else(|| Error::Data(format!("tensor {name} is truncated")))?;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_bits(read_u64(&mut r)?));
            }
            tensors.push(NamedTensor {
                name,
                value: Matrix::from_vec(rows, cols, data)?,
            });
        }
        if !r.is_empty() {
            return Err(Error::Data("trailing bytes after checkpoint".into()));
        }
        Ok(Self { kind, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    if r.len() < buf.len() {
        return Err(Error::Data("checkpoint is truncated".into()));
    }
    buf.copy_from_slice(&r[..buf.len()]);
    *r = &r[buf.len()..];
    Ok(())
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut &[u8]) -> Result<String> {
    let len = read_u32(r)? as usize;
    if r.len() < len {
        return Err(Error::Data("checkpoint is truncated".into()));
    }
    let s = std::str::from_utf8(&r[..len])
        .map_err(|_| Error::Data("checkpoint string is not UTF-8".into()))?
        .to_string();
    *r = &r[len..];
    Ok(s)
}
