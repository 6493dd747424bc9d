//! Named-tensor weight archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"RBPNTNSR"
//! u32     version (1)
//! u32     dtype (0 = f32, 1 = f64)
//! u32     tensor count
//! repeated:
//!   u32   name length, then UTF-8 name bytes
//!   u32   rank, then rank × u64 dims
//!   data  product(dims) little-endian floats of `dtype`
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rbpn_tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RBPNTNSR";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    fn code(self) -> u32 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }
}

pub fn write_tensors<'a, W: Write>(
    mut out: W,
    tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>,
    dtype: DType,
) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&dtype.code().to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 8);
        match dtype {
            DType::F32 => t.data().iter().for_each(|v| buf.extend_from_slice(&(*v as f32).to_le_bytes())),
            DType::F64 => t.data().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
        }
        out.write_all(&buf)?;
    }
    out.flush()
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Layout {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads every `(name, tensor)` entry, in file order.
pub fn read_tensors(path: &Path) -> Result<(DType, Vec<(String, Tensor)>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    let io = |e: std::io::Error| bad(path, format!("truncated archive: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad(path, "not a weight archive (bad magic)"));
    }
    let version = read_u32(&mut r).map_err(io)?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported archive version {version}")));
    }
    let dtype = match read_u32(&mut r).map_err(io)? {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(bad(path, format!("unknown dtype code {other}"))),
    };
    let count = read_u32(&mut r).map_err(io)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r).map_err(io)? as usize;
        if len > r.len() {
            return Err(bad(path, "truncated tensor name"));
        }
        let (name, rest) = r.split_at(len);
        let name = String::from_utf8(name.to_vec()).map_err(|_| bad(path, "tensor name is not UTF-8"))?;
        r = rest;
        let rank = read_u32(&mut r).map_err(io)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(io)?;
        let n: usize = shape.iter().product();
        let width = if dtype == DType::F32 { 4 } else { 8 };
        if n * width > r.len() {
            return Err(bad(path, format!("truncated data for `{name}`")));
        }
        let (raw, rest) = r.split_at(n * width);
        r = rest;
        let data: Vec<f64> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        out.push((name, Tensor::new(&shape, data)?));
    }
    if !r.is_empty() {
        return Err(bad(path, "trailing bytes after last tensor"));
    }
    Ok((dtype, out))
}

pub fn save_store(path: &Path, store: &ParamStore, dtype: DType) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<(&str, &Tensor)> = store.iter().map(|(_, n, t)| (n, t)).collect();
    write_tensors(std::io::BufWriter::new(file), entries.into_iter(), dtype).map_err(|e| Error::io(path, e))
}

/// Loads an archive into an existing store; names and shapes must match
/// exactly.
pub fn load_store(path: &Path, store: &mut ParamStore) -> Result<DType> {
    let (dtype, entries) = read_tensors(path)?;
    if entries.len() != store.len() {
        return Err(bad(
            path,
            format!("archive holds {} tensors, model expects {}", entries.len(), store.len()),
        ));
    }
    for (name, tensor) in entries {
        let id = store
            .id(&name)
            .ok_or_else(|| bad(path, format!("unexpected tensor `{name}`")))?;
        store
            .set(id, tensor)
            .map_err(|e| bad(path, format!("tensor `{name}`: {e}")))?;
    }
    Ok(dtype)
}
