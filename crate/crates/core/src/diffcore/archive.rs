//! Named-tensor checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"VGNT" | u32 version | u32 count
//! per tensor: u32 name_len | name (utf-8) | u32 rank | u64 dims[rank] | f64 data[prod(dims)]
//! ```
//!
//! A human-readable manifest (`name<TAB>shape<TAB>len` per line) is written
//! next to it.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::Tensor;

const MAGIC: &[u8; 4] = b"VGNT";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a tensor archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    Version(u32),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
}

pub fn encode(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(r: &mut impl Read) -> Result<u32, ArchiveError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ArchiveError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, ArchiveError> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| ArchiveError::BadMagic)?;
    if &magic != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ArchiveError::Version(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > r.len() {
            return Err(ArchiveError::Corrupt("name overruns archive".into()));
        }
        let (name, rest) = r.split_at(name_len);
        let name = String::from_utf8(name.to_vec()).map_err(|e| ArchiveError::Corrupt(e.to_string()))?;
        r = rest;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        if n.checked_mul(8).is_none_or(|b| b > r.len()) {
            return Err(ArchiveError::Corrupt(format!("tensor {name} overruns archive")));
        }
        let data = (0..n)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>, _>>()?;
        let t = Tensor::new(shape, data).map_err(|e| ArchiveError::Corrupt(e.to_string()))?;
        out.push((name, t));
    }
    if !r.is_empty() {
        return Err(ArchiveError::Corrupt(format!("{} trailing bytes", r.len())));
    }
    Ok(out)
}

pub fn manifest(tensors: &[(String, Tensor)]) -> String {
    let mut s = String::from("# name\tshape\tlen\n");
    for (name, t) in tensors {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("{name}\t{}\t{}\n", shape.join("x"), t.len()));
    }
    s
}

/// Writes `path` and `path` + `.manifest`.
pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<(), ArchiveError> {
    fs::File::create(path)?.write_all(&encode(tensors))?;
    let mut m = path.as_os_str().to_owned();
    m.push(".manifest");
    fs::write(m, manifest(tensors))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>, ArchiveError> {
    decode(&fs::read(path)?)
}
