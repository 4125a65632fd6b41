//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "GSCK" | version u32 | config digest [32] | metadata len u32 | metadata utf-8
//! set count u32
//!   per set: name | tensor count u32
//!     per tensor: name | rank u32 | dims u64… | values f64…
//! ```
//!
//! Names are a u32 length followed by utf-8 bytes.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GSCK";
pub const FORMAT_VERSION: u32 = 1;

/// SHA-256 of a canonical config serialization.
pub fn config_digest(canonical: &str) -> [u8; 32] {
    Sha256::digest(canonical.as_bytes()).into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_digest: [u8; 32],
    /// Free-form JSON describing the networks (sizes, method, step counts).
    pub metadata: String,
    pub sets: Vec<(String, ParamSet)>,
}

impl Checkpoint {
    pub fn set(&self, name: &str) -> Option<&ParamSet> {
        self.sets.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn require(&self, name: &str) -> Result<&ParamSet> {
        self.set(name)
            .ok_or_else(|| Error::Compatibility(format!("missing parameter set {name:?}")))
    }

    pub fn check_digest(&self, expected: &[u8; 32]) -> Result<()> {
        if &self.config_digest == expected {
            Ok(())
        } else {
            Err(Error::Compatibility(format!(
                "config digest {} does not match {}",
                hex::encode(self.config_digest),
                hex::encode(expected)
            )))
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.config_digest)?;
        write_str(w, &self.metadata)?;
        write_u32(w, self.sets.len())?;
        for (name, set) in &self.sets {
            write_str(w, name)?;
            write_u32(w, set.tensors.len())?;
            for t in &set.tensors {
                write_str(w, &t.name)?;
                write_u32(w, t.shape.len())?;
                for &d in &t.shape {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
                for v in &t.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let mut config_digest = [0u8; 32];
        read_exact(r, &mut config_digest)?;
        let metadata = read_str(r)?;
        let n_sets = read_u32(r)?;
        let mut sets = Vec::with_capacity(n_sets.min(64) as usize);
        for _ in 0..n_sets {
            let name = read_str(r)?;
            let n_tensors = read_u32(r)?;
            let mut tensors = Vec::new();
            for _ in 0..n_tensors {
                let tname = read_str(r)?;
                let rank = read_u32(r)? as usize;
                if rank > 8 {
                    return Err(Error::Checkpoint(format!("tensor {tname:?} has rank {rank}")));
                }
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    let mut b = [0u8; 8];
                    read_exact(r, &mut b)?;
                    shape.push(u64::from_le_bytes(b) as usize);
                }
                let len = shape
                    .iter()
                    .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                    .filter(|&l| l <= 1 << 28)
                    .ok_or_else(|| Error::Checkpoint(format!("tensor {tname:?} too large")))?;
                let mut raw = vec![0u8; len * 8];
                read_exact(r, &mut raw)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                tensors.push(Tensor {
                    name: tname,
                    shape,
                    data,
                });
            }
            sets.push((name, ParamSet::new(tensors)));
        }
        Ok(Self {
            config_digest,
            metadata,
            sets,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint("count overflows u32".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("truncated checkpoint".into()),
        _ => Error::Io(e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(Error::Checkpoint("string too long".into()));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
}
