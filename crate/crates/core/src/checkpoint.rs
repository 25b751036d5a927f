//! Named-tensor container.
//!
//! ```text
//! "GKPT" | u32 version = 1 | u64 manifest length | manifest (JSON)
//!        | u32 tensor count | { u32 name length | name | GTSR record } × count
//!        | SHA-256 of all preceding bytes
//! ```

use std::fs;
use std::path::Path;

use gaitkit_tensor::codec::{self, CodecError};
use gaitkit_tensor::Tensor;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {}, expected \"GKPT\"", String::from_utf8_lossy(.0))]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch; the file is corrupt")]
    Checksum,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("tensor {name:?}: {source}")]
    Tensor {
        name: String,
        #[source]
        source: CodecError,
    },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
}

/// Serialises `manifest` and the named tensors, in order.
pub fn encode(manifest: &[u8], tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        codec::write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses a container, returning the raw manifest and the tensors.
pub fn decode(bytes: &[u8]) -> std::result::Result<(Vec<u8>, Vec<(String, Tensor)>), CheckpointError> {
    let mut cur = Cursor { buf: bytes };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    if bytes.len() < 32 + 16 {
        return Err(CheckpointError::Truncated("checksum"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(CheckpointError::Checksum);
    }
    let mut cur = Cursor { buf: &body[8..] };
    let mlen = u64::from_le_bytes(cur.take(8, "manifest length")?.try_into().expect("8 bytes"));
    let manifest = cur.take(usize::try_from(mlen).unwrap_or(usize::MAX), "manifest")?.to_vec();
    let count = cur.u32("tensor count")?;
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    for _ in 0..count {
        let nlen = cur.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(cur.take(nlen, "tensor name")?)
            .map_err(|_| CheckpointError::Manifest("tensor name is not UTF-8".into()))?
            .to_string();
        if tensors.iter().any(|(n, _)| *n == name) {
            return Err(CheckpointError::DuplicateName(name));
        }
        let t = codec::read_tensor(&mut cur.buf).map_err(|source| CheckpointError::Tensor {
            name: name.clone(),
            source,
        })?;
        tensors.push((name, t));
    }
    if !cur.buf.is_empty() {
        return Err(CheckpointError::Manifest(format!("{} unexpected bytes after the tensors", cur.buf.len())));
    }
    Ok((manifest, tensors))
}

pub fn write_file(path: &Path, manifest: &[u8], tensors: &[(String, Tensor)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, encode(manifest, tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<(Vec<u8>, Vec<(String, Tensor)>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let tensors = vec![
            ("a".to_string(), Tensor::from_fn(vec![2, 3], |i| i as f64 * 0.5)),
            ("b.c".to_string(), Tensor::scalar(-1.25)),
        ];
        encode(br#"{"k":1}"#, &tensors)
    }

    #[test]
    fn round_trip() {
        let bytes = sample();
        let (m, t) = decode(&bytes).unwrap();
        assert_eq!(m, br#"{"k":1}"#);
        assert_eq!(t.len(), 2);
        assert_eq!(encode(&m, &t), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample();
        bytes[0] = b'Z';
        assert!(matches!(decode(&bytes), Err(CheckpointError::BadMagic(_))));
        let mut bytes = sample();
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(CheckpointError::UnsupportedVersion(9))));
        let mut bytes = sample();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode(&bytes), Err(CheckpointError::Checksum)));
        let bytes = sample();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
