//! GTSR tensor encoding, little-endian:
//!
//! ```text
//! "GTSR" | u32 version = 1 | u32 rank | u64 extent × rank | f64 × numel
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GTSR";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad tensor magic {0:?}, expected \"GTSR\"")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated tensor record: {0}")]
    Truncated(&'static str),
    #[error("invalid tensor header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), CodecError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CodecError::Truncated(what),
        _ => CodecError::Io(e),
    })
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, CodecError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    let mut word = [0u8; 4];
    read_exact(r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    read_exact(r, &mut word, "rank")?;
    let rank = u32::from_le_bytes(word) as usize;
    if rank > 16 {
        return Err(CodecError::BadHeader(format!("rank {rank} is implausible")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: u64 = 1;
    for _ in 0..rank {
        let mut ext = [0u8; 8];
        read_exact(r, &mut ext, "extents")?;
        let d = u64::from_le_bytes(ext);
        if d == 0 {
            return Err(CodecError::BadHeader("zero extent".into()));
        }
        count = count
            .checked_mul(d)
            .filter(|&c| c <= (1 << 32))
            .ok_or_else(|| CodecError::BadHeader("element count overflow".into()))?;
        shape.push(d as usize);
    }
    let mut bytes = vec![0u8; count as usize * 8];
    read_exact(r, &mut bytes, "payload")?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data).map_err(|e| CodecError::BadHeader(e.to_string()))
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + 8 * t.numel());
    write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    out
}

pub fn decode(mut bytes: &[u8]) -> Result<Tensor, CodecError> {
    let t = read_tensor(&mut bytes)?;
    if !bytes.is_empty() {
        return Err(CodecError::BadHeader(format!("{} trailing bytes", bytes.len())));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::new(vec![2], vec![1.0, -2.5]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"GTSR");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[28..36], &(-2.5f64).to_le_bytes());
        assert_eq!(bytes.len(), 36);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::full(vec![2, 2], 3.0);
        let mut bytes = encode(&t);
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(CodecError::Truncated("payload"))));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(CodecError::BadMagic(m)) if &m == b"XTSR"));
    }

    #[test]
    fn rejects_future_version() {
        let mut bytes = encode(&Tensor::scalar(1.0));
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(CodecError::UnsupportedVersion(2))));
    }

    #[test]
    fn scalar_round_trip() {
        let t = Tensor::scalar(6.5);
        assert_eq!(decode(&encode(&t)).unwrap(), t);
    }
}
