//! GSEQ: `"GSEQ" | u32 version = 1 | u32 K | u32 H | u32 W | K·H·W bytes`,
//! little-endian, foreground 255 and background 0.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{SequenceMeta, SilhouetteSequence};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GSEQ";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GseqError {
    #[error("bad magic {}, expected \"GSEQ\"", String::from_utf8_lossy(.0))]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated {what}: need {need} bytes, have {have}")]
    Truncated { what: &'static str, need: usize, have: usize },
    #[error("zero extent in header ({k}×{h}×{w})")]
    ZeroExtent { k: u32, h: u32, w: u32 },
    #[error("{extra} bytes after the declared {k}×{h}×{w} payload")]
    TrailingBytes { k: u32, h: u32, w: u32, extra: usize },
    #[error("pixel {offset} has value {value}, expected 0 or 255")]
    BadPixel { offset: usize, value: u8 },
}

pub fn encode_gseq(seq: &SilhouetteSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + seq.frames().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [seq.len(), seq.height(), seq.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend(seq.frames().iter().map(|&v| v * 255));
    out
}

fn word(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_gseq(bytes: &[u8], meta: SequenceMeta) -> std::result::Result<SilhouetteSequence, GseqError> {
    if bytes.len() < 4 {
        return Err(GseqError::Truncated {
            what: "magic",
            need: 4,
            have: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    if &magic != MAGIC {
        return Err(GseqError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(GseqError::Truncated {
            what: "header",
            need: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let version = word(bytes, 4);
    if version != VERSION {
        return Err(GseqError::UnsupportedVersion(version));
    }
    let (k, h, w) = (word(bytes, 8), word(bytes, 12), word(bytes, 16));
    if k == 0 || h == 0 || w == 0 {
        return Err(GseqError::ZeroExtent { k, h, w });
    }
    let need = (k as usize)
        .checked_mul(h as usize)
        .and_then(|n| n.checked_mul(w as usize))
        .unwrap_or(usize::MAX);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < need {
        return Err(GseqError::Truncated {
            what: "payload",
            need,
            have: payload.len(),
        });
    }
    if payload.len() > need {
        return Err(GseqError::TrailingBytes {
            k,
            h,
            w,
            extra: payload.len() - need,
        });
    }
    let mut frames = Vec::with_capacity(need);
    for (offset, &value) in payload.iter().enumerate() {
        match value {
            0 => frames.push(0),
            255 => frames.push(1),
            _ => return Err(GseqError::BadPixel { offset, value }),
        }
    }
    Ok(SilhouetteSequence::new(meta, k as usize, h as usize, w as usize, frames).expect("validated above"))
}

pub fn save_sequence(seq: &SilhouetteSequence, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_gseq(seq)).map_err(|e| Error::io(path, e))
}

/// Reads a GSEQ file with explicitly supplied metadata.
pub fn read_sequence(path: &Path, meta: SequenceMeta) -> Result<SilhouetteSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gseq(&bytes, meta).map_err(|source| Error::Gseq {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a GSEQ file inside a dataset tree, taking the metadata from the
/// `<subject>/<COND>-<nn>/<view>/seq.gseq` path.
pub fn load_sequence(path: &Path) -> Result<SilhouetteSequence> {
    read_sequence(path, SequenceMeta::from_path(path)?)
}
