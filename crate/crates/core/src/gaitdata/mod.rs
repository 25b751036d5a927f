//! Silhouette sequences, the GSEQ file format, dataset trees, input
//! normalisation and the procedural walker that stands in for real
//! gait corpora.

mod gseq;
mod index;
mod normalize;
mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use gaitkit_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gseq::{decode_gseq, encode_gseq, load_sequence, read_sequence, save_sequence, GseqError};
pub use index::{Dataset, DatasetIndex, IndexEntry, Split, SplitName};
pub use normalize::{normalize, normalize_frame, NORM_HEIGHT, NORM_WIDTH};
pub use synth::{
    generate_synthetic, render_sequence, sample_subjects, BagConfig, CoatConfig, ConditionCount, GaitRanges, Range,
    SynthConfig, WalkerParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    NM,
    BG,
    CL,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::NM, Condition::BG, Condition::CL];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::NM => "NM",
            Condition::BG => "BG",
            Condition::CL => "CL",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NM" | "nm" => Ok(Condition::NM),
            "BG" | "bg" => Ok(Condition::BG),
            "CL" | "cl" => Ok(Condition::CL),
            other => Err(Error::Input(format!("unknown walking condition {other:?}"))),
        }
    }
}

/// Identity and recording conditions of one walking instance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub subject_id: String,
    pub condition: Condition,
    /// Instance number within the condition, starting at 1.
    pub seq_no: u32,
    pub view_deg: u16,
}

impl SequenceMeta {
    pub fn new(subject_id: impl Into<String>, condition: Condition, seq_no: u32, view_deg: u16) -> Self {
        Self {
            subject_id: subject_id.into(),
            condition,
            seq_no,
            view_deg,
        }
    }

    /// `<subject>/<COND>-<nn>/<view>/seq.gseq`, relative to a dataset root.
    pub fn rel_path(&self) -> PathBuf {
        let mut p = PathBuf::from(&self.subject_id);
        p.push(format!("{}-{:02}", self.condition, self.seq_no));
        p.push(format!("{:03}", self.view_deg));
        p.push("seq.gseq");
        p
    }

    /// Inverse of [`SequenceMeta::rel_path`], reading the last four path
    /// components.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let parts: Vec<&str> = path.iter().filter_map(|c| c.to_str()).collect();
        let bad = || Error::Input(format!("{} is not laid out as <subject>/<COND>-<nn>/<view>/seq.gseq", path.display()));
        if parts.len() < 4 {
            return Err(bad());
        }
        let n = parts.len();
        let (subject, cond, view) = (parts[n - 4], parts[n - 3], parts[n - 2]);
        let (c, no) = cond.split_once('-').ok_or_else(bad)?;
        let view_deg: u16 = view.parse().map_err(|_| bad())?;
        if view_deg >= 360 {
            return Err(bad());
        }
        Ok(Self::new(subject, c.parse()?, no.parse().map_err(|_| bad())?, view_deg))
    }
}

impl fmt::Display for SequenceMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}-{:02}/{:03}", self.subject_id, self.condition, self.seq_no, self.view_deg)
    }
}

/// `K` binary frames of size `H × W`, stored row-major as 0/1 bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SilhouetteSequence {
    pub meta: SequenceMeta,
    k: usize,
    h: usize,
    w: usize,
    frames: Vec<u8>,
}

impl SilhouetteSequence {
    pub fn new(meta: SequenceMeta, k: usize, h: usize, w: usize, frames: Vec<u8>) -> Result<Self> {
        if k == 0 || h == 0 || w == 0 {
            return Err(Error::Input(format!("sequence extents must be positive, got {k}×{h}×{w}")));
        }
        if frames.len() != k * h * w {
            return Err(Error::Input(format!(
                "sequence payload has {} pixels, extents {k}×{h}×{w} need {}",
                frames.len(),
                k * h * w
            )));
        }
        if let Some(pos) = frames.iter().position(|&v| v > 1) {
            return Err(Error::Input(format!("pixel {pos} has value {}, expected 0 or 1", frames[pos])));
        }
        Ok(Self { meta, k, h, w, frames })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn frames(&self) -> &[u8] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.h * self.w;
        &self.frames[t * n..(t + 1) * n]
    }

    /// Frames as a `[K, H, W]` tensor of 0.0/1.0.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.k, self.h, self.w], self.frames.iter().map(|&v| v as f64).collect())
            .expect("extents validated at construction")
    }

    /// Frames `idx[0], idx[1], …` as a `[len, H, W]` tensor.
    pub fn select_frames(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.h * self.w);
        for &t in idx {
            data.extend(self.frame(t).iter().map(|&v| v as f64));
        }
        Tensor::new(vec![idx.len(), self.h, self.w], data).expect("non-empty selection")
    }

    pub fn foreground_count(&self) -> usize {
        self.frames.iter().filter(|&&v| v == 1).count()
    }
}
