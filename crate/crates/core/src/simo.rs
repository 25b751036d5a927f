//! Silhouette-level motion: per-clip max−min masks, masked motion clips,
//! clip aggregation, the shallow motion convolution and channel fusion
//! with the appearance stream.

use gaitkit_tensor::{concat, Padding, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailPolicy {
    /// Frames after the last full clip are discarded.
    #[default]
    Drop,
    /// The last partial clip is completed by repeating its final frame.
    PadRepeatLast,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimoConfig {
    pub clip_len: usize,
    pub aggregation: Aggregation,
    pub motion_channels: usize,
    pub tail_policy: TailPolicy,
}

impl Default for SimoConfig {
    fn default() -> Self {
        Self {
            clip_len: 4,
            aggregation: Aggregation::Mean,
            motion_channels: 16,
            tail_policy: TailPolicy::Drop,
        }
    }
}

impl SimoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len < 2 {
            return Err(Error::Config(format!("simo.clip_len must be >= 2, got {}", self.clip_len)));
        }
        if self.motion_channels == 0 {
            return Err(Error::Config("simo.motion_channels must be positive".into()));
        }
        Ok(())
    }
}

/// Frame indices of each clip of a `K`-frame sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipPartition {
    pub clip_len: usize,
    pub tail_policy: TailPolicy,
    pub clips: Vec<Vec<usize>>,
}

impl ClipPartition {
    pub fn new(k: usize, clip_len: usize, tail_policy: TailPolicy) -> Result<Self> {
        if clip_len == 0 {
            return Err(Error::Input("clip length must be positive".into()));
        }
        let n = match tail_policy {
            TailPolicy::Drop => k / clip_len,
            TailPolicy::PadRepeatLast => k.div_ceil(clip_len),
        };
        if n == 0 {
            return Err(Error::Input(format!("{k} frames hold no clip of length {clip_len}")));
        }
        let clips = (0..n)
            .map(|c| (0..clip_len).map(|j| (c * clip_len + j).min(k - 1)).collect())
            .collect();
        Ok(Self {
            clip_len,
            tail_policy,
            clips,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn flat_indices(&self) -> Vec<usize> {
        self.clips.iter().flatten().copied().collect()
    }
}

/// Graph nodes of a batched motion sequence.
pub struct MotionVars<'t> {
    /// `[N, clips, H, W]`
    pub masks: Var<'t>,
    /// `[N, clips·L, H, W]`
    pub motion_frames: Var<'t>,
    /// `[N, clips, H, W]`
    pub aggregated: Var<'t>,
}

/// Motion sequence of a batch of frame stacks `[N, K, H, W]`.
pub fn motion_sequence<'t>(frames: Var<'t>, cfg: &SimoConfig) -> Result<MotionVars<'t>> {
    let shape = frames.shape();
    if shape.len() != 4 {
        return Err(Error::Input(format!("motion input must be [N, K, H, W], got {shape:?}")));
    }
    let (n, k, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let part = ClipPartition::new(k, cfg.clip_len, cfg.tail_policy)?;
    let (c, l) = (part.len(), cfg.clip_len);
    let clips = frames.index_select(1, &part.flat_indices())?.reshape(&[n, c, l, h, w])?;
    let mask = clips.max(&[2], true)?.sub(clips.min(&[2], true)?)?;
    let motion = clips.mul(mask)?;
    let aggregated = match cfg.aggregation {
        Aggregation::Mean => motion.mean(&[2], false)?,
        Aggregation::Max => motion.max(&[2], false)?,
    };
    Ok(MotionVars {
        masks: mask.reshape(&[n, c, h, w])?,
        motion_frames: motion.reshape(&[n, c * l, h, w])?,
        aggregated,
    })
}

/// Plain-valued motion sequence of one `[K, H, W]` stack.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    /// `[clips, H, W]`
    pub masks: Tensor,
    /// `[clips·L, H, W]`
    pub motion_frames: Tensor,
    /// `[clips, H, W]`
    pub aggregated: Tensor,
}

fn drop_batch(t: Tensor) -> Tensor {
    let shape = t.shape()[1..].to_vec();
    t.reshape(shape).expect("leading batch axis of 1")
}

pub fn build_motion_sequence(frames: &Tensor, cfg: &SimoConfig) -> Result<MotionSequence> {
    if frames.rank() != 3 {
        return Err(Error::Input(format!("sequence must be [K, H, W], got {:?}", frames.shape())));
    }
    let tape = Tape::new();
    let mut shape = vec![1];
    shape.extend_from_slice(frames.shape());
    let x = tape.constant_from(shape, frames.data().to_vec())?;
    let m = motion_sequence(x, cfg)?;
    Ok(MotionSequence {
        masks: drop_batch(m.masks.to_tensor()),
        motion_frames: drop_batch(m.motion_frames.to_tensor()),
        aggregated: drop_batch(m.aggregated.to_tensor()),
    })
}

/// `max − min` over the frames of one `[L, H, W]` clip.
pub fn compute_motion_mask(clip: &Tensor) -> Result<Tensor> {
    let s = clip.shape();
    if s.len() != 3 {
        return Err(Error::Input(format!("clip must be [L, H, W], got {s:?}")));
    }
    let (l, hw) = (s[0], s[1] * s[2]);
    let d = clip.data();
    let mask = (0..hw)
        .map(|p| {
            let (mut lo, mut hi) = (d[p], d[p]);
            for t in 1..l {
                lo = lo.min(d[t * hw + p]);
                hi = hi.max(d[t * hw + p]);
            }
            hi - lo
        })
        .collect();
    Ok(Tensor::new(vec![s[1], s[2]], mask)?)
}

/// Per-clip mean or max of `[clips·L, H, W]` motion frames.
pub fn aggregate_clips(motion_frames: &Tensor, clip_len: usize, mode: Aggregation) -> Result<Tensor> {
    let s = motion_frames.shape();
    if s.len() != 3 || clip_len == 0 || s[0] % clip_len != 0 {
        return Err(Error::Input(format!(
            "motion frames {s:?} do not split into clips of length {clip_len}"
        )));
    }
    let tape = Tape::new();
    let c = s[0] / clip_len;
    let x = tape.constant(motion_frames).reshape(&[c, clip_len, s[1], s[2]])?;
    let y = match mode {
        Aggregation::Mean => x.mean(&[1], false)?,
        Aggregation::Max => x.max(&[1], false)?,
    };
    Ok(y.to_tensor())
}

/// Shallow motion feature: `leaky_relu(conv3d(aggregated))` with a
/// `[C_m, 1, 3, kh, kw]` kernel, mapping `[N, clips, H, W]` to
/// `[N, C_m, clips, H, W]`.
pub fn extract_motion_feature<'t>(
    aggregated: Var<'t>,
    weight: Var<'t>,
    bias: Option<Var<'t>>,
    slope: f64,
) -> Result<Var<'t>> {
    let s = aggregated.shape();
    if s.len() != 4 {
        return Err(Error::Input(format!("aggregated motion must be [N, clips, H, W], got {s:?}")));
    }
    let x = aggregated.reshape(&[s[0], 1, s[1], s[2], s[3]])?;
    Ok(x.conv3d(weight, bias, Padding::Same)?.leaky_relu(slope))
}

/// Source index of output step `t` when a stream of `len` steps is
/// stretched to `total` steps.
pub fn repeat_index(t: usize, len: usize, total: usize) -> usize {
    t * len / total
}

/// Concatenates appearance and motion features along channels,
/// appearance first. Inputs are `[N, C, T, H, W]` (or unbatched
/// `[C, T, H, W]`); the shorter temporal stream is stretched by
/// nearest-index repetition.
pub fn fuse<'t>(appearance: Var<'t>, motion: Var<'t>) -> Result<Var<'t>> {
    let (sa, sm) = (appearance.shape(), motion.shape());
    if sa.len() != sm.len() || !(sa.len() == 4 || sa.len() == 5) {
        return Err(Error::Input(format!(
            "fuse needs two [N, C, T, H, W] or [C, T, H, W] inputs, got {sa:?} and {sm:?}"
        )));
    }
    let r = sa.len();
    let (c_ax, t_ax) = (r - 4, r - 3);
    if sa[r - 2..] != sm[r - 2..] || (r == 5 && sa[0] != sm[0]) {
        return Err(Error::Input(format!("fuse spatial/batch extents differ: {sa:?} vs {sm:?}")));
    }
    let total = sa[t_ax].max(sm[t_ax]);
    let stretch = |v: Var<'t>, len: usize| -> Result<Var<'t>> {
        if len == total {
            return Ok(v);
        }
        let idx: Vec<usize> = (0..total).map(|t| repeat_index(t, len, total)).collect();
        Ok(v.index_select(t_ax, &idx)?)
    };
    let a = stretch(appearance, sa[t_ax])?;
    let m = stretch(motion, sm[t_ax])?;
    Ok(concat(&[a, m], c_ax)?)
}
