//! Feature-level motion enhancement.
//!
//! For a feature volume `G` with frames `G_t`:
//!
//! ```text
//! Δ(a, b)   = conv2d_3×3(b) − a
//! Δ_C(a, b) = GAP(Δ(a, b))
//! D^F_t     = Δ(G_t, G_{t+1}) + Δ_C(G_t, G_{t+1})
//! D^B_t     = Δ(G_{t+1}, G_t) + Δ_C(G_{t+1}, G_t)
//! W         = (σ(D^F) + σ(D^B)) / 2
//! G^m       = conv3d(G + G ⊙ W)
//! ```
//!
//! `W` has `T − 1` steps; the last map is reused for frame `T`.

use gaitkit_tensor::{Padding, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

fn batched<'t>(g: Var<'t>, rank: usize, what: &str) -> Result<(Var<'t>, bool)> {
    let s = g.shape();
    if s.len() == rank {
        Ok((g, false))
    } else if s.len() + 1 == rank {
        let mut b = vec![1];
        b.extend_from_slice(&s);
        Ok((g.reshape(&b)?, true))
    } else {
        Err(Error::Input(format!("{what}: unexpected shape {s:?}")))
    }
}

fn unbatch<'t>(v: Var<'t>, was_unbatched: bool) -> Result<Var<'t>> {
    if !was_unbatched {
        return Ok(v);
    }
    Ok(v.reshape(&v.shape()[1..])?)
}

/// `conv2d(g_next) − g_t` for `[C, H, W]` or `[N, C, H, W]` frames, same
/// padding, no bias.
pub fn fine_difference<'t>(g_t: Var<'t>, g_next: Var<'t>, kernel: Var<'t>) -> Result<Var<'t>> {
    let (a, flat) = batched(g_t, 4, "fine_difference")?;
    let (b, _) = batched(g_next, 4, "fine_difference")?;
    let d = b.conv2d(kernel, None, Padding::Same)?.sub(a)?;
    unbatch(d, flat)
}

/// Global average over the two trailing (spatial) axes, kept as size 1.
pub fn coarse_difference<'t>(delta: Var<'t>) -> Result<Var<'t>> {
    let r = delta.rank();
    if r < 2 {
        return Err(Error::Input(format!("coarse_difference needs spatial axes, got rank {r}")));
    }
    Ok(delta.mean(&[r - 2, r - 1], true)?)
}

/// Forward and backward difference volumes of `[C, T, H, W]` or
/// `[N, C, T, H, W]` features, each with `T − 1` steps. With
/// `backward_kernel = None` both directions share `kernel`.
pub fn bidirectional_differences<'t>(
    g: Var<'t>,
    kernel: Var<'t>,
    backward_kernel: Option<Var<'t>>,
) -> Result<(Var<'t>, Var<'t>)> {
    let (g, flat) = batched(g, 5, "bidirectional_differences")?;
    let s = g.shape();
    let (n, c, t, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    if t < 2 {
        return Err(Error::Input(format!("temporal differences need T >= 2, got {t}")));
    }
    // [N, T, C, H, W] so that frames are contiguous conv2d inputs
    let frames = g.permute(&[0, 2, 1, 3, 4])?;
    let per_frame = frames.reshape(&[n * t, c, h, w])?;
    let conv_all = |k: Var<'t>| -> Result<Var<'t>> {
        Ok(per_frame.conv2d(k, None, Padding::Same)?.reshape(&[n, t, c, h, w])?)
    };
    let conv_f = conv_all(kernel)?;
    let conv_b = match backward_kernel {
        Some(k) => conv_all(k)?,
        None => conv_f,
    };
    let first = frames.narrow(1, 0, t - 1)?;
    let next = frames.narrow(1, 1, t - 1)?;
    let fine_f = conv_f.narrow(1, 1, t - 1)?.sub(first)?;
    let fine_b = conv_b.narrow(1, 0, t - 1)?.sub(next)?;
    let df = fine_f.add(coarse_difference(fine_f)?)?;
    let db = fine_b.add(coarse_difference(fine_b)?)?;
    let back = |v: Var<'t>| -> Result<Var<'t>> { unbatch(v.permute(&[0, 2, 1, 3, 4])?, flat) };
    Ok((back(df)?, back(db)?))
}

/// `(σ(D^F) + σ(D^B)) / 2`.
pub fn motion_attention<'t>(df: Var<'t>, db: Var<'t>) -> Result<Var<'t>> {
    Ok(df.sigmoid().add(db.sigmoid())?.scale(0.5))
}

/// `conv3d(G + G ⊙ W')` where `W'` is `W` with its last step repeated so
/// that it covers all `T` frames.
pub fn recalibrate<'t>(g: Var<'t>, attention: Var<'t>, out_weight: Var<'t>, out_bias: Option<Var<'t>>) -> Result<Var<'t>> {
    let (g, flat) = batched(g, 5, "recalibrate")?;
    let (a, _) = batched(attention, 5, "recalibrate")?;
    let t = g.shape()[2];
    if a.shape()[2] + 1 != t {
        return Err(Error::Input(format!(
            "attention has {} steps, features have {t}; expected T − 1",
            a.shape()[2]
        )));
    }
    let idx: Vec<usize> = (0..t).map(|i| i.min(t - 2)).collect();
    let aligned = a.index_select(2, &idx)?;
    let enhanced = g.add(g.mul(aligned)?)?;
    unbatch(enhanced.conv3d(out_weight, out_bias, Padding::Same)?, flat)
}

/// Graph handles of one block's parameters.
#[derive(Clone, Copy)]
pub struct FemoVars<'t> {
    pub diff: Var<'t>,
    pub diff_backward: Option<Var<'t>>,
    pub out_weight: Var<'t>,
    pub out_bias: Option<Var<'t>>,
}

/// Full block: shape in equals shape out.
pub fn femo_block<'t>(g: Var<'t>, p: &FemoVars<'t>) -> Result<Var<'t>> {
    let (df, db) = bidirectional_differences(g, p.diff, p.diff_backward)?;
    let w = motion_attention(df, db)?;
    recalibrate(g, w, p.out_weight, p.out_bias)
}

/// `[C, C, 3, 3]` kernel with 1 at the centre of each channel's own map
/// and `N(0, std)` everywhere else.
pub fn identity_plus_noise<R: Rng + ?Sized>(channels: usize, std: f64, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(vec![channels, channels, 3, 3], |i| {
        let (o, rest) = (i / (channels * 9), i % (channels * 9));
        let (c, pos) = (rest / 9, rest % 9);
        if o == c && pos == 4 {
            1.0
        } else {
            normal.sample(rng)
        }
    })
}

/// `[C, C, 3, 3]` identity kernel.
pub fn identity_kernel(channels: usize) -> Tensor {
    Tensor::from_fn(vec![channels, channels, 3, 3], |i| {
        let (o, rest) = (i / (channels * 9), i % (channels * 9));
        if o == rest / 9 && rest % 9 == 4 {
            1.0
        } else {
            0.0
        }
    })
}
