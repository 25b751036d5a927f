use super::SilhouetteSequence;
use crate::error::{Error, Result};

pub const NORM_HEIGHT: usize = 64;
pub const NORM_WIDTH: usize = 44;

/// One pass of crop → isotropic nearest-neighbour rescale to height 64 →
/// centroid centring at column 22 → crop/pad to width 44.
fn normalize_once(frame: &[u8], h: usize, w: usize) -> Option<Vec<u8>> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..h {
        for c in 0..w {
            if frame[r * w + c] != 0 {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    if r0 == usize::MAX {
        return None;
    }
    let (bh, bw) = (r1 - r0 + 1, c1 - c0 + 1);
    let sw = ((bw * NORM_HEIGHT) as f64 / bh as f64).round().max(1.0) as usize;

    // nearest neighbour at pixel centres; exact identity when bh == 64
    let src_col: Vec<usize> = (0..sw).map(|j| c0 + (2 * j + 1) * bw / (2 * sw)).collect();
    let mut scaled = vec![0u8; NORM_HEIGHT * sw];
    let (mut mass, mut moment) = (0usize, 0usize);
    for i in 0..NORM_HEIGHT {
        let sr = r0 + (2 * i + 1) * bh / (2 * NORM_HEIGHT);
        for (j, &sc) in src_col.iter().enumerate() {
            let v = frame[sr * w + sc];
            scaled[i * sw + j] = v;
            if v != 0 {
                mass += 1;
                moment += j;
            }
        }
    }
    // every foreground row/column of the box is sampled at least once when
    // upscaling; when downscaling a sparse box may lose all of its pixels
    if mass == 0 {
        return None;
    }
    let cx = moment as f64 / mass as f64;
    let shift = cx.round() as isize - (NORM_WIDTH / 2) as isize;
    let mut out = vec![0u8; NORM_HEIGHT * NORM_WIDTH];
    for i in 0..NORM_HEIGHT {
        for j in 0..NORM_WIDTH {
            let sj = j as isize + shift;
            if sj >= 0 && (sj as usize) < sw {
                out[i * NORM_WIDTH + j] = scaled[i * sw + sj as usize];
            }
        }
    }
    Some(out)
}

/// Normalises one binary frame to 64×44. Returns `None` for a frame with
/// no foreground.
///
/// The single pass is repeated until it reproduces its input, so the
/// result is a fixed point: cropping at the width limit can remove
/// foreground and move the centroid or the bounding box, in which case one
/// more pass re-anchors it.
pub fn normalize_frame(frame: &[u8], h: usize, w: usize) -> Option<Vec<u8>> {
    let mut cur = normalize_once(frame, h, w)?;
    for _ in 0..8 {
        let next = normalize_once(&cur, NORM_HEIGHT, NORM_WIDTH)?;
        if next == cur {
            break;
        }
        cur = next;
    }
    Some(cur)
}

/// Normalises every frame; frames without foreground are dropped.
pub fn normalize(seq: &SilhouetteSequence) -> Result<SilhouetteSequence> {
    let mut frames = Vec::with_capacity(seq.len() * NORM_HEIGHT * NORM_WIDTH);
    let mut kept = 0;
    for t in 0..seq.len() {
        if let Some(f) = normalize_frame(seq.frame(t), seq.height(), seq.width()) {
            frames.extend_from_slice(&f);
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::Input(format!("sequence {} has no foreground in any frame", seq.meta)));
    }
    if kept < seq.len() {
        log::warn!("{}: dropped {} empty frames", seq.meta, seq.len() - kept);
    }
    SilhouetteSequence::new(seq.meta.clone(), kept, NORM_HEIGHT, NORM_WIDTH, frames)
}
