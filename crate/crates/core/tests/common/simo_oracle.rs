//! Brute-force motion sequence: one pixel and one clip at a time.

use gaitkit::simo::{build_motion_sequence, Aggregation, SimoConfig, TailPolicy};
use gaitkit_tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Expected {
    pub masks: Vec<f64>,
    pub motion_frames: Vec<f64>,
    pub aggregated: Vec<f64>,
}

pub fn oracle(frames: &[u8], k: usize, h: usize, w: usize, l: usize, tail: TailPolicy, agg: Aggregation) -> Expected {
    let clips = match tail {
        TailPolicy::Drop => k / l,
        TailPolicy::PadRepeatLast => k.div_ceil(l),
    };
    let px = |t: usize, y: usize, x: usize| frames[(t.min(k - 1) * h + y) * w + x];
    let mut masks = vec![0.0; clips * h * w];
    let mut motion = vec![0.0; clips * l * h * w];
    let mut aggregated = vec![0.0; clips * h * w];
    for c in 0..clips {
        for y in 0..h {
            for x in 0..w {
                let vals: Vec<u8> = (0..l).map(|j| px(c * l + j, y, x)).collect();
                let moving = vals.iter().any(|&v| v != vals[0]);
                masks[(c * h + y) * w + x] = if moving { 1.0 } else { 0.0 };
                let mut ones = 0;
                for (j, &v) in vals.iter().enumerate() {
                    let m = if moving && v == 1 { 1.0 } else { 0.0 };
                    motion[((c * l + j) * h + y) * w + x] = m;
                    ones += m as usize;
                }
                aggregated[(c * h + y) * w + x] = match agg {
                    Aggregation::Mean => ones as f64 / l as f64,
                    Aggregation::Max => (ones > 0) as u8 as f64,
                };
            }
        }
    }
    Expected {
        masks,
        motion_frames: motion,
        aggregated,
    }
}

/// Checks one random instance; returns a description of the first
/// disagreement.
pub fn check_random_instance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let l = rng.gen_range(2..=4);
    let tail = if rng.gen_bool(0.5) { TailPolicy::Drop } else { TailPolicy::PadRepeatLast };
    let agg = if rng.gen_bool(0.5) { Aggregation::Mean } else { Aggregation::Max };
    let min_k = if tail == TailPolicy::Drop { l } else { 1 };
    let (k, h, w) = (rng.gen_range(min_k..=12), rng.gen_range(1..=8), rng.gen_range(1..=8));
    let density = rng.gen_range(0.1..0.9);
    let frames: Vec<u8> = (0..k * h * w).map(|_| rng.gen_bool(density) as u8).collect();
    let cfg = SimoConfig {
        clip_len: l,
        aggregation: agg,
        tail_policy: tail,
        ..SimoConfig::default()
    };
    let input = Tensor::new(vec![k, h, w], frames.iter().map(|&v| v as f64).collect()).unwrap();
    let got = build_motion_sequence(&input, &cfg).map_err(|e| e.to_string())?;
    let want = oracle(&frames, k, h, w, l, tail, agg);
    let case = format!("K={k} L={l} {h}x{w} {tail:?} {agg:?}");
    for (name, g, e) in [
        ("masks", got.masks.data(), &want.masks),
        ("motion_frames", got.motion_frames.data(), &want.motion_frames),
        ("aggregated", got.aggregated.data(), &want.aggregated),
    ] {
        if g != e.as_slice() {
            return Err(format!("{name} differ for {case}"));
        }
    }
    Ok(())
}
