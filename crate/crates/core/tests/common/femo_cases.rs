//! FeMo analytic cases and gradient checks.

use gaitkit::femo::{bidirectional_differences, femo_block, identity_kernel, motion_attention, FemoVars};
use gaitkit_tensor::gradcheck::{check_gradients, DEFAULT_STEP};
use gaitkit_tensor::{Padding, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `[N, C, T, H, W]` features whose frames are all equal.
pub fn constant_in_time(rng: &mut ChaCha8Rng, n: usize, c: usize, t: usize, h: usize, w: usize) -> Tensor {
    let frame: Vec<f64> = (0..n * c * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::from_fn(vec![n, c, t, h, w], |i| {
        let x = i % w;
        let y = (i / w) % h;
        let nc = i / (w * h * t);
        frame[(nc * h + y) * w + x]
    })
}

/// Constant-in-time input with the identity difference kernel: returns
/// the largest deviation of `W` from 0.5 and of the block output from
/// `conv3d(1.5·G)`.
pub fn constant_input_case(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (n, c, t, h, w) = (
        rng.gen_range(1..3),
        rng.gen_range(1..4),
        rng.gen_range(2..6),
        rng.gen_range(2..6),
        rng.gen_range(2..6),
    );
    let g = constant_in_time(rng, n, c, t, h, w);
    let out_w = Tensor::uniform(vec![c, c, 3, 3, 3], -1.0, 1.0, rng);
    let tape = Tape::new();
    let gv = tape.constant(&g);
    let k = tape.constant(&identity_kernel(c));
    let (df, db) = bidirectional_differences(gv, k, None).unwrap();
    let att = motion_attention(df, db).unwrap();
    let w_err = att.value().iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
    let ow = tape.constant(&out_w);
    let block = femo_block(
        gv,
        &FemoVars {
            diff: k,
            diff_backward: None,
            out_weight: ow,
            out_bias: None,
        },
    )
    .unwrap();
    let expect = gv.scale(1.5).conv3d(ow, None, Padding::Same).unwrap();
    let out_err = block
        .value()
        .iter()
        .zip(expect.value().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    (w_err, out_err)
}

/// Attention of a random input and kernel; returns (min, max) of `W`.
pub fn attention_range(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (n, c, t, h, w) = (
        rng.gen_range(1..3),
        rng.gen_range(1..4),
        rng.gen_range(2..5),
        rng.gen_range(1..5),
        rng.gen_range(1..5),
    );
    let scale = rng.gen_range(0.1..5.0);
    let g = Tensor::uniform(vec![n, c, t, h, w], -scale, scale, rng);
    let kf = Tensor::uniform(vec![c, c, 3, 3], -1.0, 1.0, rng);
    let kb = Tensor::uniform(vec![c, c, 3, 3], -1.0, 1.0, rng);
    let tape = Tape::new();
    let back = rng.gen_bool(0.5).then(|| tape.constant(&kb));
    let (df, db) = bidirectional_differences(tape.constant(&g), tape.constant(&kf), back).unwrap();
    let v = motion_attention(df, db).unwrap().value();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Finite-difference check of the whole block on a random configuration
/// (batched or not, shared or per-direction kernels, with or without
/// output bias). Returns the largest relative error.
pub fn block_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    let (c, t, h, w) = (rng.gen_range(1..3), rng.gen_range(2..4), rng.gen_range(2..4), rng.gen_range(2..4));
    let batched = rng.gen_bool(0.5);
    let per_direction = rng.gen_bool(0.5);
    let with_bias = rng.gen_bool(0.5);
    let gshape = if batched { vec![2, c, t, h, w] } else { vec![c, t, h, w] };
    let leaf = |rng: &mut ChaCha8Rng, shape: Vec<usize>, s: f64| Tensor::uniform(shape, -s, s, rng).with_requires_grad(true);
    let inputs = vec![
        leaf(rng, gshape, 1.5),
        leaf(rng, vec![c, c, 3, 3], 0.7),
        leaf(rng, vec![c, c, 3, 3], 0.7),
        leaf(rng, vec![c, c, 3, 3, 3], 0.5),
        leaf(rng, vec![c], 0.5),
    ];
    let report = check_gradients(
        move |_, v| {
            let p = FemoVars {
                diff: v[1],
                diff_backward: per_direction.then_some(v[2]),
                out_weight: v[3],
                out_bias: with_bias.then_some(v[4]),
            };
            Ok(femo_block(v[0], &p).expect("valid block inputs"))
        },
        &inputs,
        DEFAULT_STEP,
    )
    .unwrap();
    report
        .rel_errors
        .iter()
        .enumerate()
        // unused kernel/bias have no gradient on either side
        .filter(|(i, _)| (*i != 2 || per_direction) && (*i != 4 || with_bias))
        .map(|(_, e)| *e)
        .fold(0.0, f64::max)
}
