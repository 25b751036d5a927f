//! Nested-loop oracles for the tensor kernels. Each suite panics on the
//! first mismatch.

use gaitkit_tensor::{sigmoid_scalar, Padding, ReduceMode, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct 5-D cross-correlation, summing taps in (ci, kt, kh, kw) order.
pub fn conv3d_oracle(x: &Tensor, w: &Tensor, b: Option<&Tensor>, same: bool) -> Tensor {
    let (n, ci, t, h, wd) = {
        let s = x.shape();
        (s[0], s[1], s[2], s[3], s[4])
    };
    let (co, kt, kh, kw) = {
        let s = w.shape();
        (s[0], s[2], s[3], s[4])
    };
    let (pt, ph, pw) = if same { (kt / 2, kh / 2, kw / 2) } else { (0, 0, 0) };
    let (to, ho, wo) = (t + 2 * pt - kt + 1, h + 2 * ph - kh + 1, wd + 2 * pw - kw + 1);
    let mut out = Tensor::zeros(vec![n, co, to, ho, wo]);
    for nn in 0..n {
        for o in 0..co {
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b.data()[o]);
                        for c in 0..ci {
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        let it = ot as isize + dt as isize - pt as isize;
                                        let ih = oh as isize + dh as isize - ph as isize;
                                        let iw = ow as isize + dw as isize - pw as isize;
                                        if it < 0 || ih < 0 || iw < 0 || it >= t as isize || ih >= h as isize || iw >= wd as isize {
                                            continue;
                                        }
                                        acc += w.get(&[o, c, dt, dh, dw])
                                            * x.get(&[nn, c, it as usize, ih as usize, iw as usize]);
                                    }
                                }
                            }
                        }
                        let idx = (((nn * co + o) * to + ot) * ho + oh) * wo + ow;
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
    }
    out
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    Tensor::uniform(shape, -2.0, 2.0, rng)
}

pub fn conv2d_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // a fixed hand-checked case plus random shapes
    let mut cases = vec![(2, 3, 5, 5, 4, 3, 3, true)];
    for _ in 0..24 {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let kw = [1, 3][rng.gen_range(0..2)];
        cases.push((
            rng.gen_range(1..3),
            rng.gen_range(1..4),
            rng.gen_range(k..8),
            rng.gen_range(kw..8),
            rng.gen_range(1..4),
            k,
            kw,
            rng.gen_bool(0.5),
        ));
    }
    for (n, c, h, w, co, kh, kw, same) in cases {
        let x = rand_tensor(&mut rng, vec![n, c, h, w]);
        let k = rand_tensor(&mut rng, vec![co, c, kh, kw]);
        let b = rand_tensor(&mut rng, vec![co]);
        let tape = Tape::new();
        let pad = if same { Padding::Same } else { Padding::Valid };
        let y = tape
            .constant(&x)
            .conv2d(tape.constant(&k), Some(tape.constant(&b)), pad)
            .unwrap();
        let x5 = x.clone().reshape(vec![n, c, 1, h, w]).unwrap();
        let k5 = k.clone().reshape(vec![co, c, 1, kh, kw]).unwrap();
        let expect = conv3d_oracle(&x5, &k5, Some(&b), same);
        let got = y.to_tensor().reshape(expect.shape().to_vec()).unwrap();
        assert!(got.max_abs_diff(&expect) <= 1e-12, "conv2d {:?}", (n, c, h, w, co, kh, kw, same));
    }
}

pub fn conv3d_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..25 {
        let kt = [1, 3][rng.gen_range(0..2)];
        let ks = [1, 3][rng.gen_range(0..2)];
        let same = case % 2 == 0;
        let (n, c, t, h, w, co) = (
            rng.gen_range(1..3),
            rng.gen_range(1..4),
            rng.gen_range(kt..6),
            rng.gen_range(ks..6),
            rng.gen_range(ks..6),
            rng.gen_range(1..4),
        );
        let x = rand_tensor(&mut rng, vec![n, c, t, h, w]);
        let k = rand_tensor(&mut rng, vec![co, c, kt, ks, ks]);
        let b = (case % 3 != 0).then(|| rand_tensor(&mut rng, vec![co]));
        let tape = Tape::new();
        let pad = if same { Padding::Same } else { Padding::Valid };
        let y = tape
            .constant(&x)
            .conv3d(tape.constant(&k), b.as_ref().map(|b| tape.constant(b)), pad)
            .unwrap()
            .to_tensor();
        let expect = conv3d_oracle(&x, &k, b.as_ref(), same);
        assert_eq!(y.shape(), expect.shape());
        assert!(y.max_abs_diff(&expect) <= 1e-12);
    }
}

pub fn conv3d_unit_kernel_and_zero_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rand_tensor(&mut rng, vec![2, 1, 3, 4, 5]);
    let tape = Tape::new();
    let one = Tensor::full(vec![1, 1, 1, 1, 1], 1.0);
    let y = tape.constant(&x).conv3d(tape.constant(&one), None, Padding::Same).unwrap();
    assert_eq!(y.value().as_slice(), x.data());

    let zero = Tensor::zeros(vec![2, 2, 3, 4, 5]);
    let k = rand_tensor(&mut rng, vec![3, 2, 3, 3, 3]);
    let y = tape.constant(&zero).conv3d(tape.constant(&k), None, Padding::Same).unwrap();
    assert!(y.value().iter().all(|&v| v == 0.0));

    let k0 = Tensor::zeros(vec![3, 2, 3, 3, 3]);
    let b0 = Tensor::zeros(vec![3]);
    let xr = rand_tensor(&mut rng, vec![2, 2, 3, 4, 5]);
    let y = tape
        .constant(&xr)
        .conv3d(tape.constant(&k0), Some(tape.constant(&b0)), Padding::Same)
        .unwrap();
    assert!(y.value().iter().all(|&v| v == 0.0));
}

pub fn reduce_oracle(x: &Tensor, axis: usize, mode: ReduceMode) -> Vec<f64> {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let ext = shape[axis];
    let mut out = Vec::new();
    for o in 0..outer {
        for i in 0..inner {
            let vals: Vec<f64> = (0..ext).map(|a| x.data()[(o * ext + a) * inner + i]).collect();
            out.push(match mode {
                ReduceMode::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                ReduceMode::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                ReduceMode::Sum => vals.iter().sum(),
                ReduceMode::Mean => vals.iter().sum::<f64>() / ext as f64,
            });
        }
    }
    out
}

pub fn reductions_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..25 {
        let rank = rng.gen_range(1..5);
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..5)).collect();
        let axis = rng.gen_range(0..rank);
        let x = rand_tensor(&mut rng, shape);
        let tape = Tape::new();
        for mode in [ReduceMode::Max, ReduceMode::Min, ReduceMode::Sum, ReduceMode::Mean] {
            let got = tape.constant(&x).reduce(&[axis], mode, false).unwrap();
            let expect = reduce_oracle(&x, axis, mode);
            for (a, b) in got.value().iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

pub fn max_minus_min_matches_brute_force_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = rand_tensor(&mut rng, vec![3, 4, 4]);
    let tape = Tape::new();
    let v = tape.constant(&x);
    let range = v.max(&[0], false).unwrap().sub(v.min(&[0], false).unwrap()).unwrap();
    for i in 0..16 {
        let col = [x.data()[i], x.data()[16 + i], x.data()[32 + i]];
        let hi = col.iter().copied().fold(f64::MIN, f64::max);
        let lo = col.iter().copied().fold(f64::MAX, f64::min);
        assert_eq!(range.value()[i], hi - lo);
    }
}

pub fn gem_oracle(row: &[f64], p: f64, eps: f64) -> f64 {
    let m = row.iter().map(|v| v.max(eps).powf(p)).sum::<f64>() / row.len() as f64;
    m.powf(1.0 / p)
}

pub fn gem_matches_formula_and_mean_at_p_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..25 {
        let (c, s) = (rng.gen_range(1..5), rng.gen_range(1..9));
        let x = Tensor::uniform(vec![c, s], 0.01, 3.0, &mut rng);
        let tape = Tape::new();
        for p in [1.0, 2.0, 6.5] {
            let y = tape.constant(&x).gem_pool(tape.scalar(p), 1e-6).unwrap();
            for ch in 0..c {
                let row = &x.data()[ch * s..(ch + 1) * s];
                assert!((y.value()[ch] - gem_oracle(row, p, 1e-6)).abs() <= 1e-12);
                if p == 1.0 {
                    let mean = row.iter().sum::<f64>() / s as f64;
                    assert!((y.value()[ch] - mean).abs() <= 1e-12);
                }
            }
        }
    }
}

pub fn gem_of_constant_is_constant() {
    let tape = Tape::new();
    let x = tape.constant(&Tensor::full(vec![3, 7], 0.75));
    for p in [1.0, 3.0, 6.5, 8.0] {
        let y = x.gem_pool(tape.scalar(p), 1e-6).unwrap();
        assert!(y.value().iter().all(|v| (v - 0.75).abs() < 1e-12));
    }
}

pub fn sigmoid_matches_scalar_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = rand_tensor(&mut rng, vec![200]);
    let tape = Tape::new();
    let y = tape.constant(&x).sigmoid();
    for (xi, yi) in x.data().iter().zip(y.value().iter()) {
        assert!((yi - 1.0 / (1.0 + (-xi).exp())).abs() <= 1e-15);
    }
    assert_eq!(sigmoid_scalar(0.0), 0.5);
}
