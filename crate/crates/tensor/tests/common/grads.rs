//! Analytic gradients of every differentiable op against central finite
//! differences (h = 1e-5), 20+ random instances per op. Each suite panics
//! on the first failure.

use gaitkit_tensor::gradcheck::{check_gradients, DEFAULT_STEP};
use gaitkit_tensor::{concat, BnMode, Padding, ReduceMode, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-6;
pub const INSTANCES: usize = 20;

pub fn rt(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    Tensor::uniform(shape, -2.0, 2.0, rng).with_requires_grad(true)
}

pub fn dims(rng: &mut ChaCha8Rng, rank: usize, max: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(1..=max)).collect()
}

pub fn assert_grads<F>(name: &str, f: F, inputs: &[Tensor])
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let report = check_gradients(f, inputs, DEFAULT_STEP).unwrap();
    assert!(
        report.max_rel_error() < TOL,
        "{name}: rel errors {:?} for shapes {:?}",
        report.rel_errors,
        inputs.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>()
    );
}

pub fn elementwise_binary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..INSTANCES {
        let rank = rng.gen_range(1..4);
        let shape = dims(&mut rng, rank, 4);
        let a = rt(&mut rng, shape.clone());
        let b = rt(&mut rng, shape.clone());
        // broadcast operand: random axes collapsed to 1
        let bshape: Vec<usize> = shape.iter().map(|&d| if rng.gen_bool(0.5) { 1 } else { d }).collect();
        let c = rt(&mut rng, bshape);
        assert_grads("add", |_, v| v[0].add(v[1]), &[a.clone(), b.clone()]);
        assert_grads("sub", |_, v| v[0].sub(v[1]), &[a.clone(), b.clone()]);
        assert_grads("mul", |_, v| v[0].mul(v[1]), &[a.clone(), b.clone()]);
        assert_grads("add_bcast", |_, v| v[0].add(v[1]), &[a.clone(), c.clone()]);
        assert_grads("sub_bcast", |_, v| v[1].sub(v[0]), &[a.clone(), c.clone()]);
        assert_grads("mul_bcast", |_, v| v[0].mul(v[1]), &[a.clone(), c.clone()]);
    }
}

pub fn pointwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..INSTANCES {
        let rank = rng.gen_range(1..4);
        let shape = dims(&mut rng, rank, 5);
        let x = rt(&mut rng, shape);
        assert_grads("sigmoid", |_, v| Ok(v[0].sigmoid()), &[x.clone()]);
        assert_grads("leaky_relu", |_, v| Ok(v[0].leaky_relu(0.01)), &[x.clone()]);
        assert_grads("scale", |_, v| Ok(v[0].scale(-1.5).add_scalar(0.3)), &[x.clone()]);
        assert_grads("square", |_, v| Ok(v[0].square()), &[x.clone()]);
    }
}

pub fn reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..INSTANCES {
        let rank = rng.gen_range(1..4);
        let shape = dims(&mut rng, rank, 4);
        let axis = rng.gen_range(0..rank);
        let keep = rng.gen_bool(0.5);
        let x = rt(&mut rng, shape);
        for mode in [ReduceMode::Max, ReduceMode::Min, ReduceMode::Mean, ReduceMode::Sum] {
            assert_grads("reduce", move |_, v| v[0].reduce(&[axis], mode, keep), &[x.clone()]);
        }
        let all: Vec<usize> = (0..rank).collect();
        assert_grads("reduce_all", move |_, v| v[0].reduce(&all, ReduceMode::Mean, false), &[x.clone()]);
    }
}

pub fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..INSTANCES {
        let shape = dims(&mut rng, 3, 4);
        let x = rt(&mut rng, shape.clone());
        let y = rt(&mut rng, shape.clone());
        let n = shape.iter().product::<usize>();
        assert_grads("reshape", move |_, v| v[0].reshape(&[n]), &[x.clone()]);
        assert_grads("permute", |_, v| v[0].permute(&[2, 0, 1]), &[x.clone()]);
        let axis = rng.gen_range(0..3);
        let len = rng.gen_range(1..=shape[axis]);
        let start = rng.gen_range(0..=shape[axis] - len);
        assert_grads("narrow", move |_, v| v[0].narrow(axis, start, len), &[x.clone()]);
        let idx: Vec<usize> = (0..5).map(|_| rng.gen_range(0..shape[axis])).collect();
        let idx2 = idx.clone();
        assert_grads("index_select", move |_, v| v[0].index_select(axis, &idx2), &[x.clone()]);
        let flat: Vec<usize> = (0..7).map(|_| rng.gen_range(0..n)).collect();
        assert_grads("gather_flat", move |_, v| v[0].gather_flat(&flat), &[x.clone()]);
        assert_grads("concat", move |_, v| concat(&[v[0], v[1], v[0]], axis), &[x.clone(), y.clone()]);
    }
}

pub fn convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..INSTANCES {
        let pad = if i % 2 == 0 { Padding::Same } else { Padding::Valid };
        let (n, c, co) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let (h, w) = (rng.gen_range(3..6), rng.gen_range(3..6));
        let x2 = rt(&mut rng, vec![n, c, h, w]);
        let w2 = rt(&mut rng, vec![co, c, 3, 3]);
        let b = rt(&mut rng, vec![co]);
        assert_grads("conv2d", move |_, v| v[0].conv2d(v[1], Some(v[2]), pad), &[x2, w2, b.clone()]);
        let (t, h, w) = (rng.gen_range(3..5), rng.gen_range(3..5), rng.gen_range(3..5));
        let x3 = rt(&mut rng, vec![n, c, t, h, w]);
        let w3 = rt(&mut rng, vec![co, c, 3, 3, 3]);
        assert_grads("conv3d", move |_, v| v[0].conv3d(v[1], Some(v[2]), pad), &[x3, w3, b]);
    }
}

pub fn pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..INSTANCES {
        let shape = vec![rng.gen_range(1..3), rng.gen_range(2..7), rng.gen_range(2..7)];
        let x = rt(&mut rng, shape);
        assert_grads("max_pool2d", |_, v| v[0].max_pool2d(2), &[x.clone()]);
        assert_grads("avg_pool2d", |_, v| v[0].avg_pool2d(2), &[x.clone()]);
    }
}

pub fn matmuls() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..INSTANCES {
        let (b, m, k, n) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        let a2 = rt(&mut rng, vec![m, k]);
        let c2 = rt(&mut rng, vec![k, n]);
        assert_grads("matmul", |_, v| v[0].matmul(v[1]), &[a2, c2]);
        let a3 = rt(&mut rng, vec![b, m, k]);
        let c3 = rt(&mut rng, vec![b, k, n]);
        assert_grads("bmm", |_, v| v[0].bmm(v[1]), &[a3, c3]);
    }
}

pub fn batch_norm_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..INSTANCES {
        let (n, f) = (rng.gen_range(2..6), rng.gen_range(1..5));
        let x = rt(&mut rng, vec![n, f]);
        let g = rt(&mut rng, vec![f]);
        let b = rt(&mut rng, vec![f]);
        let rm: Vec<f64> = (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rv: Vec<f64> = (0..f).map(|_| rng.gen_range(0.5..2.0)).collect();
        for mode in [BnMode::Train, BnMode::Eval] {
            let (rm, rv) = (rm.clone(), rv.clone());
            assert_grads(
                "batch_norm",
                move |_, v| Ok(v[0].batch_norm(v[1], v[2], &rm, &rv, 1e-5, mode)?.0),
                &[x.clone(), g.clone(), b.clone()],
            );
        }
    }
}

pub fn gem_in_input_and_exponent() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..INSTANCES {
        let shape = vec![rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(2..8)];
        let x = Tensor::uniform(shape, 0.1, 2.0, &mut rng).with_requires_grad(true);
        let p = Tensor::scalar(rng.gen_range(1.5..7.0)).with_requires_grad(true);
        assert_grads("gem_pool", |_, v| v[0].gem_pool(v[1], 1e-6), &[x, p]);
    }
}

pub fn cross_entropy_and_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..INSTANCES {
        let (r, c) = (rng.gen_range(1..6), rng.gen_range(2..6));
        let logits = rt(&mut rng, vec![r, c]);
        let labels: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
        assert_grads("softmax_cross_entropy", move |_, v| v[0].softmax_cross_entropy(&labels), &[logits]);
        let shape = vec![rng.gen_range(1..3), rng.gen_range(2..5), rng.gen_range(1..4)];
        let x = rt(&mut rng, shape);
        assert_grads("pairwise_distance", |_, v| v[0].pairwise_distance(), &[x]);
    }
}

pub fn composite_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..INSTANCES {
        let x = rt(&mut rng, vec![1, 2, 3, 4, 4]);
        let w = rt(&mut rng, vec![2, 2, 3, 3, 3]);
        let p = Tensor::scalar(3.0).with_requires_grad(true);
        assert_grads(
            "composite",
            |_, v| {
                let y = v[0].conv3d(v[1], None, Padding::Same)?.leaky_relu(0.01);
                let y = y.max(&[2], false)?; // [1, 2, 4, 4]
                let y = y.sigmoid().reshape(&[2, 16])?;
                y.gem_pool(v[2], 1e-6)
            },
            &[x, w, p],
        );
    }
}

pub fn simple_backward_cases() {
    let tape = Tape::new();
    let mut t = Tensor::from_fn(vec![2, 3], |i| i as f64 - 2.5).with_requires_grad(true);
    let x = tape.leaf(&t);
    let loss = x.sum_all();
    tape.backward(loss).unwrap().accumulate_into(x, &mut t).unwrap();
    assert!(t.grad().unwrap().iter().all(|&g| g == 1.0));

    t.zero_grad();
    for _ in 0..2 {
        let tape = Tape::new();
        let x = tape.leaf(&t);
        let loss = x.mul(x).unwrap().sum_all();
        tape.backward(loss).unwrap().accumulate_into(x, &mut t).unwrap();
    }
    // two passes accumulate 2 · 2x
    for (g, v) in t.grad().unwrap().iter().zip(t.data()) {
        assert_eq!(*g, 4.0 * v);
    }
}
