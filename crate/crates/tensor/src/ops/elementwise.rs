//! Elementwise arithmetic with same-rank broadcasting, plus pointwise
//! activations.

use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::{numel, strides};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

/// Broadcast shape of two same-rank shapes; extents must agree or be 1.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(TensorError::Broadcast {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(TensorError::Broadcast {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            }),
        })
        .collect()
}

/// Strides of `shape` viewed inside `out`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(st)
        .map(|((&d, &o), s)| if d == o { s } else { 0 })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` over `out` in row-major order.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

fn binary<'t>(op: BinOp, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let name = match op {
        BinOp::Add => "add",
        BinOp::Sub => "sub",
        BinOp::Mul => "mul",
    };
    let (sa, sb) = (a.shape(), b.shape());
    let (va, vb) = (a.value(), b.value());
    let apply = |x: f64, y: f64| match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
    };

    if sa == sb {
        let out: Vec<f64> = va.iter().zip(vb.iter()).map(|(&x, &y)| apply(x, y)).collect();
        let (ia, ib) = (a.id, b.id);
        return Ok(a.tape.push_op(out, sa, &[a, b], move |g, sink| {
            match op {
                BinOp::Add => {
                    sink.add(ia, g);
                    sink.add(ib, g);
                }
                BinOp::Sub => {
                    sink.add(ia, g);
                    if let Some(gb) = sink.slot(ib) {
                        gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                    }
                }
                BinOp::Mul => {
                    if let Some(ga) = sink.slot(ia) {
                        for ((d, s), y) in ga.iter_mut().zip(g).zip(vb.iter()) {
                            *d += s * y;
                        }
                    }
                    if let Some(gb) = sink.slot(ib) {
                        for ((d, s), x) in gb.iter_mut().zip(g).zip(va.iter()) {
                            *d += s * x;
                        }
                    }
                }
            }
        }));
    }

    let out_shape = broadcast_shape(name, &sa, &sb)?;
    let (st_a, st_b) = (broadcast_strides(&sa, &out_shape), broadcast_strides(&sb, &out_shape));
    let mut out = vec![0.0; numel(&out_shape)];
    for_each_broadcast(&out_shape, &st_a, &st_b, |o, i, j| out[o] = apply(va[i], vb[j]));
    let (ia, ib) = (a.id, b.id);
    let shape = out_shape.clone();
    Ok(a.tape.push_op(out, out_shape, &[a, b], move |g, sink| {
        if sink.wants(ia) {
            let ga = sink.slot(ia).expect("wanted");
            for_each_broadcast(&shape, &st_a, &st_b, |o, i, j| {
                ga[i] += match op {
                    BinOp::Mul => g[o] * vb[j],
                    _ => g[o],
                }
            });
        }
        if sink.wants(ib) {
            let gb = sink.slot(ib).expect("wanted");
            for_each_broadcast(&shape, &st_a, &st_b, |o, i, j| {
                gb[j] += match op {
                    BinOp::Add => g[o],
                    BinOp::Sub => -g[o],
                    BinOp::Mul => g[o] * va[i],
                }
            });
        }
    }))
}

/// Pointwise map `f` with derivative `df(x, y)` expressed in terms of the
/// input `x` and output `y`.
fn unary<'t>(
    x: Var<'t>,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var<'t> {
    let xv = x.value();
    let out: Vec<f64> = xv.iter().map(|&v| f(v)).collect();
    let ov = Rc::new(out.clone());
    let ix = x.id;
    x.tape.push_op(out, x.shape(), &[x], move |g, sink| {
        if let Some(gx) = sink.slot(ix) {
            for (((d, s), &xi), &yi) in gx.iter_mut().zip(g).zip(xv.iter()).zip(ov.iter()) {
                *d += s * df(xi, yi);
            }
        }
    })
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        binary(BinOp::Add, self, other)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        binary(BinOp::Sub, self, other)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        binary(BinOp::Mul, self, other)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        unary(self, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        unary(self, move |v| v + c, |_, _| 1.0)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn sigmoid(self) -> Var<'t> {
        unary(self, sigmoid_scalar, |_, y| y * (1.0 - y))
    }

    /// `max(x, slope·x)`; `slope = 0` gives ReLU. The kink at 0 takes the
    /// negative-side slope.
    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        unary(
            self,
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn relu(self) -> Var<'t> {
        self.leaky_relu(0.0)
    }

    pub fn square(self) -> Var<'t> {
        unary(self, |v| v * v, |x, _| 2.0 * x)
    }
}
