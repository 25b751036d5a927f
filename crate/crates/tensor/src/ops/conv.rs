//! 2-D and 3-D convolution (cross-correlation, stride 1) via im2col.
//!
//! Both variants share one 3-D kernel; conv2d runs it with a unit time axis.

use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Border handling. `Same` zero-pads by `k / 2` on each side and needs odd
/// kernel extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Same,
    Valid,
}

/// Convolution weights `[out, in, (kt,) kh, kw]` with an optional
/// per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl ConvKernel {
    pub fn new(weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let rank = weight.rank();
        if rank != 4 && rank != 5 {
            return Err(TensorError::invalid(
                "ConvKernel",
                format!("weight must be rank 4 or 5, got rank {rank}"),
            ));
        }
        if let Some((axis, &k)) = weight.shape().iter().enumerate().skip(2).find(|(_, &k)| k % 2 == 0) {
            return Err(TensorError::invalid(
                "ConvKernel",
                format!("kernel extent {k} on axis {axis} is even"),
            ));
        }
        if let Some(b) = &bias {
            if b.shape() != [weight.shape()[0]] {
                return Err(TensorError::DimMismatch {
                    op: "ConvKernel",
                    axis: 0,
                    expected: weight.shape()[0],
                    actual: b.numel(),
                });
            }
        }
        Ok(Self { weight, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub co: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub pt: usize,
    pub ph: usize,
    pub pw: usize,
    pub to: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn new(input: &[usize], weight: &[usize], padding: Padding) -> Result<Self> {
        let (n, ci, t, h, w) = (input[0], input[1], input[2], input[3], input[4]);
        let (co, wci, kt, kh, kw) = (weight[0], weight[1], weight[2], weight[3], weight[4]);
        if wci != ci {
            return Err(TensorError::DimMismatch {
                op: "conv",
                axis: 1,
                expected: wci,
                actual: ci,
            });
        }
        let (pt, ph, pw) = match padding {
            Padding::Same => {
                for (axis, k) in [(2, kt), (3, kh), (4, kw)] {
                    if k % 2 == 0 {
                        return Err(TensorError::invalid(
                            "conv",
                            format!("same padding needs odd kernel extents, axis {axis} has {k}"),
                        ));
                    }
                }
                (kt / 2, kh / 2, kw / 2)
            }
            Padding::Valid => (0, 0, 0),
        };
        let out = |size: usize, k: usize, p: usize, axis: usize| -> Result<usize> {
            (size + 2 * p).checked_sub(k - 1).filter(|&o| o > 0).ok_or(TensorError::DimMismatch {
                op: "conv",
                axis,
                expected: k,
                actual: size,
            })
        };
        Ok(Self {
            n,
            ci,
            co,
            t,
            h,
            w,
            kt,
            kh,
            kw,
            pt,
            ph,
            pw,
            to: out(t, kt, pt, 2)?,
            ho: out(h, kh, ph, 3)?,
            wo: out(w, kw, pw, 4)?,
        })
    }

    fn k(&self) -> usize {
        self.ci * self.kt * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.to * self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.ci * self.t * self.h * self.w
    }

    /// Output range `[lo, hi)` along one axis whose input index
    /// `o + d - pad` stays inside `[0, size)`.
    fn valid(o_len: usize, size: usize, d: usize, pad: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(d);
        let hi = (size + pad).saturating_sub(d).min(o_len);
        (lo, hi.max(lo))
    }

    /// Calls `f(col_offset, input_offset, len)` for every contiguous run
    /// linking a column-matrix row segment to an input row segment.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = self.p();
        let mut row = 0;
        for c in 0..self.ci {
            for dt in 0..self.kt {
                let (t_lo, t_hi) = Self::valid(self.to, self.t, dt, self.pt);
                for dh in 0..self.kh {
                    let (h_lo, h_hi) = Self::valid(self.ho, self.h, dh, self.ph);
                    for dw in 0..self.kw {
                        let (w_lo, w_hi) = Self::valid(self.wo, self.w, dw, self.pw);
                        if w_hi > w_lo {
                            for ot in t_lo..t_hi {
                                let it = ot + dt - self.pt;
                                for oh in h_lo..h_hi {
                                    let ih = oh + dh - self.ph;
                                    let col = row * p + (ot * self.ho + oh) * self.wo + w_lo;
                                    let inp = ((c * self.t + it) * self.h + ih) * self.w + w_lo + dw - self.pw;
                                    f(col, inp, w_hi - w_lo);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Writes the in-bounds entries of the column matrix. Padding entries
    /// are left untouched, so `col` must start zeroed; they are the same
    /// for every batch item, so one buffer can be reused across items.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        self.for_each_run(|c, i, len| col[c..c + len].copy_from_slice(&x[i..i + len]));
    }

    fn col2im_add(&self, col: &[f64], gx: &mut [f64]) {
        self.for_each_run(|c, i, len| {
            for (d, s) in gx[i..i + len].iter_mut().zip(&col[c..c + len]) {
                *d += s;
            }
        });
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (k, p) = (g.k(), g.p());
    let mut out = vec![0.0; g.n * g.co * p];
    let mut col = vec![0.0; k * p];
    for n in 0..g.n {
        g.im2col(&x[n * g.in_len()..(n + 1) * g.in_len()], &mut col);
        for co in 0..g.co {
            let o = &mut out[(n * g.co + co) * p..(n * g.co + co + 1) * p];
            if let Some(b) = bias {
                o.fill(b[co]);
            }
            let wrow = &w[co * k..(co + 1) * k];
            for (kk, &wv) in wrow.iter().enumerate() {
                axpy(o, wv, &col[kk * p..(kk + 1) * p]);
            }
        }
    }
    out
}

struct ConvGrads {
    input: Option<Vec<f64>>,
    weight: Option<Vec<f64>>,
    bias: Option<Vec<f64>>,
}

fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads {
    let (k, p) = (g.k(), g.p());
    let mut gx = need_input.then(|| vec![0.0; x.len()]);
    let mut gw = need_weight.then(|| vec![0.0; w.len()]);
    let gb = need_bias.then(|| {
        let mut gb = vec![0.0; g.co];
        for n in 0..g.n {
            for (co, b) in gb.iter_mut().enumerate() {
                *b += gout[(n * g.co + co) * p..(n * g.co + co + 1) * p].iter().sum::<f64>();
            }
        }
        gb
    });
    let mut col = need_weight.then(|| vec![0.0; k * p]);
    let mut gcol = need_input.then(|| vec![0.0; k * p]);
    for n in 0..g.n {
        let gout_n = &gout[n * g.co * p..(n + 1) * g.co * p];
        if let (Some(gw), Some(col)) = (gw.as_mut(), col.as_mut()) {
            g.im2col(&x[n * g.in_len()..(n + 1) * g.in_len()], col);
            for co in 0..g.co {
                let go = &gout_n[co * p..(co + 1) * p];
                for kk in 0..k {
                    gw[co * k + kk] += dot(go, &col[kk * p..(kk + 1) * p]);
                }
            }
        }
        if let (Some(gx), Some(col)) = (gx.as_mut(), gcol.as_mut()) {
            col.fill(0.0);
            for kk in 0..k {
                let c = &mut col[kk * p..(kk + 1) * p];
                for co in 0..g.co {
                    axpy(c, w[co * k + kk], &gout_n[co * p..(co + 1) * p]);
                }
            }
            g.col2im_add(col, &mut gx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}

fn conv_op<'t>(
    op: &'static str,
    input: Var<'t>,
    weight: Var<'t>,
    bias: Option<Var<'t>>,
    padding: Padding,
    as_2d: bool,
) -> Result<Var<'t>> {
    let (rank, in_shape, w_shape) = (input.rank(), input.shape(), weight.shape());
    let want = if as_2d { 4 } else { 5 };
    if rank != want {
        return Err(TensorError::RankMismatch {
            op,
            expected: want,
            actual: rank,
        });
    }
    if w_shape.len() != want {
        return Err(TensorError::RankMismatch {
            op,
            expected: want,
            actual: w_shape.len(),
        });
    }
    let lift = |s: &[usize]| -> Vec<usize> {
        if as_2d {
            vec![s[0], s[1], 1, s[2], s[3]]
        } else {
            s.to_vec()
        }
    };
    let geom = ConvGeom::new(&lift(&in_shape), &lift(&w_shape), padding).map_err(|e| match e {
        // report axes in the caller's rank
        TensorError::DimMismatch {
            axis,
            expected,
            actual,
            ..
        } if as_2d && axis >= 3 => TensorError::DimMismatch {
            op,
            axis: axis - 1,
            expected,
            actual,
        },
        TensorError::DimMismatch {
            axis,
            expected,
            actual,
            ..
        } => TensorError::DimMismatch {
            op,
            axis,
            expected,
            actual,
        },
        other => other,
    })?;
    if let Some(b) = bias {
        if b.shape() != [geom.co] {
            return Err(TensorError::DimMismatch {
                op,
                axis: 0,
                expected: geom.co,
                actual: b.numel(),
            });
        }
    }
    let (xv, wv) = (input.value(), weight.value());
    let bv = bias.map(|b| b.value());
    let out = conv_forward(&geom, &xv, &wv, bv.as_ref().map(|b| b.as_slice()));
    let out_shape = if as_2d {
        vec![geom.n, geom.co, geom.ho, geom.wo]
    } else {
        vec![geom.n, geom.co, geom.to, geom.ho, geom.wo]
    };
    let (ix, iw, ib) = (input.id, weight.id, bias.map(|b| b.id));
    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(input.tape.push_op(out, out_shape, &inputs, move |g, sink| {
        let need_b = ib.is_some_and(|b| sink.wants(b));
        let grads = conv_backward(&geom, &xv, &wv, g, sink.wants(ix), sink.wants(iw), need_b);
        if let Some(gx) = grads.input {
            sink.add(ix, &gx);
        }
        if let Some(gw) = grads.weight {
            sink.add(iw, &gw);
        }
        if let (Some(gb), Some(ib)) = (grads.bias, ib) {
            sink.add(ib, &gb);
        }
    }))
}

impl<'t> Var<'t> {
    /// `[N, C, H, W]` ⋆ `[Co, C, kh, kw]` → `[N, Co, H', W']`.
    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, padding: Padding) -> Result<Var<'t>> {
        conv_op("conv2d", self, weight, bias, padding, true)
    }

    /// `[N, C, T, H, W]` ⋆ `[Co, C, kt, kh, kw]` → `[N, Co, T', H', W']`.
    pub fn conv3d(self, weight: Var<'t>, bias: Option<Var<'t>>, padding: Padding) -> Result<Var<'t>> {
        conv_op("conv3d", self, weight, bias, padding, false)
    }
}
