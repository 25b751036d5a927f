use crate::error::{Result, TensorError};
use crate::tape::Var;

#[derive(Clone, Copy, PartialEq, Eq)]
enum PoolKind {
    Max,
    Avg,
}

/// Non-overlapping `k × k` pooling over the last two axes; trailing rows and
/// columns that do not fill a window are dropped.
fn pool2d<'t>(x: Var<'t>, k: usize, kind: PoolKind) -> Result<Var<'t>> {
    let op = match kind {
        PoolKind::Max => "max_pool2d",
        PoolKind::Avg => "avg_pool2d",
    };
    let shape = x.shape();
    let rank = shape.len();
    if rank < 2 {
        return Err(TensorError::RankMismatch {
            op,
            expected: 2,
            actual: rank,
        });
    }
    if k == 0 {
        return Err(TensorError::invalid(op, "window size must be positive"));
    }
    let (h, w) = (shape[rank - 2], shape[rank - 1]);
    let (ho, wo) = (h / k, w / k);
    if ho == 0 || wo == 0 {
        return Err(TensorError::DimMismatch {
            op,
            axis: if ho == 0 { rank - 2 } else { rank - 1 },
            expected: k,
            actual: if ho == 0 { h } else { w },
        });
    }
    let planes: usize = shape[..rank - 2].iter().product();
    let xv = x.value();
    let mut out = Vec::with_capacity(planes * ho * wo);
    // for max pooling: flat source index of each output
    let mut arg = Vec::with_capacity(if kind == PoolKind::Max { planes * ho * wo } else { 0 });
    let inv = 1.0 / (k * k) as f64;
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * k * w + ox * k;
                let mut acc = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        let i = base + (oy * k + dy) * w + ox * k + dx;
                        acc += xv[i];
                        if xv[i] > xv[best] {
                            best = i;
                        }
                    }
                }
                match kind {
                    PoolKind::Max => {
                        out.push(xv[best]);
                        arg.push(best);
                    }
                    PoolKind::Avg => out.push(acc * inv),
                }
            }
        }
    }
    let mut out_shape = shape.clone();
    out_shape[rank - 2] = ho;
    out_shape[rank - 1] = wo;
    let ix = x.id;
    Ok(x.tape.push_op(out, out_shape, &[x], move |g, sink| {
        let Some(gx) = sink.slot(ix) else { return };
        match kind {
            PoolKind::Max => {
                for (o, &i) in arg.iter().enumerate() {
                    gx[i] += g[o];
                }
            }
            PoolKind::Avg => {
                for p in 0..planes {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let go = g[(p * ho + oy) * wo + ox] * inv;
                            for dy in 0..k {
                                let row = p * h * w + (oy * k + dy) * w + ox * k;
                                gx[row..row + k].iter_mut().for_each(|d| *d += go);
                            }
                        }
                    }
                }
            }
        }
    }))
}

impl<'t> Var<'t> {
    pub fn max_pool2d(self, k: usize) -> Result<Var<'t>> {
        pool2d(self, k, PoolKind::Max)
    }

    pub fn avg_pool2d(self, k: usize) -> Result<Var<'t>> {
        pool2d(self, k, PoolKind::Avg)
    }
}
