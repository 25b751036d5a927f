use crate::error::{Result, TensorError};
use crate::tape::Var;

/// `out[b] = a[b] · c[b]` for `a: [B, M, K]`, `c: [B, K, N]`.
fn bmm_kernel(a: &[f64], c: &[f64], bsz: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; bsz * m * n];
    for b in 0..bsz {
        for i in 0..m {
            let row = &mut out[(b * m + i) * n..(b * m + i + 1) * n];
            for kk in 0..k {
                let av = a[(b * m + i) * k + kk];
                let crow = &c[(b * k + kk) * n..(b * k + kk + 1) * n];
                for (r, &cv) in row.iter_mut().zip(crow) {
                    *r += av * cv;
                }
            }
        }
    }
    out
}

fn bmm_op<'t>(a: Var<'t>, c: Var<'t>, batched: bool) -> Result<Var<'t>> {
    let op = if batched { "bmm" } else { "matmul" };
    let want = if batched { 3 } else { 2 };
    let (sa, sc) = (a.shape(), c.shape());
    for s in [&sa, &sc] {
        if s.len() != want {
            return Err(TensorError::RankMismatch {
                op,
                expected: want,
                actual: s.len(),
            });
        }
    }
    let (bsz, m, k) = if batched { (sa[0], sa[1], sa[2]) } else { (1, sa[0], sa[1]) };
    let (bc, kc, n) = if batched { (sc[0], sc[1], sc[2]) } else { (1, sc[0], sc[1]) };
    if bc != bsz {
        return Err(TensorError::DimMismatch {
            op,
            axis: 0,
            expected: bsz,
            actual: bc,
        });
    }
    if kc != k {
        return Err(TensorError::DimMismatch {
            op,
            axis: want - 2,
            expected: k,
            actual: kc,
        });
    }
    let (av, cv) = (a.value(), c.value());
    let out = bmm_kernel(&av, &cv, bsz, m, k, n);
    let out_shape = if batched { vec![bsz, m, n] } else { vec![m, n] };
    let (ia, ic) = (a.id, c.id);
    Ok(a.tape.push_op(out, out_shape, &[a, c], move |g, sink| {
        // dA = G · Cᵀ, dC = Aᵀ · G
        if let Some(ga) = sink.slot(ia) {
            for b in 0..bsz {
                for i in 0..m {
                    let grow = &g[(b * m + i) * n..(b * m + i + 1) * n];
                    for kk in 0..k {
                        let crow = &cv[(b * k + kk) * n..(b * k + kk + 1) * n];
                        ga[(b * m + i) * k + kk] += grow.iter().zip(crow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
        }
        if let Some(gc) = sink.slot(ic) {
            for b in 0..bsz {
                for i in 0..m {
                    let grow = &g[(b * m + i) * n..(b * m + i + 1) * n];
                    for kk in 0..k {
                        let av_ik = av[(b * m + i) * k + kk];
                        let dst = &mut gc[(b * k + kk) * n..(b * k + kk + 1) * n];
                        for (d, &gv) in dst.iter_mut().zip(grow) {
                            *d += av_ik * gv;
                        }
                    }
                }
            }
        }
    }))
}

impl<'t> Var<'t> {
    /// `[M, K] · [K, N]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        bmm_op(self, other, false)
    }

    /// Batched `[B, M, K] · [B, K, N]`.
    pub fn bmm(self, other: Var<'t>) -> Result<Var<'t>> {
        bmm_op(self, other, true)
    }
}
