//! Composite ops with hand-written backward passes: batch normalisation,
//! generalized-mean pooling, softmax cross-entropy and pairwise distances.

use crate::error::{Result, TensorError};
use crate::tape::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise with the batch statistics.
    Train,
    /// Normalise with the supplied running statistics.
    Eval,
}

/// Per-feature batch mean and biased variance observed in a training pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

impl<'t> Var<'t> {
    /// Batch normalisation of `[N, F]` with affine `gamma`, `beta` of shape
    /// `[F]`. Returns the batch statistics in train mode so the caller can
    /// update its running averages.
    pub fn batch_norm(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
        mode: BnMode,
    ) -> Result<(Var<'t>, Option<BatchStats>)> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::RankMismatch {
                op: "batch_norm",
                expected: 2,
                actual: shape.len(),
            });
        }
        let (n, f) = (shape[0], shape[1]);
        for (axis, len) in [(0, gamma.numel()), (0, beta.numel()), (0, running_mean.len()), (0, running_var.len())] {
            if len != f {
                return Err(TensorError::DimMismatch {
                    op: "batch_norm",
                    axis,
                    expected: f,
                    actual: len,
                });
            }
        }
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; f];
                for r in 0..n {
                    for j in 0..f {
                        mean[j] += x[r * f + j];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for r in 0..n {
                    for j in 0..f {
                        let d = x[r * f + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var)
            }
            BnMode::Eval => (running_mean.to_vec(), running_var.to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * f];
        let mut out = vec![0.0; n * f];
        for r in 0..n {
            for j in 0..f {
                let i = r * f + j;
                xhat[i] = (x[i] - mean[j]) * inv_std[j];
                out[i] = gv[j] * xhat[i] + bv[j];
            }
        }
        let stats = (mode == BnMode::Train).then(|| BatchStats {
            mean,
            var,
            count: n,
        });
        let (ix, ig, ib) = (self.id, gamma.id, beta.id);
        let y = self.tape.push_op(out, shape, &[self, gamma, beta], move |g, sink| {
            if let Some(gb) = sink.slot(ib) {
                for r in 0..n {
                    for j in 0..f {
                        gb[j] += g[r * f + j];
                    }
                }
            }
            if let Some(gg) = sink.slot(ig) {
                for r in 0..n {
                    for j in 0..f {
                        gg[j] += g[r * f + j] * xhat[r * f + j];
                    }
                }
            }
            if let Some(gx) = sink.slot(ix) {
                match mode {
                    BnMode::Eval => {
                        for r in 0..n {
                            for j in 0..f {
                                gx[r * f + j] += g[r * f + j] * gv[j] * inv_std[j];
                            }
                        }
                    }
                    BnMode::Train => {
                        let nf = n as f64;
                        for j in 0..f {
                            let (mut s1, mut s2) = (0.0, 0.0);
                            for r in 0..n {
                                let dxh = g[r * f + j] * gv[j];
                                s1 += dxh;
                                s2 += dxh * xhat[r * f + j];
                            }
                            for r in 0..n {
                                let i = r * f + j;
                                let dxh = g[i] * gv[j];
                                gx[i] += inv_std[j] / nf * (nf * dxh - s1 - xhat[i] * s2);
                            }
                        }
                    }
                }
            }
        });
        Ok((y, stats))
    }

    /// Generalized-mean pooling over the last axis:
    /// `(mean_s max(x_s, eps)^p)^(1/p)`, differentiable in `x` and in the
    /// scalar exponent `p`.
    pub fn gem_pool(self, p: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.is_empty() {
            return Err(TensorError::RankMismatch {
                op: "gem_pool",
                expected: 1,
                actual: 0,
            });
        }
        if p.numel() != 1 {
            return Err(TensorError::invalid("gem_pool", "exponent must be a scalar"));
        }
        if !(eps > 0.0) {
            return Err(TensorError::invalid("gem_pool", format!("eps must be > 0, got {eps}")));
        }
        let pv = p.item();
        if !(pv >= 1.0) {
            return Err(TensorError::invalid("gem_pool", format!("exponent must be >= 1, got {pv}")));
        }
        let s = *shape.last().expect("rank >= 1");
        let rows = self.numel() / s;
        let x = self.value();
        let mut clamped = vec![0.0; x.len()];
        let mut powered = vec![0.0; x.len()];
        let mut means = vec![0.0; rows];
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let mut acc = 0.0;
            for k in 0..s {
                let i = r * s + k;
                let c = x[i].max(eps);
                clamped[i] = c;
                powered[i] = c.powf(pv);
                acc += powered[i];
            }
            means[r] = acc / s as f64;
            out[r] = means[r].powf(1.0 / pv);
        }
        let out_v = out.clone();
        let out_shape = shape[..shape.len() - 1].to_vec();
        let (ix, ip) = (self.id, p.id);
        Ok(self.tape.push_op(out, out_shape, &[self, p], move |g, sink| {
            if let Some(gx) = sink.slot(ix) {
                for r in 0..rows {
                    // dy/dc = y · c^(p-1) / (S · m)
                    let coef = g[r] * out_v[r] / (s as f64 * means[r]);
                    for k in 0..s {
                        let i = r * s + k;
                        if x[i] > eps {
                            gx[i] += coef * powered[i] / clamped[i];
                        }
                    }
                }
            }
            if let Some(gp) = sink.slot(ip) {
                // dy/dp = y · (−ln m / p² + mean(c^p ln c) / (p · m))
                let mut acc = 0.0;
                for r in 0..rows {
                    let dm: f64 = (0..s)
                        .map(|k| powered[r * s + k] * clamped[r * s + k].ln())
                        .sum::<f64>()
                        / s as f64;
                    let dy = out_v[r] * (-means[r].ln() / (pv * pv) + dm / (pv * means[r]));
                    acc += g[r] * dy;
                }
                gp[0] += acc;
            }
        }))
    }

    /// Mean softmax cross-entropy of `[R, C]` logits against class labels.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::RankMismatch {
                op: "softmax_cross_entropy",
                expected: 2,
                actual: shape.len(),
            });
        }
        let (rows, classes) = (shape[0], shape[1]);
        if labels.len() != rows {
            return Err(TensorError::DimMismatch {
                op: "softmax_cross_entropy",
                axis: 0,
                expected: rows,
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::invalid(
                "softmax_cross_entropy",
                format!("label {bad} >= class count {classes}"),
            ));
        }
        let x = self.value();
        let mut probs = vec![0.0; rows * classes];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &x[r * classes..(r + 1) * classes];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            loss += lse - row[labels[r]];
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - lse).exp();
            }
        }
        loss /= rows as f64;
        let labels = labels.to_vec();
        let ix = self.id;
        Ok(self.tape.push_op(vec![loss], Vec::new(), &[self], move |g, sink| {
            if let Some(gx) = sink.slot(ix) {
                let scale = g[0] / rows as f64;
                for r in 0..rows {
                    for c in 0..classes {
                        let target = if c == labels[r] { 1.0 } else { 0.0 };
                        gx[r * classes + c] += scale * (probs[r * classes + c] - target);
                    }
                }
            }
        }))
    }

    /// Euclidean distances between all row pairs of each batch slice:
    /// `[B, N, D]` → `[B, N, N]`. The gradient at zero distance is taken as 0.
    pub fn pairwise_distance(self) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(TensorError::RankMismatch {
                op: "pairwise_distance",
                expected: 3,
                actual: shape.len(),
            });
        }
        let (b, n, d) = (shape[0], shape[1], shape[2]);
        let x = self.value();
        let mut out = vec![0.0; b * n * n];
        for bb in 0..b {
            for i in 0..n {
                for j in 0..n {
                    let xi = &x[(bb * n + i) * d..(bb * n + i + 1) * d];
                    let xj = &x[(bb * n + j) * d..(bb * n + j + 1) * d];
                    let sq: f64 = xi.iter().zip(xj).map(|(p, q)| (p - q) * (p - q)).sum();
                    out[(bb * n + i) * n + j] = sq.sqrt();
                }
            }
        }
        let dist = out.clone();
        let ix = self.id;
        Ok(self.tape.push_op(out, vec![b, n, n], &[self], move |g, sink| {
            if let Some(gx) = sink.slot(ix) {
                for bb in 0..b {
                    for i in 0..n {
                        for j in 0..n {
                            let k = (bb * n + i) * n + j;
                            if dist[k] <= 0.0 || g[k] == 0.0 {
                                continue;
                            }
                            let coef = g[k] / dist[k];
                            for e in 0..d {
                                let diff = x[(bb * n + i) * d + e] - x[(bb * n + j) * d + e];
                                gx[(bb * n + i) * d + e] += coef * diff;
                                gx[(bb * n + j) * d + e] -= coef * diff;
                            }
                        }
                    }
                }
            }
        }))
    }
}
