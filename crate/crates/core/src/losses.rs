//! Batch-all triplet loss and softmax cross-entropy over part embeddings.

use gaitkit_tensor::Var;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub margin: f64,
    pub triplet_weight: f64,
    pub ce_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            triplet_weight: 1.0,
            ce_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !(self.triplet_weight >= 0.0) || !(self.ce_weight >= 0.0) {
            return Err(Error::Config(format!(
                "margin and loss weights must be non-negative, got margin {} and weights {}/{}",
                self.margin, self.triplet_weight, self.ce_weight
            )));
        }
        Ok(())
    }
}

/// Flat `(anchor·N + positive, anchor·N + negative)` offsets of every
/// valid triplet in an `N × N` distance matrix.
fn triplets(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = labels.len();
    let (mut ap, mut an) = (Vec::new(), Vec::new());
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for (q, &lq) in labels.iter().enumerate() {
                if lq != labels[a] {
                    ap.push(a * n + p);
                    an.push(a * n + q);
                }
            }
        }
    }
    (ap, an)
}

/// Batch-all triplet loss of `[N, P, D]` embeddings. For each part the
/// hinge `max(0, d(a,p) − d(a,n) + margin)` is averaged over its non-zero
/// terms; the part losses are then averaged.
pub fn triplet_loss<'t>(parts: Var<'t>, labels: &[usize], margin: f64) -> Result<Var<'t>> {
    let s = parts.shape();
    if s.len() != 3 || s[0] != labels.len() {
        return Err(Error::Input(format!(
            "triplet loss needs [N, P, D] embeddings for {} labels, got {s:?}",
            labels.len()
        )));
    }
    let (n, p) = (s[0], s[1]);
    let tape = parts.tape();
    let (ap, an) = triplets(labels);
    if ap.is_empty() {
        log::warn!("triplet batch has no valid (anchor, positive, negative) triple; loss is 0");
        return Ok(tape.scalar(0.0));
    }
    let t = ap.len();
    let dist = parts.permute(&[1, 0, 2])?.pairwise_distance()?; // [P, N, N]
    let offsets = |pairs: &[usize]| -> Vec<usize> {
        (0..p).flat_map(|b| pairs.iter().map(move |&o| b * n * n + o)).collect()
    };
    let d_ap = dist.gather_flat(&offsets(&ap))?;
    let d_an = dist.gather_flat(&offsets(&an))?;
    let hinge = d_ap.sub(d_an)?.add_scalar(margin).relu().reshape(&[p, t])?;
    let hv = hinge.value();
    let weights: Vec<f64> = (0..p)
        .map(|b| {
            let nz = hv[b * t..(b + 1) * t].iter().filter(|&&v| v > 0.0).count();
            if nz == 0 {
                0.0
            } else {
                1.0 / (nz as f64 * p as f64)
            }
        })
        .collect();
    let w = tape.constant_from(vec![p, 1], weights)?;
    Ok(hinge.mul(w)?.sum_all())
}

/// Softmax cross-entropy of `[N, P, classes]` logits, averaged over
/// samples and parts.
pub fn ce_loss<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let s = logits.shape();
    if s.len() != 3 || s[0] != labels.len() {
        return Err(Error::Input(format!(
            "cross-entropy needs [N, P, classes] logits for {} labels, got {s:?}",
            labels.len()
        )));
    }
    let (n, p, c) = (s[0], s[1], s[2]);
    let rows: Vec<usize> = (0..n * p).map(|r| labels[r / p]).collect();
    Ok(logits.reshape(&[n * p, c])?.softmax_cross_entropy(&rows)?)
}

/// Loss terms of one batch.
pub struct LossTerms<'t> {
    pub total: Var<'t>,
    pub triplet: Var<'t>,
    pub ce: Var<'t>,
}

pub fn combined<'t>(parts: Var<'t>, logits: Var<'t>, labels: &[usize], cfg: &LossConfig) -> Result<LossTerms<'t>> {
    let triplet = triplet_loss(parts, labels, cfg.margin)?;
    let ce = ce_loss(logits, labels)?;
    let total = triplet.scale(cfg.triplet_weight).add(ce.scale(cfg.ce_weight))?;
    Ok(LossTerms { total, triplet, ce })
}
