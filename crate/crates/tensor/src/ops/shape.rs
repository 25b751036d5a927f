use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::{numel, strides};

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(TensorError::InvalidAxis { op, axis, rank });
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ElementCount {
                shape: shape.to_vec(),
                len: self.numel(),
            });
        }
        let ix = self.id;
        Ok(self
            .tape
            .push_op(self.value().to_vec(), shape.to_vec(), &[self], move |g, sink| sink.add(ix, g)))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(TensorError::RankMismatch {
                op: "permute",
                expected: rank,
                actual: perm.len(),
            });
        }
        for &p in perm {
            check_axis("permute", p, rank)?;
            if std::mem::replace(&mut seen[p], true) {
                return Err(TensorError::invalid("permute", format!("axis {p} repeated")));
            }
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let in_st = strides(&shape);
        let src_st: Vec<usize> = perm.iter().map(|&p| in_st[p]).collect();
        // source flat index for every output position
        let n = numel(&shape);
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..n {
            src.push(off);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                off += src_st[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                off -= src_st[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        let x = self.value();
        let out: Vec<f64> = src.iter().map(|&i| x[i]).collect();
        let ix = self.id;
        Ok(self.tape.push_op(out, out_shape, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(ix) {
                for (o, &i) in src.iter().enumerate() {
                    gx[i] += g[o];
                }
            }
        }))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        check_axis("narrow", axis, shape.len())?;
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::invalid(
                "narrow",
                format!("range {start}..{} outside axis {axis} of extent {}", start + len, shape[axis]),
            ));
        }
        let indices: Vec<usize> = (start..start + len).collect();
        self.index_select(axis, &indices)
    }

    /// Gathers `indices` along `axis` (repeats allowed).
    pub fn index_select(self, axis: usize, indices: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        check_axis("index_select", axis, shape.len())?;
        if indices.is_empty() {
            return Err(TensorError::invalid("index_select", "empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[axis]) {
            return Err(TensorError::invalid(
                "index_select",
                format!("index {bad} out of range for axis {axis} of extent {}", shape[axis]),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let extent = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = indices.len();
        let x = self.value();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * extent + i) * inner;
                out.extend_from_slice(&x[base..base + inner]);
            }
        }
        let indices = indices.to_vec();
        let ix = self.id;
        Ok(self.tape.push_op(out, out_shape, &[self], move |g, sink| {
            if let Some(gx) = sink.slot(ix) {
                let mut src = 0;
                for o in 0..outer {
                    for &i in &indices {
                        let base = (o * extent + i) * inner;
                        for (d, s) in gx[base..base + inner].iter_mut().zip(&g[src..src + inner]) {
                            *d += s;
                        }
                        src += inner;
                    }
                }
            }
        }))
    }

    /// Flat gather over the row-major element order; result is rank 1.
    pub fn gather_flat(self, indices: &[usize]) -> Result<Var<'t>> {
        let n = self.numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::invalid("gather_flat", format!("index {bad} >= {n}")));
        }
        if indices.is_empty() {
            return Err(TensorError::invalid("gather_flat", "empty index list"));
        }
        let x = self.value();
        let out: Vec<f64> = indices.iter().map(|&i| x[i]).collect();
        let indices = indices.to_vec();
        let ix = self.id;
        Ok(self.tape.push_op(out, vec![indices.len()], &[self], move |g, sink| {
            if let Some(gx) = sink.slot(ix) {
                for (o, &i) in indices.iter().enumerate() {
                    gx[i] += g[o];
                }
            }
        }))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
    let base = first.shape();
    check_axis("concat", axis, base.len())?;
    let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape()).collect();
    for s in &shapes[1..] {
        if s.len() != base.len() {
            return Err(TensorError::RankMismatch {
                op: "concat",
                expected: base.len(),
                actual: s.len(),
            });
        }
        for (ax, (&a, &b)) in base.iter().zip(s).enumerate() {
            if ax != axis && a != b {
                return Err(TensorError::DimMismatch {
                    op: "concat",
                    axis: ax,
                    expected: a,
                    actual: b,
                });
            }
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let extents: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &e) in values.iter().zip(&extents) {
            out.extend_from_slice(&v[o * e * inner..(o + 1) * e * inner]);
        }
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(first.tape.push_op(out, out_shape, parts, move |g, sink| {
        let mut offset = 0;
        for o in 0..outer {
            for (&id, &e) in ids.iter().zip(&extents) {
                let len = e * inner;
                if let Some(gp) = sink.slot(id) {
                    for (d, s) in gp[o * len..(o + 1) * len].iter_mut().zip(&g[offset..offset + len]) {
                        *d += s;
                    }
                }
                offset += len;
            }
        }
    }))
}
