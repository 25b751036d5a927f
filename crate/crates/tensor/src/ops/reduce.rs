use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::{numel, strides};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceMode {
    Max,
    Min,
    Mean,
    Sum,
}

/// Output shape and, for every input element, the flat output index it
/// folds into.
fn reduction_map(shape: &[usize], axes: &[usize], keepdim: bool) -> (Vec<usize>, Vec<usize>) {
    let kept: Vec<usize> = shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect();
    let kept_strides = strides(&kept);
    let in_to_out_strides: Vec<usize> = (0..shape.len())
        .map(|i| if axes.contains(&i) { 0 } else { kept_strides[i] })
        .collect();
    let out_shape: Vec<usize> = if keepdim {
        kept
    } else {
        shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect()
    };
    (out_shape, in_to_out_strides)
}

/// Output index of every input element, walking the input in row-major
/// order with an odometer.
fn fold_targets(shape: &[usize], map_strides: &[usize]) -> Vec<usize> {
    let n = numel(shape);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut o = 0usize;
    for _ in 0..n {
        out.push(o);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            o += map_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            o -= map_strides[d] * shape[d];
            idx[d] = 0;
        }
    }
    out
}

impl<'t> Var<'t> {
    /// Reduces over `axes`. Max/min route the gradient to the first
    /// attaining element in row-major order.
    pub fn reduce(self, axes: &[usize], mode: ReduceMode, keepdim: bool) -> Result<Var<'t>> {
        let shape = self.shape();
        let rank = shape.len();
        let mut axes: Vec<usize> = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        for &ax in &axes {
            if ax >= rank {
                return Err(TensorError::InvalidAxis {
                    op: "reduce",
                    axis: ax,
                    rank,
                });
            }
            if shape[ax] == 0 {
                return Err(TensorError::EmptyAxis { op: "reduce", axis: ax });
            }
        }
        if axes.is_empty() {
            let ix = self.id;
            return Ok(self.tape.push_op(self.value().to_vec(), shape, &[self], move |g, sink| {
                sink.add(ix, g)
            }));
        }

        let (out_shape, map_strides) = reduction_map(&shape, &axes, keepdim);
        let n_out = numel(&out_shape);
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let x = self.value();
        let targets = fold_targets(&shape, &map_strides);

        let ix = self.id;
        match mode {
            ReduceMode::Sum | ReduceMode::Mean => {
                let mut out = vec![0.0; n_out];
                for (v, &o) in x.iter().zip(&targets) {
                    out[o] += v;
                }
                let factor = if mode == ReduceMode::Mean {
                    1.0 / count as f64
                } else {
                    1.0
                };
                if mode == ReduceMode::Mean {
                    out.iter_mut().for_each(|v| *v *= factor);
                }
                Ok(self.tape.push_op(out, out_shape, &[self], move |g, sink| {
                    if let Some(gx) = sink.slot(ix) {
                        for (d, &o) in gx.iter_mut().zip(&targets) {
                            *d += g[o] * factor;
                        }
                    }
                }))
            }
            ReduceMode::Max | ReduceMode::Min => {
                let better = |cand: f64, cur: f64| match mode {
                    ReduceMode::Max => cand > cur,
                    _ => cand < cur,
                };
                let mut arg: Vec<Option<usize>> = vec![None; n_out];
                for (i, (&v, &o)) in x.iter().zip(&targets).enumerate() {
                    match arg[o] {
                        Some(j) if !better(v, x[j]) => {}
                        _ => arg[o] = Some(i),
                    }
                }
                let arg: Vec<usize> = arg.into_iter().map(|a| a.expect("non-empty axis")).collect();
                let out: Vec<f64> = arg.iter().map(|&i| x[i]).collect();
                Ok(self.tape.push_op(out, out_shape, &[self], move |g, sink| {
                    if let Some(gx) = sink.slot(ix) {
                        for (o, &i) in arg.iter().enumerate() {
                            gx[i] += g[o];
                        }
                    }
                }))
            }
        }
    }

    pub fn sum(self, axes: &[usize], keepdim: bool) -> Result<Var<'t>> {
        self.reduce(axes, ReduceMode::Sum, keepdim)
    }

    pub fn mean(self, axes: &[usize], keepdim: bool) -> Result<Var<'t>> {
        self.reduce(axes, ReduceMode::Mean, keepdim)
    }

    pub fn max(self, axes: &[usize], keepdim: bool) -> Result<Var<'t>> {
        self.reduce(axes, ReduceMode::Max, keepdim)
    }

    pub fn min(self, axes: &[usize], keepdim: bool) -> Result<Var<'t>> {
        self.reduce(axes, ReduceMode::Min, keepdim)
    }

    /// Sum of every element as a rank-0 scalar.
    pub fn sum_all(self) -> Var<'t> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        if axes.is_empty() {
            return self;
        }
        self.sum(&axes, false).expect("all axes are valid")
    }

    pub fn mean_all(self) -> Var<'t> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        if axes.is_empty() {
            return self;
        }
        self.mean(&axes, false).expect("all axes are valid")
    }
}
