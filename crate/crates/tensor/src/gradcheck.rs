//! Central finite-difference gradient checking.
//!
//! The function under test may return any shape; it is reduced to a scalar
//! through a fixed pseudo-random projection so every output element
//! contributes with a distinct weight.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Norm-wise relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
    /// for each input that requires a gradient, in input order.
    pub rel_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn projection(n: usize) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(0x6a17_c0de);
    (0..n)
        .map(|_| {
            let mag: f64 = rng.gen_range(0.5..1.5);
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn projected_value<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t)).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    let w = projection(v.len());
    Ok(v.iter().zip(&w).map(|(a, b)| a * b).sum())
}

/// Compares tape gradients of `f` against central differences with step
/// `h` for every input tensor that has `requires_grad` set.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&tape, &vars)?;
    let w = projection(out.numel());
    let weights = tape.constant_from(out.shape(), w)?;
    let loss = out.mul(weights)?.sum_all();
    let grads = tape.backward(loss)?;

    let mut rel_errors = Vec::new();
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let analytic: Vec<f64> = grads
            .get(vars[idx])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = vec![0.0; input.numel()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let orig = input.data()[e];
            probe[idx].data_mut()[e] = orig + h;
            let up = projected_value(&f, &probe)?;
            probe[idx].data_mut()[e] = orig - h;
            let down = projected_value(&f, &probe)?;
            probe[idx].data_mut()[e] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        rel_errors.push(if scale < 1e-10 { norm(&diff) } else { norm(&diff) / scale });
    }
    Ok(GradCheckReport { rel_errors })
}
