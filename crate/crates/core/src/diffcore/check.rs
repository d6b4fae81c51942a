//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-input comparison between reverse-mode and finite-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` per input.
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Compare `backward` against central differences of `f` with step `eps`.
/// `f` builds a scalar from leaves bound to `inputs`.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut eval = |vals: &[Tensor], grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), grad)).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).numel() != 1 {
            return Err(Error::contract("gradient check needs a scalar function"));
        }
        let y = g.value(out).item();
        let grads = if grad {
            let gr = g.backward(out)?;
            vars.iter().map(|&v| gr.get_or_zero(v)).collect()
        } else {
            Vec::new()
        };
        Ok((y, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut col = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + eps;
            let (plus, _) = eval(&work, false)?;
            work[i].data_mut()[j] = x - eps;
            let (minus, _) = eval(&work, false)?;
            work[i].data_mut()[j] = x;
            col.push((plus - minus) / (2.0 * eps));
        }
        numeric.push(col);
    }
    let rel_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_error(a, n))
        .collect();
    Ok(GradCheck {
        analytic,
        numeric,
        rel_errors,
    })
}
