//! Moving-average batch normalization.

use crate::diffcore::nn::{Bound, ParamId, ParamStore};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

use super::Mode;

pub const MOMENTUM: f64 = 0.1;
pub const EPSILON: f64 = 1e-5;

/// `(x − μ)/σ·γ + β` with running mean `μ`, running std `σ` and trainable
/// `γ`, `β`.
#[derive(Clone, Debug)]
pub struct MovingBatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_std: ParamId,
    pub dim: usize,
}

/// Per-dimension affine coefficients of one snapshot: `y = x·scale + shift`.
struct Affine {
    scale: Vec<f64>,
    shift: Vec<f64>,
    mean: Vec<f64>,
    sigma: Vec<f64>,
}

impl MovingBatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        MovingBatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[1, dim], 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[1, dim]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[1, dim]), false),
            running_std: store.add(format!("{name}.running_std"), Tensor::full(&[1, dim], 1.0), false),
            dim,
        }
    }

    /// Running statistics blended with the batch ones, on the tape so the
    /// batch part carries gradients. Returns `(mean, std)` as `1 × d` vars.
    fn blended_stats(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let m = g.value(x).rows() as f64;
        let sum = g.sum_rows(x);
        let mean = g.scale(sum, 1.0 / m);
        let centered = g.sub(x, mean)?;
        let sq = g.square(centered);
        let sq = g.sum_rows(sq);
        let var = g.scale(sq, 1.0 / m);
        let std = g.sqrt(var)?;
        let mu = g.lincomb(&[(1.0 - MOMENTUM, p.var(self.running_mean)), (MOMENTUM, mean)])?;
        let sigma = g.lincomb(&[(1.0 - MOMENTUM, p.var(self.running_std)), (MOMENTUM, std)])?;
        Ok((mu, sigma))
    }

    fn sigma(std: &[f64]) -> Result<Vec<f64>> {
        let sigma = std.to_vec();
        if sigma.iter().any(|s| !(*s >= EPSILON)) {
            return Err(Error::Degenerate(format!("batch norm scale {sigma:?}")));
        }
        Ok(sigma)
    }

    fn check_gamma(gamma: &[f64]) -> Result<()> {
        if gamma.iter().any(|g| !(g.abs() >= EPSILON)) {
            return Err(Error::Degenerate(format!("batch norm gamma {gamma:?}")));
        }
        Ok(())
    }

    fn stats(&self, g: &mut Graph, p: &Bound, x: Var, mode: &mut Mode) -> Result<(Var, Var)> {
        match mode {
            Mode::Eval => Ok((p.var(self.running_mean), p.var(self.running_std))),
            Mode::Train(updates) => {
                let (mean, std) = self.blended_stats(g, p, x)?;
                updates.push(self.running_mean, g.value(mean).clone());
                updates.push(self.running_std, g.value(std).clone());
                Ok((mean, std))
            }
        }
    }

    /// `(y, logdet)` with `logdet` a scalar shared by every row.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, mode: &mut Mode) -> Result<(Var, Var)> {
        let (mu, sigma) = self.stats(g, p, x, mode)?;
        Self::sigma(g.value(sigma).data())?;
        Self::check_gamma(g.value(p.var(self.gamma)).data())?;
        let inv_sigma = g.recip(sigma)?;
        let scale = g.mul(p.var(self.gamma), inv_sigma)?;
        let centered = g.sub(x, mu)?;
        let y = g.mul(centered, scale)?;
        let y = g.add(y, p.var(self.beta))?;
        let logdet = self.log_det(g, p, sigma)?;
        Ok((y, logdet))
    }

    /// `Σ log|γ| − log σ` as a graph scalar.
    fn log_det(&self, g: &mut Graph, p: &Bound, sigma: Var) -> Result<Var> {
        let gsq = g.square(p.var(self.gamma));
        let log_gsq = g.log(gsq)?;
        let s = g.sum(log_gsq);
        let half = g.scale(s, 0.5);
        let log_sigma = g.log(sigma)?;
        let log_sigma = g.sum(log_sigma);
        g.lincomb(&[(1.0, half), (-1.0, log_sigma)])
    }

    /// Inverse with the stored running statistics, as constants on the
    /// tape (sampling never differentiates through it). Returns `(x, logdet)`
    /// with the log-determinant of the inverse map.
    pub fn inverse(&self, g: &mut Graph, p: &Bound, y: Var) -> Result<(Var, f64)> {
        let store_view = [
            g.value(p.var(self.gamma)).clone(),
            g.value(p.var(self.beta)).clone(),
            g.value(p.var(self.running_mean)).clone(),
            g.value(p.var(self.running_std)).clone(),
        ];
        let a = Self::affine_of(&store_view)?;
        let shift = g.constant(Tensor::row(a.shift.clone()));
        let shifted = g.sub(y, shift)?;
        let ratio = g.constant(Tensor::row(a.scale.iter().map(|s| 1.0 / s).collect()));
        let x = g.mul(shifted, ratio)?;
        let mu = g.constant(Tensor::row(a.mean.clone()));
        let x = g.add(x, mu)?;
        Ok((x, -Self::affine_log_det(&store_view[0], &a)))
    }

    /// Plain-value forward with running statistics.
    pub fn forward_values(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, f64)> {
        let (a, ld) = self.snapshot(store)?;
        let d = self.dim;
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - a.mean[j]) * a.scale[j] + a.shift[j];
            }
        }
        Ok((out, ld))
    }

    pub fn inverse_values(&self, store: &ParamStore, y: &Tensor) -> Result<(Tensor, f64)> {
        let (a, ld) = self.snapshot(store)?;
        let d = self.dim;
        let mut out = y.clone();
        for row in out.data_mut().chunks_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - a.shift[j]) / a.scale[j] + a.mean[j];
            }
        }
        Ok((out, -ld))
    }

    fn snapshot(&self, store: &ParamStore) -> Result<(Affine, f64)> {
        let view = [
            store.get(self.gamma).clone(),
            store.get(self.beta).clone(),
            store.get(self.running_mean).clone(),
            store.get(self.running_std).clone(),
        ];
        let a = Self::affine_of(&view)?;
        let ld = Self::affine_log_det(&view[0], &a);
        Ok((a, ld))
    }

    /// From `[γ, β, running mean, running std]`.
    fn affine_of(view: &[Tensor; 4]) -> Result<Affine> {
        let gamma = view[0].data();
        Self::check_gamma(gamma)?;
        let sigma = Self::sigma(view[3].data())?;
        Ok(Affine {
            scale: gamma.iter().zip(&sigma).map(|(g, s)| g / s).collect(),
            shift: view[1].data().to_vec(),
            mean: view[2].data().to_vec(),
            sigma,
        })
    }

    fn affine_log_det(gamma: &Tensor, a: &Affine) -> f64 {
        gamma.data().iter().map(|g| g.abs().ln()).sum::<f64>()
            - a.sigma.iter().map(|s| s.ln()).sum::<f64>()
    }
}
