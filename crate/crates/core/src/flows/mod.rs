//! Conditional normalizing flows over a fixed-size vector.
//!
//! Every flow maps data `x` to a latent `z` with a standard normal base and
//! tracks `log |det ∂z/∂x|`, so `log p(x) = log N(z) + logdet`.

pub mod cnf;
pub mod coupling;
pub mod dnf;
pub mod film;
pub mod mbn;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diffcore::nn::{Bound, ParamId, ParamStore};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::odeint::SolverConfig;

pub use cnf::{Cnf, CnfField, Probes};
pub use coupling::Coupling;
pub use dnf::Dnf;
pub use film::{FilmCondition, FilmLayer};
pub use mbn::MovingBatchNorm;

/// Running-statistic writes collected during a training forward pass.
#[derive(Clone, Debug, Default)]
pub struct StatUpdates {
    pending: Vec<(ParamId, Tensor)>,
}

impl StatUpdates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, id: ParamId, value: Tensor) {
        self.pending.push((id, value));
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Writes every update in order, so later writes to the same buffer win.
    pub fn apply(self, store: &mut ParamStore) {
        for (id, value) in self.pending {
            *store.get_mut(id) = value;
        }
    }
}

/// Batch-norm behaviour for one forward pass.
pub enum Mode<'a> {
    /// Use the stored running statistics.
    Eval,
    /// Blend the batch statistics in and record the new running values.
    Train(&'a mut StatUpdates),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TraceMode {
    Exact,
    Hutchinson { probes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Dnf,
    Cnf,
}

/// `log N(z; 0, I)` per row, `R × 1`.
pub fn base_log_prob(g: &mut Graph, z: Var) -> Var {
    let d = g.value(z).cols() as f64;
    let sq = g.square(z);
    let s = g.sum_cols(sq);
    let half = g.scale(s, -0.5);
    g.offset(half, -0.5 * d * (2.0 * PI).ln())
}

pub fn base_log_prob_values(z: &Tensor) -> Vec<f64> {
    let d = z.cols() as f64;
    (0..z.rows())
        .map(|r| -0.5 * z.row_slice(r).iter().map(|v| v * v).sum::<f64>() - 0.5 * d * (2.0 * PI).ln())
        .collect()
}

/// Conditioning inputs. The discrete flow sees `concat(ζ, s)`; the
/// continuous flow routes them through separate FiLM weights.
#[derive(Clone, Copy, Debug)]
pub struct Condition {
    pub zeta: Var,
    pub step: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct ConditionValues<'a> {
    pub zeta: &'a Tensor,
    pub step: Option<&'a Tensor>,
}

/// Settings for the continuous flow's solves and trace estimate.
#[derive(Clone, Copy, Debug)]
pub struct FlowSolve {
    pub trace: TraceMode,
    pub solver: SolverConfig,
}

#[derive(Clone, Debug)]
pub enum Flow {
    Discrete(Dnf),
    Continuous(Cnf),
}

impl Flow {
    pub fn dim(&self) -> usize {
        match self {
            Flow::Discrete(f) => f.dim,
            Flow::Continuous(f) => f.dim,
        }
    }

    pub fn kind(&self) -> FlowKind {
        match self {
            Flow::Discrete(_) => FlowKind::Dnf,
            Flow::Continuous(_) => FlowKind::Cnf,
        }
    }

    fn joined(g: &mut Graph, cond: Condition) -> Result<Var> {
        match cond.step {
            Some(s) => g.concat(&[cond.zeta, s]),
            None => Ok(cond.zeta),
        }
    }

    /// `log p(x | cond)` per row on the tape, `R × 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn log_prob(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        cond: Condition,
        mode: &mut Mode,
        solve: &FlowSolve,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Var> {
        let (z, logdet) = match self {
            Flow::Discrete(f) => {
                let c = Self::joined(g, cond)?;
                f.forward(g, p, x, Some(c), mode)?
            }
            Flow::Continuous(f) => {
                f.forward(g, p, x, cond.zeta, cond.step, mode, solve.trace, rng, &solve.solver)?
            }
        };
        let base = base_log_prob(g, z);
        g.add(base, logdet)
    }

    /// Data to latent with running statistics, no tape kept. Continuous
    /// flows use the exact trace here.
    pub fn forward_values(
        &self,
        store: &ParamStore,
        x: &Tensor,
        cond: ConditionValues,
        solver: &SolverConfig,
    ) -> Result<(Tensor, Vec<f64>)> {
        match self {
            Flow::Discrete(f) => {
                let mut g = Graph::new();
                let p = store.bind_frozen(&mut g);
                let xv = g.constant(x.clone());
                let c = Self::constant_condition(&mut g, cond);
                let c = Self::joined(&mut g, c)?;
                let (z, ld) = f.forward(&mut g, &p, xv, Some(c), &mut Mode::Eval)?;
                Ok((g.value(z).clone(), g.value(ld).data().to_vec()))
            }
            Flow::Continuous(f) => f.forward_values(store, x, cond.zeta, cond.step, solver),
        }
    }

    pub fn log_prob_values(
        &self,
        store: &ParamStore,
        x: &Tensor,
        cond: ConditionValues,
        solver: &SolverConfig,
    ) -> Result<Vec<f64>> {
        let (z, ld) = self.forward_values(store, x, cond, solver)?;
        let base = base_log_prob_values(&z);
        let out: Vec<f64> = base.iter().zip(&ld).map(|(b, l)| b + l).collect();
        if out.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("log-density evaluated to NaN".into()));
        }
        Ok(out)
    }

    /// Push latent rows back to data space.
    pub fn inverse_values(
        &self,
        store: &ParamStore,
        z: &Tensor,
        cond: ConditionValues,
        solver: &SolverConfig,
    ) -> Result<Tensor> {
        match self {
            Flow::Discrete(f) => {
                let mut g = Graph::new();
                let p = store.bind_frozen(&mut g);
                let zv = g.constant(z.clone());
                let c = Self::constant_condition(&mut g, cond);
                let c = Self::joined(&mut g, c)?;
                let (x, _) = f.inverse(&mut g, &p, zv, Some(c))?;
                Ok(g.value(x).clone())
            }
            Flow::Continuous(f) => f.inverse_values(store, z, cond.zeta, cond.step, solver),
        }
    }

    fn constant_condition(g: &mut Graph, cond: ConditionValues) -> Condition {
        Condition {
            zeta: g.constant(cond.zeta.clone()),
            step: cond.step.map(|s| g.constant(s.clone())),
        }
    }
}
