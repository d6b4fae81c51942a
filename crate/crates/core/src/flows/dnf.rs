//! Discrete flow: a stack of coupling layers, each followed by batch norm.

use rand::Rng;

use crate::diffcore::nn::{Bound, ParamStore};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::Result;

use super::coupling::Coupling;
use super::mbn::MovingBatchNorm;
use super::Mode;

#[derive(Clone, Debug)]
pub struct Dnf {
    pub input_norm: MovingBatchNorm,
    pub blocks: Vec<(Coupling, MovingBatchNorm)>,
    pub dim: usize,
}

impl Dnf {
    /// `layers` couplings splitting at `dim / 2` with alternating roles.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        cond_dim: usize,
        layers: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let input_norm = MovingBatchNorm::new(store, &format!("{name}.norm0"), dim);
        let blocks = (0..layers)
            .map(|k| {
                let c = Coupling::new(
                    store,
                    &format!("{name}.coupling{k}"),
                    dim,
                    dim / 2,
                    k % 2 == 1,
                    cond_dim,
                    hidden,
                    rng,
                );
                let n = MovingBatchNorm::new(store, &format!("{name}.norm{}", k + 1), dim);
                (c, n)
            })
            .collect();
        Dnf {
            input_norm,
            blocks,
            dim,
        }
    }

    /// Data to latent. Returns `(z, logdet)` with `logdet: R × 1`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        cond: Option<Var>,
        mode: &mut Mode,
    ) -> Result<(Var, Var)> {
        let rows = g.value(x).rows();
        let (mut h, ld) = self.input_norm.forward(g, p, x, mode)?;
        let zero = g.constant(Tensor::zeros(&[rows, 1]));
        let mut logdet = g.add(zero, ld)?;
        for (coupling, norm) in &self.blocks {
            let (y, lc) = coupling.forward(g, p, h, cond)?;
            let (y, ln) = norm.forward(g, p, y, mode)?;
            logdet = g.add(logdet, lc)?;
            logdet = g.add(logdet, ln)?;
            h = y;
        }
        Ok((h, logdet))
    }

    /// Latent to data with frozen statistics. `logdet` is that of the
    /// inverse map.
    pub fn inverse(&self, g: &mut Graph, p: &Bound, z: Var, cond: Option<Var>) -> Result<(Var, Var)> {
        let rows = g.value(z).rows();
        let mut logdet = g.constant(Tensor::zeros(&[rows, 1]));
        let mut h = z;
        for (coupling, norm) in self.blocks.iter().rev() {
            let (y, ln) = norm.inverse(g, p, h)?;
            let (y, lc) = coupling.inverse(g, p, y, cond)?;
            logdet = g.offset(logdet, ln);
            logdet = g.add(logdet, lc)?;
            h = y;
        }
        let (x, ln) = self.input_norm.inverse(g, p, h)?;
        logdet = g.offset(logdet, ln);
        Ok((x, logdet))
    }
}
