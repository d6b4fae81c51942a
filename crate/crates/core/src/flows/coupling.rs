//! Conditional affine coupling layer.

use rand::Rng;

use crate::diffcore::nn::{Bound, Mlp, ParamStore};
use crate::diffcore::{Graph, Var};
use crate::error::Result;

/// Passes one block of coordinates through unchanged and applies a
/// conditional affine map, `exp(s)` scale then `t` shift, to the other.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub scale_net: Mlp,
    pub shift_net: Mlp,
    pub dim: usize,
    pub split: usize,
    /// When set the trailing block passes through and the leading block is
    /// transformed.
    pub swapped: bool,
}

impl Coupling {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        split: usize,
        swapped: bool,
        cond_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (pass, out) = if swapped { (dim - split, split) } else { (split, dim - split) };
        let dims = [pass + cond_dim, hidden, hidden, out];
        Coupling {
            scale_net: Mlp::new(store, &format!("{name}.scale"), &dims, false, true, rng),
            shift_net: Mlp::new(store, &format!("{name}.shift"), &dims, false, true, rng),
            dim,
            split,
            swapped,
        }
    }

    /// `((pass start, len), (transformed start, len))`.
    fn blocks(&self) -> ((usize, usize), (usize, usize)) {
        let lead = (0, self.split);
        let tail = (self.split, self.dim - self.split);
        if self.swapped {
            (tail, lead)
        } else {
            (lead, tail)
        }
    }

    fn conditioner(&self, g: &mut Graph, p: &Bound, pass: Var, cond: Option<Var>) -> Result<(Var, Var)> {
        let inp = match cond {
            Some(c) => g.concat(&[pass, c])?,
            None => pass,
        };
        let s = self.scale_net.forward(g, p, inp)?;
        let t = self.shift_net.forward(g, p, inp)?;
        Ok((s, t))
    }

    fn assemble(&self, g: &mut Graph, pass: Var, moved: Var) -> Result<Var> {
        if self.swapped {
            g.concat(&[moved, pass])
        } else {
            g.concat(&[pass, moved])
        }
    }

    /// `(y, logdet)` with `logdet = Σ s` per row (`R × 1`).
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, cond: Option<Var>) -> Result<(Var, Var)> {
        let ((ps, pl), (ms, ml)) = self.blocks();
        let pass = g.slice_cols(x, ps, pl)?;
        let moved = g.slice_cols(x, ms, ml)?;
        let (s, t) = self.conditioner(g, p, pass, cond)?;
        let es = g.exp(s);
        let y = g.mul(moved, es)?;
        let y = g.add(y, t)?;
        let logdet = g.sum_cols(s);
        Ok((self.assemble(g, pass, y)?, logdet))
    }

    /// Exact inverse; `logdet = −Σ s` per row.
    pub fn inverse(&self, g: &mut Graph, p: &Bound, y: Var, cond: Option<Var>) -> Result<(Var, Var)> {
        let ((ps, pl), (ms, ml)) = self.blocks();
        let pass = g.slice_cols(y, ps, pl)?;
        let moved = g.slice_cols(y, ms, ml)?;
        let (s, t) = self.conditioner(g, p, pass, cond)?;
        let diff = g.sub(moved, t)?;
        let neg = g.neg(s);
        let ens = g.exp(neg);
        let x = g.mul(diff, ens)?;
        let logdet = g.sum_cols(neg);
        Ok((self.assemble(g, pass, x)?, logdet))
    }
}
