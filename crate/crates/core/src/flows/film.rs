//! Feature-wise linear modulation layer.
//!
//! `FiLM(x, ζ, t, s) = (W_x x + b_x) ⊙ σ(W_t t + W_s s + W_c ζ + b_t)
//!                     + (W_bt t + W_bs s + W_bc ζ + b_bt)`
//!
//! Weights are stored input-major. The time-independent parts of the gate
//! and bias paths are computed once per solve with [`FilmLayer::condition`].

use rand::Rng;

use crate::diffcore::nn::{uniform_init, Bound, ParamId, ParamStore};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct FilmLayer {
    pub w_x: ParamId,
    pub b_x: ParamId,
    pub w_t: ParamId,
    pub w_s: Option<ParamId>,
    pub w_c: ParamId,
    pub b_t: ParamId,
    pub w_bt: ParamId,
    pub w_bs: Option<ParamId>,
    pub w_bc: ParamId,
    pub b_bt: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Gate and bias pre-activations without the flow-time terms, `R × out`.
#[derive(Clone, Copy, Debug)]
pub struct FilmCondition {
    pub gate: Var,
    pub bias: Var,
}

impl FilmLayer {
    /// `zero_output` zeroes the main and bias paths so the layer starts at 0.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        zeta_dim: usize,
        with_s: bool,
        zero_output: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let cond_fan = zeta_dim + 1 + usize::from(with_s);
        let mut w = |suffix: &str, fan: usize, rows: usize, zero: bool| {
            let t = if zero {
                Tensor::zeros(&[rows, out_dim])
            } else {
                uniform_init(rng, fan, &[rows, out_dim])
            };
            store.add(format!("{name}.{suffix}"), t, true)
        };
        let w_x = w("w_x", in_dim, in_dim, zero_output);
        let w_t = w("w_t", cond_fan, 1, false);
        let w_s = with_s.then(|| w("w_s", cond_fan, 1, false));
        let w_c = w("w_c", cond_fan, zeta_dim, false);
        let w_bt = w("w_bt", cond_fan, 1, zero_output);
        let w_bs = with_s.then(|| w("w_bs", cond_fan, 1, zero_output));
        let w_bc = w("w_bc", cond_fan, zeta_dim, zero_output);
        let mut b = |suffix: &str| store.add(format!("{name}.{suffix}"), Tensor::zeros(&[1, out_dim]), true);
        FilmLayer {
            w_x,
            b_x: b("b_x"),
            w_t,
            w_s,
            w_c,
            b_t: b("b_t"),
            w_bt,
            w_bs,
            w_bc,
            b_bt: b("b_bt"),
            in_dim,
            out_dim,
        }
    }

    /// `ζ·W_c + s·W_s + b_t` and `ζ·W_bc + s·W_bs + b_bt`.
    pub fn condition(&self, g: &mut Graph, p: &Bound, zeta: Var, s: Option<Var>) -> Result<FilmCondition> {
        let mut path = |wc: ParamId, ws: Option<ParamId>, b: ParamId| -> Result<Var> {
            let mut acc = g.matmul(zeta, p.var(wc))?;
            if let (Some(ws), Some(s)) = (ws, s) {
                let st = g.matmul(s, p.var(ws))?;
                acc = g.add(acc, st)?;
            }
            g.add(acc, p.var(b))
        };
        Ok(FilmCondition {
            gate: path(self.w_c, self.w_s, self.b_t)?,
            bias: path(self.w_bc, self.w_bs, self.b_bt)?,
        })
    }

    /// Layer output plus the tangent map applied to each of `tangents`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        cond: &FilmCondition,
        t: f64,
        x: Var,
        tangents: &[Var],
    ) -> Result<(Var, Vec<Var>)> {
        let wt = g.scale(p.var(self.w_t), t);
        let gate = g.add(cond.gate, wt)?;
        let gate = g.sigmoid(gate);
        let wbt = g.scale(p.var(self.w_bt), t);
        let bias = g.add(cond.bias, wbt)?;

        let main = g.matmul(x, p.var(self.w_x))?;
        let main = g.add(main, p.var(self.b_x))?;
        let out = g.mul(main, gate)?;
        let out = g.add(out, bias)?;

        let mut dout = Vec::with_capacity(tangents.len());
        for &dx in tangents {
            let d = g.matmul(dx, p.var(self.w_x))?;
            dout.push(g.mul(d, gate)?);
        }
        Ok((out, dout))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gate_halves_the_main_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let layer = FilmLayer::new(&mut store, "f", 2, 3, 2, true, false, &mut rng);
        for id in [layer.w_t, layer.w_s.unwrap(), layer.w_c, layer.w_bt, layer.w_bs.unwrap(), layer.w_bc] {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::row(vec![0.4, -1.0]));
        let zeta = g.constant(Tensor::row(vec![2.0, 1.0]));
        let s = g.constant(Tensor::row(vec![0.5]));
        let cond = layer.condition(&mut g, &p, zeta, Some(s)).unwrap();
        let (out, _) = layer.forward(&mut g, &p, &cond, 0.7, x, &[]).unwrap();
        let main = g.matmul(x, p.var(layer.w_x)).unwrap();
        let expect = g.scale(main, 0.5);
        assert!(g.value(out).max_abs_diff(g.value(expect)) < 1e-15);
    }

    #[test]
    fn zero_output_layer_starts_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let layer = FilmLayer::new(&mut store, "f", 2, 2, 3, false, true, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::row(vec![3.0, -2.0]));
        let zeta = g.constant(Tensor::row(vec![1.0, 1.0, 1.0]));
        let cond = layer.condition(&mut g, &p, zeta, None).unwrap();
        let (out, _) = layer.forward(&mut g, &p, &cond, 0.2, x, &[]).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0]);
    }
}
