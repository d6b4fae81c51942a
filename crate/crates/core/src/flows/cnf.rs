//! Continuous flow: batch norm, a FiLM vector field integrated over flow
//! time `[0, 1]` with log-density tracking, batch norm.

use rand::Rng;

use crate::diffcore::nn::{Bound, ParamStore};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::odeint::{integrate, integrate_graph, SolverConfig};

use super::film::{FilmCondition, FilmLayer};
use super::mbn::MovingBatchNorm;
use super::{Mode, TraceMode};

/// Stack of FiLM layers with tanh between them.
#[derive(Clone, Debug)]
pub struct CnfField {
    pub layers: Vec<FilmLayer>,
    pub dim: usize,
}

impl CnfField {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        zeta_dim: usize,
        with_s: bool,
        hidden: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let depth = depth.max(1);
        let layers = (0..depth)
            .map(|i| {
                let in_dim = if i == 0 { dim } else { hidden };
                let out_dim = if i + 1 == depth { dim } else { hidden };
                FilmLayer::new(
                    store,
                    &format!("{name}.film{i}"),
                    in_dim,
                    out_dim,
                    zeta_dim,
                    with_s,
                    i + 1 == depth,
                    rng,
                )
            })
            .collect();
        CnfField { layers, dim }
    }

    pub fn condition(
        &self,
        g: &mut Graph,
        p: &Bound,
        zeta: Var,
        s: Option<Var>,
    ) -> Result<Vec<FilmCondition>> {
        self.layers.iter().map(|l| l.condition(g, p, zeta, s)).collect()
    }

    /// `f(x)` and the Jacobian-vector products `J·v` for every tangent `v`.
    pub fn eval(
        &self,
        g: &mut Graph,
        p: &Bound,
        conds: &[FilmCondition],
        t: f64,
        x: Var,
        tangents: &[Var],
    ) -> Result<(Var, Vec<Var>)> {
        let mut h = x;
        let mut dh = tangents.to_vec();
        let n = self.layers.len();
        for (i, (layer, cond)) in self.layers.iter().zip(conds).enumerate() {
            let (out, dout) = layer.forward(g, p, cond, t, h, &dh)?;
            if i + 1 < n {
                let y = g.tanh(out);
                let ysq = g.square(y);
                let ysq = g.neg(ysq);
                let slope = g.offset(ysq, 1.0);
                dh = dout
                    .into_iter()
                    .map(|d| g.mul(d, slope))
                    .collect::<Result<_>>()?;
                h = y;
            } else {
                h = out;
                dh = dout;
            }
        }
        Ok((h, dh))
    }

    /// `f(x)` and `tr(∂f/∂x)` (`R × 1`), exactly or estimated from `probes`.
    pub fn eval_with_trace(
        &self,
        g: &mut Graph,
        p: &Bound,
        conds: &[FilmCondition],
        t: f64,
        x: Var,
        probes: &Probes,
    ) -> Result<(Var, Var)> {
        let (f, jv) = self.eval(g, p, conds, t, x, &probes.vectors)?;
        let trace = match probes.kind {
            TraceMode::Exact => {
                let diag = jv
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| g.slice_cols(v, j, 1))
                    .collect::<Result<Vec<_>>>()?;
                let terms: Vec<(f64, Var)> = diag.into_iter().map(|v| (1.0, v)).collect();
                g.lincomb(&terms)?
            }
            TraceMode::Hutchinson { .. } => {
                let mut terms = Vec::with_capacity(jv.len());
                let w = 1.0 / jv.len() as f64;
                for (&e, &v) in probes.vectors.iter().zip(&jv) {
                    let prod = g.mul(e, v)?;
                    terms.push((w, g.sum_cols(prod)));
                }
                g.lincomb(&terms)?
            }
        };
        Ok((f, trace))
    }
}

/// Tangent directions for one solve, created before integration starts.
pub struct Probes {
    pub kind: TraceMode,
    pub vectors: Vec<Var>,
}

impl Probes {
    pub fn new(g: &mut Graph, kind: TraceMode, rows: usize, dim: usize, rng: &mut dyn rand::RngCore) -> Self {
        let vectors = match kind {
            TraceMode::Exact => (0..dim)
                .map(|j| {
                    let mut t = Tensor::zeros(&[rows, dim]);
                    for r in 0..rows {
                        t.data_mut()[r * dim + j] = 1.0;
                    }
                    g.constant(t)
                })
                .collect(),
            TraceMode::Hutchinson { probes } => (0..probes.max(1))
                .map(|_| {
                    let data = (0..rows * dim)
                        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                        .collect();
                    g.constant(Tensor::matrix(rows, dim, data).expect("probe shape"))
                })
                .collect(),
        };
        Probes { kind, vectors }
    }

    pub fn none() -> Self {
        Probes {
            kind: TraceMode::Exact,
            vectors: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cnf {
    pub input_norm: MovingBatchNorm,
    pub field: CnfField,
    pub output_norm: MovingBatchNorm,
    pub dim: usize,
}

impl Cnf {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        zeta_dim: usize,
        with_s: bool,
        hidden: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let input_norm = MovingBatchNorm::new(store, &format!("{name}.norm_in"), dim);
        let field = CnfField::new(store, &format!("{name}.field"), dim, zeta_dim, with_s, hidden, depth, rng);
        let output_norm = MovingBatchNorm::new(store, &format!("{name}.norm_out"), dim);
        Cnf {
            input_norm,
            field,
            output_norm,
            dim,
        }
    }

    /// Data to latent on the tape. Returns `(z, logdet)`, `logdet: R × 1`
    /// including `∫ tr(∂f/∂x) dt` and both batch norms.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        zeta: Var,
        s: Option<Var>,
        mode: &mut Mode,
        trace: TraceMode,
        rng: &mut dyn rand::RngCore,
        cfg: &SolverConfig,
    ) -> Result<(Var, Var)> {
        let rows = g.value(x).rows();
        let d = self.dim;
        let (x0, ld_in) = self.input_norm.forward(g, p, x, mode)?;
        let conds = self.field.condition(g, p, zeta, s)?;
        let probes = Probes::new(g, trace, rows, d, rng);
        let acc0 = g.constant(Tensor::zeros(&[rows, 1]));
        let state0 = g.concat(&[x0, acc0])?;
        let sol = integrate_graph(
            g,
            |g, t, h| {
                let xs = g.slice_cols(h, 0, d)?;
                let (f, tr) = self.field.eval_with_trace(g, p, &conds, t, xs, &probes)?;
                g.concat(&[f, tr])
            },
            state0,
            0.0,
            1.0,
            cfg,
        )?;
        let z_pre = g.slice_cols(sol.h1, 0, d)?;
        let acc = g.slice_cols(sol.h1, d, 1)?;
        let (z, ld_out) = self.output_norm.forward(g, p, z_pre, mode)?;
        let logdet = g.add(acc, ld_in)?;
        let logdet = g.add(logdet, ld_out)?;
        Ok((z, logdet))
    }

    /// FiLM conditions evaluated to plain tensors.
    fn condition_values(&self, store: &ParamStore, zeta: &Tensor, s: Option<&Tensor>) -> Result<Vec<(Tensor, Tensor)>> {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let z = g.constant(zeta.clone());
        let sv = s.map(|s| g.constant(s.clone()));
        let conds = self.field.condition(&mut g, &p, z, sv)?;
        Ok(conds
            .iter()
            .map(|c| (g.value(c.gate).clone(), g.value(c.bias).clone()))
            .collect())
    }

    /// Value-only solve of the field between flow times, optionally carrying
    /// the exact trace integral. Returns `(x(t1), ∫ tr dt)`.
    #[allow(clippy::too_many_arguments)]
    fn solve_values(
        &self,
        store: &ParamStore,
        conds: &[(Tensor, Tensor)],
        x: &Tensor,
        t0: f64,
        t1: f64,
        with_trace: bool,
        cfg: &SolverConfig,
    ) -> Result<(Tensor, Vec<f64>)> {
        let (rows, d) = (x.rows(), self.dim);
        let width = d + usize::from(with_trace);
        let mut y0 = Vec::with_capacity(rows * width);
        for r in 0..rows {
            y0.extend_from_slice(x.row_slice(r));
            if with_trace {
                y0.push(0.0);
            }
        }
        let sol = integrate(
            |t, y: &[f64]| {
                let mut g = Graph::new();
                let p = store.bind_frozen(&mut g);
                let conds: Vec<FilmCondition> = conds
                    .iter()
                    .map(|(a, b)| FilmCondition {
                        gate: g.constant(a.clone()),
                        bias: g.constant(b.clone()),
                    })
                    .collect();
                let h = g.constant(Tensor::matrix(rows, width, y.to_vec())?);
                let xs = if with_trace { g.slice_cols(h, 0, d)? } else { h };
                let out = if with_trace {
                    let mut none = NoRng;
                    let probes = Probes::new(&mut g, TraceMode::Exact, rows, d, &mut none);
                    let (f, tr) = self.field.eval_with_trace(&mut g, &p, &conds, t, xs, &probes)?;
                    g.concat(&[f, tr])?
                } else {
                    self.field.eval(&mut g, &p, &conds, t, xs, &[])?.0
                };
                Ok(g.value(out).data().to_vec())
            },
            &y0,
            t0,
            t1,
            cfg,
        )?;
        let mut xs = Vec::with_capacity(rows * d);
        let mut acc = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &sol.h1[r * width..(r + 1) * width];
            xs.extend_from_slice(&row[..d]);
            if with_trace {
                acc.push(row[d]);
            }
        }
        Ok((Tensor::matrix(rows, d, xs)?, acc))
    }

    /// Data to latent with frozen statistics and exact trace. Returns `z` and
    /// the total log-determinant per row.
    pub fn forward_values(
        &self,
        store: &ParamStore,
        x: &Tensor,
        zeta: &Tensor,
        s: Option<&Tensor>,
        cfg: &SolverConfig,
    ) -> Result<(Tensor, Vec<f64>)> {
        check_rows(x, zeta, s)?;
        let (x0, ld_in) = self.input_norm.forward_values(store, x)?;
        let conds = self.condition_values(store, zeta, s)?;
        let (z_pre, acc) = self.solve_values(store, &conds, &x0, 0.0, 1.0, true, cfg)?;
        let (z, ld_out) = self.output_norm.forward_values(store, &z_pre)?;
        Ok((z, acc.into_iter().map(|a| a + ld_in + ld_out).collect()))
    }

    /// Latent to data: inverse batch norm, reverse-time solve, inverse
    /// batch norm.
    pub fn inverse_values(
        &self,
        store: &ParamStore,
        z: &Tensor,
        zeta: &Tensor,
        s: Option<&Tensor>,
        cfg: &SolverConfig,
    ) -> Result<Tensor> {
        check_rows(z, zeta, s)?;
        let (h, _) = self.output_norm.inverse_values(store, z)?;
        let conds = self.condition_values(store, zeta, s)?;
        let (x0, _) = self.solve_values(store, &conds, &h, 1.0, 0.0, false, cfg)?;
        let (x, _) = self.input_norm.inverse_values(store, &x0)?;
        Ok(x)
    }
}

fn check_rows(x: &Tensor, zeta: &Tensor, s: Option<&Tensor>) -> Result<()> {
    if zeta.rows() != x.rows() || s.is_some_and(|s| s.rows() != x.rows()) {
        return Err(Error::Dimension {
            op: "flow condition rows",
            lhs: x.shape().to_vec(),
            rhs: zeta.shape().to_vec(),
        });
    }
    Ok(())
}

/// Exact-trace probes never draw.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("exact trace does not sample")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("exact trace does not sample")
    }
    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("exact trace does not sample")
    }
}
