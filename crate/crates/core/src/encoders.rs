//! Causal encoders mapping an observed history to the conditioning vector ζ.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::nn::{uniform_init, Bound, Mlp, ParamId, ParamStore};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::odeint::{integrate, integrate_graph, SolverConfig};
use crate::spline::{fit_natural_cubic, SplinePath};

/// Observed position plus the five motion features.
pub const INPUT_DIM: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gru,
    Cde,
}

/// A batch of equally long input sequences, stored time-major.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    steps: Vec<Tensor>,
}

impl SequenceBatch {
    /// `windows[b][t]` is the input vector of window `b` at step `t`.
    pub fn new(windows: &[Vec<Vec<f64>>]) -> Result<Self> {
        let b = windows.len();
        let len = windows.first().map_or(0, Vec::len);
        if b == 0 || len == 0 {
            return Err(Error::contract("encoder input is empty"));
        }
        let c = windows[0][0].len();
        let mut steps = Vec::with_capacity(len);
        for t in 0..len {
            let mut data = Vec::with_capacity(b * c);
            for w in windows {
                if w.len() != len || w[t].len() != c {
                    return Err(Error::contract("encoder inputs must share length and width"));
                }
                data.extend_from_slice(&w[t]);
            }
            steps.push(Tensor::matrix(b, c, data)?);
        }
        Ok(SequenceBatch { steps })
    }

    pub fn batch_size(&self) -> usize {
        self.steps[0].rows()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.steps[0].cols()
    }

    pub fn step(&self, t: usize) -> &Tensor {
        &self.steps[t]
    }

    /// Rows `idx` of every step.
    pub fn select(&self, idx: &[usize]) -> SequenceBatch {
        let c = self.channels();
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let data = idx.iter().flat_map(|&i| s.row_slice(i).to_vec()).collect();
                Tensor::matrix(idx.len(), c, data).expect("selected rows")
            })
            .collect();
        SequenceBatch { steps }
    }

    /// One natural cubic spline per window over observation index time.
    pub fn control_paths(&self) -> Result<Vec<SplinePath>> {
        let times: Vec<f64> = (0..self.len()).map(|t| t as f64).collect();
        (0..self.batch_size())
            .map(|b| {
                let values: Vec<Vec<f64>> =
                    self.steps.iter().map(|s| s.row_slice(b).to_vec()).collect();
                fit_natural_cubic(&values, &times)
            })
            .collect()
    }
}

/// Gated recurrent unit. Weights are stored input-major (`x·W`).
#[derive(Clone, Debug)]
pub struct GruEncoder {
    pub w_ir: ParamId,
    pub w_iz: ParamId,
    pub w_in: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hn: ParamId,
    pub b_ir: ParamId,
    pub b_iz: ParamId,
    pub b_in: ParamId,
    pub b_hr: ParamId,
    pub b_hz: ParamId,
    pub b_hn: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut w = |suffix: &str, fan_in: usize, rows: usize| {
            let t = uniform_init(rng, fan_in, &[rows, hidden_dim]);
            store.add(format!("{name}.{suffix}"), t, true)
        };
        let w_ir = w("w_ir", input_dim, input_dim);
        let w_iz = w("w_iz", input_dim, input_dim);
        let w_in = w("w_in", input_dim, input_dim);
        let w_hr = w("w_hr", hidden_dim, hidden_dim);
        let w_hz = w("w_hz", hidden_dim, hidden_dim);
        let w_hn = w("w_hn", hidden_dim, hidden_dim);
        let mut b = |suffix: &str| {
            store.add(format!("{name}.{suffix}"), Tensor::zeros(&[1, hidden_dim]), true)
        };
        GruEncoder {
            w_ir,
            w_iz,
            w_in,
            w_hr,
            w_hz,
            w_hn,
            b_ir: b("b_ir"),
            b_iz: b("b_iz"),
            b_in: b("b_in"),
            b_hr: b("b_hr"),
            b_hz: b("b_hz"),
            b_hn: b("b_hn"),
            input_dim,
            hidden_dim,
        }
    }

    fn affine(&self, g: &mut Graph, p: &Bound, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let y = g.matmul(x, p.var(w))?;
        g.add(y, p.var(b))
    }

    /// One recurrence step on a batch: `h_prev: B × H`, `x: B × input_dim`.
    pub fn step(&self, g: &mut Graph, p: &Bound, h_prev: Var, x: Var) -> Result<Var> {
        let xr = self.affine(g, p, x, self.w_ir, self.b_ir)?;
        let hr = self.affine(g, p, h_prev, self.w_hr, self.b_hr)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);

        let xz = self.affine(g, p, x, self.w_iz, self.b_iz)?;
        let hz = self.affine(g, p, h_prev, self.w_hz, self.b_hz)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);

        let xn = self.affine(g, p, x, self.w_in, self.b_in)?;
        let hn = self.affine(g, p, h_prev, self.w_hn, self.b_hn)?;
        let gated = g.mul(r, hn)?;
        let cand = g.add(xn, gated)?;
        let cand = g.tanh(cand);

        // (1 − z)⊙h̃ + z⊙h = h̃ + z⊙(h − h̃)
        let diff = g.sub(h_prev, cand)?;
        let keep = g.mul(z, diff)?;
        g.add(cand, keep)
    }

    /// Fold [`step`](Self::step) over the batch from a zero state.
    pub fn encode(&self, g: &mut Graph, p: &Bound, seq: &SequenceBatch) -> Result<Var> {
        self.check(seq)?;
        let mut h = g.constant(Tensor::zeros(&[seq.batch_size(), self.hidden_dim]));
        for t in 0..seq.len() {
            let x = g.constant(seq.step(t).clone());
            h = self.step(g, p, h, x)?;
        }
        Ok(h)
    }

    /// Hidden state after every step, `h₁ … h_T`.
    pub fn trace(&self, g: &mut Graph, p: &Bound, seq: &SequenceBatch) -> Result<Vec<Var>> {
        self.check(seq)?;
        let mut h = g.constant(Tensor::zeros(&[seq.batch_size(), self.hidden_dim]));
        let mut out = Vec::with_capacity(seq.len());
        for t in 0..seq.len() {
            let x = g.constant(seq.step(t).clone());
            h = self.step(g, p, h, x)?;
            out.push(h);
        }
        Ok(out)
    }

    fn check(&self, seq: &SequenceBatch) -> Result<()> {
        if seq.channels() != self.input_dim {
            return Err(Error::Dimension {
                op: "gru input",
                lhs: vec![self.input_dim],
                rhs: vec![seq.channels()],
            });
        }
        Ok(())
    }
}

/// Neural controlled differential equation driven by a cubic spline of the
/// inputs: `dh/dt = ξ(h)·C′(t)`, `h(0) = x₀·W_embed`.
#[derive(Clone, Debug)]
pub struct CdeEncoder {
    pub embed: ParamId,
    pub xi: Mlp,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl CdeEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        xi_width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let embed = uniform_init(rng, input_dim, &[input_dim, hidden_dim]);
        let embed = store.add(format!("{name}.embed"), embed, true);
        let xi = Mlp::new(
            store,
            &format!("{name}.xi"),
            &[hidden_dim, xi_width, xi_width, hidden_dim * input_dim],
            true,
            false,
            rng,
        );
        CdeEncoder {
            embed,
            xi,
            input_dim,
            hidden_dim,
        }
    }

    /// `dh/dt` for a batch, given the control derivative `B × input_dim`.
    pub fn field(&self, g: &mut Graph, p: &Bound, h: Var, control_rate: Var) -> Result<Var> {
        let m = self.xi.forward(g, p, h)?;
        g.row_matvec(m, control_rate)
    }

    fn control_rate(paths: &[SplinePath], t: f64, channels: usize) -> Result<Tensor> {
        let mut data = vec![0.0; paths.len() * channels];
        for (b, path) in paths.iter().enumerate() {
            path.eval_derivative_into(t, &mut data[b * channels..(b + 1) * channels])?;
        }
        Tensor::matrix(paths.len(), channels, data)
    }

    fn check(&self, seq: &SequenceBatch) -> Result<()> {
        if seq.channels() != self.input_dim {
            return Err(Error::Dimension {
                op: "cde input",
                lhs: vec![self.input_dim],
                rhs: vec![seq.channels()],
            });
        }
        Ok(())
    }

    pub fn initial_state(&self, g: &mut Graph, p: &Bound, seq: &SequenceBatch) -> Result<Var> {
        let x0 = g.constant(seq.step(0).clone());
        g.matmul(x0, p.var(self.embed))
    }

    /// Encode on the tape so gradients flow through the accepted solver steps.
    pub fn encode(
        &self,
        g: &mut Graph,
        p: &Bound,
        seq: &SequenceBatch,
        cfg: &SolverConfig,
    ) -> Result<Var> {
        self.check(seq)?;
        let h0 = self.initial_state(g, p, seq)?;
        if seq.len() == 1 {
            return Ok(h0);
        }
        let paths = seq.control_paths()?;
        let c = self.input_dim;
        let mut h = h0;
        // knot to knot: the control derivative is only piecewise smooth
        for k in 0..seq.len() - 1 {
            let sol = integrate_graph(
                g,
                |g, t, h| {
                    let rate = g.constant(Self::control_rate(&paths, t, c)?);
                    self.field(g, p, h, rate)
                },
                h,
                k as f64,
                (k + 1) as f64,
                cfg,
            )?;
            h = sol.h1;
        }
        Ok(h)
    }

    /// Value-only solve over `[t0, t1]` from `h_start` (`B × hidden_dim`).
    /// Each field evaluation uses a short-lived graph.
    pub fn integrate_values(
        &self,
        store: &ParamStore,
        paths: &[SplinePath],
        h_start: &Tensor,
        t0: f64,
        t1: f64,
        cfg: &SolverConfig,
    ) -> Result<Tensor> {
        let (b, w) = (h_start.rows(), h_start.cols());
        let c = self.input_dim;
        let sol = integrate(
            |t, h: &[f64]| {
                let mut g = Graph::new();
                let p = store.bind_frozen(&mut g);
                let hv = g.constant(Tensor::matrix(b, w, h.to_vec())?);
                let rate = g.constant(Self::control_rate(paths, t, c)?);
                let f = self.field(&mut g, &p, hv, rate)?;
                Ok(g.value(f).data().to_vec())
            },
            h_start.data(),
            t0,
            t1,
            cfg,
        )?;
        Tensor::matrix(b, w, sol.h1)
    }

    /// Value-only encoding over the whole observation window.
    pub fn encode_values(
        &self,
        store: &ParamStore,
        seq: &SequenceBatch,
        cfg: &SolverConfig,
    ) -> Result<Tensor> {
        self.check(seq)?;
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let h0 = self.initial_state(&mut g, &p, seq)?;
        let h0 = g.value(h0).clone();
        if seq.len() == 1 {
            return Ok(h0);
        }
        let paths = seq.control_paths()?;
        let mut h = h0;
        for k in 0..seq.len() - 1 {
            h = self.integrate_values(store, &paths, &h, k as f64, (k + 1) as f64, cfg)?;
        }
        Ok(h)
    }
}
