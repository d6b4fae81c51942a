//! Encoder plus flow: the conditional density of future positions.

mod checkpoint;
mod train;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{from_displacements, to_displacements, Pipeline, Point, TrajectoryWindow};
use crate::diffcore::nn::{Bound, ParamStore};
use crate::diffcore::{Graph, Tensor, Var};
use crate::encoders::{CdeEncoder, EncoderKind, GruEncoder, SequenceBatch, INPUT_DIM};
use crate::error::{Error, Result};
use crate::flows::{Cnf, Condition, ConditionValues, Dnf, Flow, FlowKind, FlowSolve, Mode, TraceMode};
use crate::odeint::SolverConfig;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use train::{train, Adam, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// One 2-D density per forecast time `s`.
    Marginal,
    /// One `2S`-D density over the displacement sequence.
    Joint,
}

/// Units of reported log-densities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityUnits {
    /// Preprocessed coordinates.
    #[default]
    Model,
    /// World coordinates, including the min-max Jacobian.
    World,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub flow: FlowKind,
    pub formulation: Formulation,
    /// Forecast horizon `S`.
    pub horizon: usize,
    /// Size of the embedding ζ.
    pub hidden_dim: usize,
    /// Hidden width of the CDE vector field ξ.
    pub cde_width: usize,
    pub coupling_layers: usize,
    pub coupling_hidden: usize,
    pub cnf_hidden: usize,
    pub cnf_depth: usize,
    /// Trace estimator used while training a continuous flow. Evaluation
    /// always uses the exact trace.
    pub train_trace: Option<TraceMode>,
    pub solver: SolverConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::Gru,
            flow: FlowKind::Dnf,
            formulation: Formulation::Marginal,
            horizon: 12,
            hidden_dim: 32,
            cde_width: 32,
            coupling_layers: 8,
            coupling_hidden: 32,
            cnf_hidden: 64,
            cnf_depth: 3,
            train_trace: None,
            solver: SolverConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.solver.validate();
        let positive = [
            ("model.horizon", self.horizon),
            ("model.hidden_dim", self.hidden_dim),
            ("model.cde_width", self.cde_width),
            ("model.coupling_hidden", self.coupling_hidden),
            ("model.cnf_hidden", self.cnf_hidden),
            ("model.cnf_depth", self.cnf_depth),
        ];
        for (k, v) in positive {
            if v == 0 {
                errs.push(format!("{k} must be >= 1"));
            }
        }
        if let Some(TraceMode::Hutchinson { probes: 0 }) = self.train_trace {
            errs.push("model.train_trace.probes must be >= 1".into());
        }
        errs
    }

    pub fn flow_dim(&self) -> usize {
        match self.formulation {
            Formulation::Marginal => 2,
            Formulation::Joint => 2 * self.horizon,
        }
    }

    /// Exact for the 2-D marginal flow, one Hutchinson probe for the joint.
    pub fn effective_train_trace(&self) -> TraceMode {
        self.train_trace.unwrap_or(match self.formulation {
            Formulation::Marginal => TraceMode::Exact,
            Formulation::Joint => TraceMode::Hutchinson { probes: 1 },
        })
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Gru(GruEncoder),
    Cde(CdeEncoder),
}

#[derive(Clone, Debug)]
pub struct FlowModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub flow: Flow,
    pub pipeline: Pipeline,
}

/// One row of a marginal query: window index, model-space point, time `s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalQuery {
    pub window: usize,
    pub point: Point,
    pub s: f64,
}

impl FlowModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden_dim;
        let encoder = match config.encoder {
            EncoderKind::Gru => Encoder::Gru(GruEncoder::new(&mut store, "encoder", INPUT_DIM, h, &mut rng)),
            EncoderKind::Cde => Encoder::Cde(CdeEncoder::new(
                &mut store,
                "encoder",
                INPUT_DIM,
                h,
                config.cde_width,
                &mut rng,
            )),
        };
        let marginal = config.formulation == Formulation::Marginal;
        let dim = config.flow_dim();
        let flow = match config.flow {
            FlowKind::Dnf => Flow::Discrete(Dnf::new(
                &mut store,
                "flow",
                dim,
                h + usize::from(marginal),
                config.coupling_layers,
                config.coupling_hidden,
                &mut rng,
            )),
            FlowKind::Cnf => Flow::Continuous(Cnf::new(
                &mut store,
                "flow",
                dim,
                h,
                marginal,
                config.cnf_hidden,
                config.cnf_depth,
                &mut rng,
            )),
        };
        Ok(FlowModel {
            config,
            store,
            encoder,
            flow,
            pipeline: Pipeline::identity(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn sequences(windows: &[&TrajectoryWindow]) -> Result<SequenceBatch> {
        let inputs: Vec<Vec<Vec<f64>>> = windows.iter().map(|w| w.inputs()).collect();
        SequenceBatch::new(&inputs)
    }

    /// ζ for each window on the tape, `B × hidden_dim`.
    pub fn encode(&self, g: &mut Graph, p: &Bound, windows: &[&TrajectoryWindow]) -> Result<Var> {
        let seq = Self::sequences(windows)?;
        match &self.encoder {
            Encoder::Gru(e) => e.encode(g, p, &seq),
            Encoder::Cde(e) => e.encode(g, p, &seq, &self.config.solver),
        }
    }

    /// ζ for each window without keeping a tape.
    pub fn embed(&self, windows: &[&TrajectoryWindow]) -> Result<Tensor> {
        let seq = Self::sequences(windows)?;
        match &self.encoder {
            Encoder::Gru(e) => {
                let mut g = Graph::new();
                let p = self.store.bind_frozen(&mut g);
                let z = e.encode(&mut g, &p, &seq)?;
                Ok(g.value(z).clone())
            }
            Encoder::Cde(e) => e.encode_values(&self.store, &seq, &self.config.solver),
        }
    }

    fn check_s(&self, s: f64) -> Result<f64> {
        let big_s = self.horizon() as f64;
        if !(s > 0.0 && s <= big_s) {
            return Err(Error::Range {
                value: s,
                lo: 0.0,
                hi: big_s,
            });
        }
        Ok(s / big_s)
    }

    fn require(&self, f: Formulation) -> Result<()> {
        if self.config.formulation != f {
            return Err(Error::contract(format!(
                "operation needs a {f:?} model, this one is {:?}",
                self.config.formulation
            )));
        }
        Ok(())
    }

    /// Flow targets for training windows: `(x, ζ-row index, s/S)` rows.
    fn targets(&self, windows: &[&TrajectoryWindow]) -> Result<(Tensor, Vec<usize>, Option<Tensor>)> {
        let big_s = self.horizon();
        for w in windows {
            if w.future.len() != big_s {
                return Err(Error::contract(format!(
                    "window has {} future positions, the model needs {big_s}",
                    w.future.len()
                )));
            }
        }
        match self.config.formulation {
            Formulation::Marginal => {
                let n = windows.len() * big_s;
                let (mut x, mut idx, mut steps) = (Vec::with_capacity(2 * n), Vec::with_capacity(n), Vec::with_capacity(n));
                for (i, w) in windows.iter().enumerate() {
                    for (k, u) in w.future.iter().enumerate() {
                        x.extend_from_slice(u);
                        idx.push(i);
                        steps.push((k + 1) as f64 / big_s as f64);
                    }
                }
                Ok((Tensor::matrix(n, 2, x)?, idx, Some(Tensor::matrix(n, 1, steps)?)))
            }
            Formulation::Joint => {
                let mut x = Vec::with_capacity(windows.len() * 2 * big_s);
                for w in windows {
                    for d in to_displacements(&w.future, w.last_obs()) {
                        x.extend_from_slice(&d);
                    }
                }
                Ok((Tensor::matrix(windows.len(), 2 * big_s, x)?, (0..windows.len()).collect(), None))
            }
        }
    }

    /// Per-row log-densities of every training target on the tape.
    pub fn log_prob_rows(
        &self,
        g: &mut Graph,
        p: &Bound,
        windows: &[&TrajectoryWindow],
        mode: &mut Mode,
        trace: TraceMode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let (x, idx, steps) = self.targets(windows)?;
        let zeta = self.encode(g, p, windows)?;
        let zeta = match self.config.formulation {
            Formulation::Marginal => g.gather_rows(zeta, &idx)?,
            Formulation::Joint => zeta,
        };
        let x = g.constant(x);
        let step = steps.map(|s| g.constant(s));
        let solve = FlowSolve {
            trace,
            solver: self.config.solver,
        };
        self.flow.log_prob(g, p, x, Condition { zeta, step }, mode, &solve, rng)
    }

    /// Mean negative log-likelihood over windows (and forecast times in the
    /// marginal formulation).
    pub fn nll_loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        windows: &[&TrajectoryWindow],
        mode: &mut Mode,
        trace: TraceMode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let lp = self.log_prob_rows(g, p, windows, mode, trace, rng)?;
        let m = g.mean(lp);
        Ok(g.neg(m))
    }

    /// Value-only per-row log-densities with running statistics and the
    /// exact trace.
    pub fn log_prob_targets(&self, windows: &[&TrajectoryWindow]) -> Result<Vec<f64>> {
        let (x, idx, steps) = self.targets(windows)?;
        let zeta = self.embed(windows)?;
        let zeta = match self.config.formulation {
            Formulation::Marginal => gather(&zeta, &idx),
            Formulation::Joint => zeta,
        };
        self.flow.log_prob_values(
            &self.store,
            &x,
            ConditionValues {
                zeta: &zeta,
                step: steps.as_ref(),
            },
            &self.config.solver,
        )
    }

    /// Evaluation NLL, in model units.
    pub fn nll(&self, windows: &[&TrajectoryWindow]) -> Result<f64> {
        let lp = self.log_prob_targets(windows)?;
        Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// Marginal log-densities at model-space points. `zeta` holds one row
    /// per window referenced by the queries.
    pub fn log_prob_marginal(&self, zeta: &Tensor, queries: &[MarginalQuery]) -> Result<Vec<f64>> {
        self.require(Formulation::Marginal)?;
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let mut x = Vec::with_capacity(2 * queries.len());
        let mut steps = Vec::with_capacity(queries.len());
        let mut idx = Vec::with_capacity(queries.len());
        for q in queries {
            x.extend_from_slice(&q.point);
            steps.push(self.check_s(q.s)?);
            idx.push(q.window);
        }
        let n = queries.len();
        let z = gather(zeta, &idx);
        let step = Tensor::matrix(n, 1, steps)?;
        self.flow.log_prob_values(
            &self.store,
            &Tensor::matrix(n, 2, x)?,
            ConditionValues {
                zeta: &z,
                step: Some(&step),
            },
            &self.config.solver,
        )
    }

    /// `log p(u | window)` at a world-space point.
    pub fn log_prob_world_points(
        &self,
        window: &TrajectoryWindow,
        points: &[Point],
        s: f64,
        units: DensityUnits,
    ) -> Result<Vec<f64>> {
        let zeta = self.embed(&[window])?;
        let queries: Vec<MarginalQuery> = points
            .iter()
            .map(|p| MarginalQuery {
                window: 0,
                point: window.preprocess.to_model(*p),
                s,
            })
            .collect();
        let shift = match units {
            DensityUnits::Model => 0.0,
            DensityUnits::World => window.preprocess.log_jacobian(),
        };
        Ok(self
            .log_prob_marginal(&zeta, &queries)?
            .into_iter()
            .map(|v| v + shift)
            .collect())
    }

    /// Joint log-density of a full model-space future.
    pub fn log_prob_joint(&self, window: &TrajectoryWindow, future: &[Point], units: DensityUnits) -> Result<f64> {
        self.require(Formulation::Joint)?;
        if future.len() != self.horizon() {
            return Err(Error::contract("joint density needs the full horizon"));
        }
        let zeta = self.embed(&[window])?;
        let x: Vec<f64> = to_displacements(future, window.last_obs()).into_iter().flatten().collect();
        let lp = self.flow.log_prob_values(
            &self.store,
            &Tensor::row(x),
            ConditionValues { zeta: &zeta, step: None },
            &self.config.solver,
        )?[0];
        Ok(match units {
            DensityUnits::Model => lp,
            DensityUnits::World => lp + self.horizon() as f64 * window.preprocess.log_jacobian(),
        })
    }

    /// Draw `n` positions at forecast time `s ∈ (0, S]`, in model space.
    pub fn sample_future_model(
        &self,
        window: &TrajectoryWindow,
        s: f64,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Point>> {
        self.require(Formulation::Marginal)?;
        let step = self.check_s(s)?;
        if n == 0 {
            return Ok(Vec::new());
        }
        let zeta = self.embed(&[window])?;
        let z = standard_normal(rng, n, 2);
        let zr = gather(&zeta, &vec![0; n]);
        let st = Tensor::full(&[n, 1], step);
        let u = self.flow.inverse_values(
            &self.store,
            &z,
            ConditionValues {
                zeta: &zr,
                step: Some(&st),
            },
            &self.config.solver,
        )?;
        Ok((0..n).map(|r| [u.get(r, 0), u.get(r, 1)]).collect())
    }

    /// Draw `n` world-space positions at forecast time `s`.
    pub fn sample_future(&self, window: &TrajectoryWindow, s: f64, n: usize, rng: &mut impl Rng) -> Result<Vec<Point>> {
        Ok(self
            .sample_future_model(window, s, n, rng)?
            .into_iter()
            .map(|p| window.preprocess.to_world(p))
            .collect())
    }

    /// Draw `n` full futures from the joint density, in model space.
    pub fn sample_joint_model(&self, window: &TrajectoryWindow, n: usize, rng: &mut impl Rng) -> Result<Vec<Vec<Point>>> {
        self.require(Formulation::Joint)?;
        if n == 0 {
            return Ok(Vec::new());
        }
        let big_s = self.horizon();
        let zeta = self.embed(&[window])?;
        let z = standard_normal(rng, n, 2 * big_s);
        let u = self.flow.inverse_values(
            &self.store,
            &z,
            ConditionValues {
                zeta: &gather(&zeta, &vec![0; n]),
                step: None,
            },
            &self.config.solver,
        )?;
        Ok((0..n)
            .map(|r| {
                let d: Vec<Point> = u.row_slice(r).chunks(2).map(|c| [c[0], c[1]]).collect();
                from_displacements(&d, window.last_obs())
            })
            .collect())
    }

    /// One full future from the joint density in world coordinates.
    pub fn sample_joint(&self, window: &TrajectoryWindow, rng: &mut impl Rng) -> Result<Vec<Point>> {
        let path = self.sample_joint_model(window, 1, rng)?.remove(0);
        Ok(path.into_iter().map(|p| window.preprocess.to_world(p)).collect())
    }
}

pub(crate) fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let c = t.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(t.row_slice(i));
    }
    Tensor::matrix(idx.len(), c, data).expect("gathered rows keep their width")
}

/// `rows × dim` standard normal draws, row by row.
pub fn standard_normal(rng: &mut impl Rng, rows: usize, dim: usize) -> Tensor {
    let data = (0..rows * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, dim, data).expect("shape matches draw count")
}
