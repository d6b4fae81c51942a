//! Adaptive Dormand–Prince 5(4) integration.
//!
//! One step controller drives two state representations: plain `Vec<f64>`
//! states (inference, adjoint sweeps) and graph-recorded states, where every
//! accepted step stays on the tape so the realized discretization can be
//! differentiated exactly. Rejected trial steps are rolled off the tape.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Zero selects the step automatically from the field norms at `t0`.
    pub initial_step: f64,
    pub max_steps: usize,
    pub safety_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rtol: 1e-5,
            atol: 1e-5,
            initial_step: 0.0,
            max_steps: 10_000,
            safety_factor: 0.9,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolverConfig {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.rtol > 0.0) {
            errs.push(format!("solver.rtol must be > 0 (got {})", self.rtol));
        }
        if !(self.atol > 0.0) {
            errs.push(format!("solver.atol must be > 0 (got {})", self.atol));
        }
        if self.max_steps < 1 {
            errs.push("solver.max_steps must be >= 1".into());
        }
        if !(self.initial_step >= 0.0) {
            errs.push(format!("solver.initial_step must be >= 0 (got {})", self.initial_step));
        }
        if !(self.safety_factor > 0.0 && self.safety_factor <= 1.0) {
            errs.push(format!("solver.safety_factor must be in (0, 1] (got {})", self.safety_factor));
        }
        errs
    }
}

/// One accepted step: the step started at `t` from state `h` with size `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub h: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub h1: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub evals: usize,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// State algebra the controller needs.
trait Backend {
    type State: Clone;
    fn eval(&mut self, t: f64, h: &Self::State) -> Result<Self::State>;
    /// `Σ cᵢ·xᵢ`.
    fn combine(&mut self, terms: &[(f64, &Self::State)]) -> Result<Self::State>;
    fn values<'a>(&'a self, h: &'a Self::State) -> &'a [f64];
    fn mark(&self) -> usize;
    fn rollback(&mut self, mark: usize);
}

struct Plain<F> {
    field: F,
    evals: usize,
}

impl<F> Backend for Plain<F>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    type State = Vec<f64>;

    fn eval(&mut self, t: f64, h: &Vec<f64>) -> Result<Vec<f64>> {
        self.evals += 1;
        let out = (self.field)(t, h)?;
        if out.len() != h.len() {
            return Err(Error::Dimension {
                op: "vector field",
                lhs: vec![h.len()],
                rhs: vec![out.len()],
            });
        }
        Ok(out)
    }

    fn combine(&mut self, terms: &[(f64, &Vec<f64>)]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; terms[0].1.len()];
        for &(c, x) in terms {
            if c != 0.0 {
                out.iter_mut().zip(x).for_each(|(o, v)| *o += c * v);
            }
        }
        Ok(out)
    }

    fn values<'a>(&'a self, h: &'a Vec<f64>) -> &'a [f64] {
        h
    }

    fn mark(&self) -> usize {
        0
    }

    fn rollback(&mut self, _mark: usize) {}
}

struct OnGraph<'g, F> {
    g: &'g mut Graph,
    field: F,
    evals: usize,
}

impl<F> Backend for OnGraph<'_, F>
where
    F: FnMut(&mut Graph, f64, Var) -> Result<Var>,
{
    type State = Var;

    fn eval(&mut self, t: f64, h: &Var) -> Result<Var> {
        self.evals += 1;
        let out = (self.field)(self.g, t, *h)?;
        if self.g.value(out).shape() != self.g.value(*h).shape() {
            return Err(Error::Dimension {
                op: "vector field",
                lhs: self.g.value(*h).shape().to_vec(),
                rhs: self.g.value(out).shape().to_vec(),
            });
        }
        Ok(out)
    }

    fn combine(&mut self, terms: &[(f64, &Var)]) -> Result<Var> {
        let t: Vec<(f64, Var)> = terms
            .iter()
            .filter(|(c, _)| *c != 0.0)
            .map(|&(c, v)| (c, *v))
            .collect();
        self.g.lincomb(&t)
    }

    fn values<'a>(&'a self, h: &'a Var) -> &'a [f64] {
        self.g.value(*h).data()
    }

    fn mark(&self) -> usize {
        self.g.len()
    }

    fn rollback(&mut self, mark: usize) {
        self.g.truncate(mark);
    }
}

fn rms_norm(x: &[f64], scale: &[f64]) -> f64 {
    let s: f64 = x.iter().zip(scale).map(|(v, s)| (v / s) * (v / s)).sum();
    (s / x.len().max(1) as f64).sqrt()
}

fn check_finite(v: &[f64], t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("vector field returned a non-finite value at t = {t}")))
    }
}

fn initial_step<B: Backend>(
    b: &mut B,
    t0: f64,
    h0: &B::State,
    f0: &B::State,
    dir: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let y0 = b.values(h0).to_vec();
    let d: Vec<f64> = b.values(f0).to_vec();
    let scale: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let d0 = rms_norm(&y0, &scale);
    let d1 = rms_norm(&d, &scale);
    let h0_guess = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let mark = b.mark();
    let y1 = b.combine(&[(1.0, h0), (dir * h0_guess, f0)])?;
    let f1 = b.eval(t0 + dir * h0_guess, &y1)?;
    let diff: Vec<f64> = b
        .values(&f1)
        .iter()
        .zip(&d)
        .map(|(a, c)| a - c)
        .collect();
    b.rollback(mark);
    let d2 = rms_norm(&diff, &scale) / h0_guess;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0_guess * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0_guess).min(h1))
}

fn solve<B: Backend>(
    b: &mut B,
    h0: B::State,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<(B::State, Vec<StepRecord>)> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if !(t0.is_finite() && t1.is_finite()) || t0 == t1 {
        return Err(Error::contract(format!("integration interval [{t0}, {t1}] is empty")));
    }
    check_finite(b.values(&h0), t0)?;
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();

    let mut t = t0;
    let mut h = h0;
    let mut k1 = b.eval(t, &h)?;
    check_finite(b.values(&k1), t)?;
    let mut dt = if cfg.initial_step > 0.0 {
        cfg.initial_step
    } else {
        initial_step(b, t, &h, &k1, dir, cfg)?
    };
    let mut log = Vec::new();
    let mut attempts = 0usize;

    loop {
        let remaining = (t1 - t).abs();
        if remaining <= 1e-12 * span.max(1.0) {
            break;
        }
        attempts += 1;
        if attempts > cfg.max_steps {
            return Err(Error::Nonconvergence {
                t,
                max_steps: cfg.max_steps,
            });
        }
        let last = dt >= remaining;
        let step = if last { remaining } else { dt };
        let sdt = dir * step;

        let mark = b.mark();
        let mut ks: Vec<B::State> = Vec::with_capacity(7);
        ks.push(k1.clone());
        let mut y_new = None;
        for stage in 1..7 {
            let mut terms: Vec<(f64, &B::State)> = vec![(1.0, &h)];
            for (j, a) in A[stage].iter().enumerate() {
                terms.push((sdt * a, &ks[j]));
            }
            let y = b.combine(&terms)?;
            let t_stage = if stage == 6 { t + sdt } else { t + C[stage] * sdt };
            let k = b.eval(t_stage, &y)?;
            check_finite(b.values(&k), t_stage)?;
            ks.push(k);
            if stage == 6 {
                y_new = Some(y);
            }
        }
        let y_new = y_new.expect("six stages");

        let yv = b.values(&h);
        let yn = b.values(&y_new);
        let n = yv.len();
        let mut err = vec![0.0; n];
        for (j, e) in E.iter().enumerate() {
            if *e == 0.0 {
                continue;
            }
            let kv = b.values(&ks[j]);
            for i in 0..n {
                err[i] += sdt * e * kv[i];
            }
        }
        let scale: Vec<f64> = (0..n)
            .map(|i| cfg.atol + cfg.rtol * yv[i].abs().max(yn[i].abs()))
            .collect();
        let norm = rms_norm(&err, &scale);

        if !norm.is_finite() {
            return Err(Error::Numeric(format!("error estimate is not finite at t = {t}")));
        }
        if norm <= 1.0 {
            log.push(StepRecord {
                t,
                dt: sdt,
                h: b.values(&h).to_vec(),
            });
            t = if last { t1 } else { t + sdt };
            h = y_new;
            k1 = ks.pop().expect("fsal stage");
            let factor = if norm == 0.0 {
                MAX_FACTOR
            } else {
                (cfg.safety_factor * norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            dt = step * factor;
        } else {
            b.rollback(mark);
            let factor = (cfg.safety_factor * norm.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
            dt = step * factor;
        }
    }
    Ok((h, log))
}

/// Solve `dh/dt = field(t, h)` from `t0` to `t1` (either direction).
pub fn integrate<F>(field: F, h0: &[f64], t0: f64, t1: f64, cfg: &SolverConfig) -> Result<Solution>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let mut b = Plain { field, evals: 0 };
    let (h1, steps) = solve(&mut b, h0.to_vec(), t0, t1, cfg)?;
    Ok(Solution {
        h1,
        steps,
        evals: b.evals,
    })
}

/// Fifth-order solution with `n` equal steps and no error control.
pub fn integrate_fixed<F>(field: F, h0: &[f64], t0: f64, t1: f64, n: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if n == 0 {
        return Err(Error::contract("fixed-step solve needs at least one step"));
    }
    let mut b = Plain { field, evals: 0 };
    let dt = (t1 - t0) / n as f64;
    let mut h = h0.to_vec();
    for i in 0..n {
        let t = t0 + i as f64 * dt;
        let mut ks: Vec<Vec<f64>> = vec![b.eval(t, &h)?];
        for stage in 1..7 {
            let mut terms: Vec<(f64, &Vec<f64>)> = vec![(1.0, &h)];
            for (j, a) in A[stage].iter().enumerate() {
                terms.push((dt * a, &ks[j]));
            }
            let y = b.combine(&terms)?;
            if stage == 6 {
                h = y;
                break;
            }
            let k = b.eval(t + C[stage] * dt, &y)?;
            ks.push(k);
        }
        check_finite(&h, t + dt)?;
    }
    Ok(h)
}

/// Solve with a field that also returns the negative Jacobian trace, so the
/// log-density is carried along the same adaptive trajectory:
/// `logp1 = logp0 − ∫ tr J dt`.
pub fn integrate_augmented<F>(
    mut field: F,
    h0: &[f64],
    logp0: f64,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(f64, &[f64]) -> Result<(Vec<f64>, f64)>,
{
    let d = h0.len();
    let mut y0 = h0.to_vec();
    y0.push(logp0);
    let sol = integrate(
        |t, y: &[f64]| {
            let (mut dh, neg_trace) = field(t, &y[..d])?;
            dh.push(neg_trace);
            Ok(dh)
        },
        &y0,
        t0,
        t1,
        cfg,
    )?;
    let mut h1 = sol.h1;
    let logp1 = h1.pop().expect("augmented state");
    Ok((h1, logp1))
}

#[derive(Clone, Debug)]
pub struct GraphSolution {
    pub h1: Var,
    pub steps: Vec<StepRecord>,
    pub evals: usize,
}

/// Solve on the tape. Every accepted stage stays recorded so a later
/// `backward` differentiates through the realized discretization.
///
/// The field must not retain handles it creates between calls: rejected
/// steps truncate the graph.
pub fn integrate_graph<F>(
    g: &mut Graph,
    field: F,
    h0: Var,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<GraphSolution>
where
    F: FnMut(&mut Graph, f64, Var) -> Result<Var>,
{
    let mut b = OnGraph { g, field, evals: 0 };
    let (h1, steps) = solve(&mut b, h0, t0, t1, cfg)?;
    Ok(GraphSolution {
        h1,
        steps,
        evals: b.evals,
    })
}

/// A vector field with explicit parameters θ, evaluated on the tape.
pub trait ParamField {
    fn params(&self) -> &[Tensor];
    fn forward(&self, g: &mut Graph, t: f64, h: Var, params: &[Var]) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct SensitivityResult {
    /// State at the far end of the solve: `h(t0)` for the adjoint, `h(t1)` for backprop.
    pub endpoint: Vec<f64>,
    pub dl_dh0: Vec<f64>,
    /// Concatenated in `params()` order.
    pub dl_dtheta: Vec<f64>,
}

fn vjp<P: ParamField>(field: &P, t: f64, h: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let hv = g.param(Tensor::row(h.to_vec()));
    let pv: Vec<Var> = field.params().iter().map(|p| g.param(p.clone())).collect();
    let f = field.forward(&mut g, t, hv, &pv)?;
    let fval = g.value(f).data().to_vec();
    let grads = g.backward_with_seed(f, a.to_vec())?;
    let gh = grads.get_or_zero(hv);
    let gp = pv.iter().flat_map(|&v| grads.get_or_zero(v)).collect();
    Ok((fval, gh, gp))
}

/// Continuous adjoint sensitivities. Starts from the terminal state `h1` and
/// seed `dL/dh(t1)`, then integrates the augmented system
/// `(h, a, g)' = (f, −aᵀ∂f/∂h, −aᵀ∂f/∂θ)` from `t1` back to `t0`.
pub fn adjoint_gradients<P: ParamField>(
    field: &P,
    h1: &[f64],
    t0: f64,
    t1: f64,
    dl_dh1: &[f64],
    cfg: &SolverConfig,
) -> Result<SensitivityResult> {
    let d = h1.len();
    if dl_dh1.len() != d {
        return Err(Error::Dimension {
            op: "adjoint seed",
            lhs: vec![d],
            rhs: vec![dl_dh1.len()],
        });
    }
    let np: usize = field.params().iter().map(Tensor::numel).sum();
    let mut y1 = Vec::with_capacity(2 * d + np);
    y1.extend_from_slice(h1);
    y1.extend_from_slice(dl_dh1);
    y1.extend(std::iter::repeat_n(0.0, np));
    let sol = integrate(
        |t, y: &[f64]| {
            let (f, gh, gp) = vjp(field, t, &y[..d], &y[d..2 * d])?;
            let mut out = f;
            out.extend(gh.iter().map(|x| -x));
            out.extend(gp.iter().map(|x| -x));
            Ok(out)
        },
        &y1,
        t1,
        t0,
        cfg,
    )?;
    let y0 = sol.h1;
    Ok(SensitivityResult {
        endpoint: y0[..d].to_vec(),
        dl_dh0: y0[d..2 * d].to_vec(),
        dl_dtheta: y0[2 * d..].to_vec(),
    })
}

/// Gradients of `L = dL/dh1 · h(t1)` by reverse-mode through the accepted
/// steps of a forward solve from `h0`.
pub fn backprop_gradients<P: ParamField>(
    field: &P,
    h0: &[f64],
    t0: f64,
    t1: f64,
    dl_dh1: &[f64],
    cfg: &SolverConfig,
) -> Result<SensitivityResult> {
    let mut g = Graph::new();
    let hv = g.param(Tensor::row(h0.to_vec()));
    let pv: Vec<Var> = field.params().iter().map(|p| g.param(p.clone())).collect();
    let sol = integrate_graph(&mut g, |g, t, h| field.forward(g, t, h, &pv), hv, t0, t1, cfg)?;
    let h1 = g.value(sol.h1).data().to_vec();
    let grads = g.backward_with_seed(sol.h1, dl_dh1.to_vec())?;
    Ok(SensitivityResult {
        endpoint: h1,
        dl_dh0: grads.get_or_zero(hv),
        dl_dtheta: pv.iter().flat_map(|&v| grads.get_or_zero(v)).collect(),
    })
}
