//! Criteria that need no training: autodiff, ODE solver, flows, spline and
//! metrics.

use std::f64::consts::{E, PI};
use std::time::Instant;

use rand::Rng;
use trajflow::data::{slice_windows, synthesize_dataset, Pipeline, Point, PreprocessConfig, SlicingConfig, SynthSpec};
use trajflow::diffcore::check::check_gradients;
use trajflow::diffcore::nn::ParamStore;
use trajflow::diffcore::{Graph, Tensor, Var};
use trajflow::encoders::EncoderKind;
use trajflow::flows::{Cnf, ConditionValues, Dnf, Flow, FlowKind, Mode, Probes, StatUpdates, TraceMode};
use trajflow::metrics::{crps_empirical, min_ade, min_fde, rmse, SampleSet};
use trajflow::model::{FlowModel, Formulation, ModelConfig};
use trajflow::odeint::{adjoint_gradients, backprop_gradients, integrate, integrate_fixed, ParamField, SolverConfig};
use trajflow::spline::{fit_natural_cubic, solve_tridiagonal};
use trajflow::Result;

use super::support::{dense_solve, fd_jacobian, random, randomize, rel_norm, rng};
use super::Report;

// ------------------------------------------------------------ criterion 1

/// Reduce any output to a scalar through a fixed random projection.
fn project(g: &mut Graph, out: Var) -> Result<Var> {
    let v = g.value(out).clone();
    let mut r = rng(99);
    let w: Vec<f64> = (0..v.numel()).map(|_| r.random_range(-1.0..1.0)).collect();
    let w = g.constant(Tensor::new(v.shape().to_vec(), w)?);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

type Primitive = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn primitives() -> Vec<(&'static str, Vec<Tensor>, Primitive)> {
    let mut r = rng(2024);
    let mut m = |rows, cols| random(&mut r, rows, cols, -2.0, 2.0);
    let (a, b, k, row, col) = (m(3, 4), m(3, 4), m(4, 2), m(1, 4), m(3, 1));
    let (mat12, vec4) = (m(3, 12), m(3, 4));
    let pos = random(&mut rng(7), 3, 4, 0.1, 2.0);
    let sc = Tensor::scalar(0.7);
    vec![
        ("matmul", vec![a.clone(), k], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("add", vec![a.clone(), b.clone()], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![a.clone(), b.clone()], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("mul row broadcast", vec![a.clone(), row], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("sub column broadcast", vec![a.clone(), col], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul scalar broadcast", vec![a.clone(), sc], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("neg", vec![a.clone()], Box::new(|g, v| Ok(g.neg(v[0])))),
        ("exp", vec![a.clone()], Box::new(|g, v| Ok(g.exp(v[0])))),
        ("log", vec![pos.clone()], Box::new(|g, v| g.log(v[0]))),
        ("sqrt", vec![pos.clone()], Box::new(|g, v| g.sqrt(v[0]))),
        ("recip", vec![pos], Box::new(|g, v| g.recip(v[0]))),
        ("tanh", vec![a.clone()], Box::new(|g, v| Ok(g.tanh(v[0])))),
        ("sigmoid", vec![a.clone()], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("square", vec![a.clone()], Box::new(|g, v| Ok(g.square(v[0])))),
        ("scale", vec![a.clone()], Box::new(|g, v| Ok(g.scale(v[0], -1.3)))),
        ("offset", vec![a.clone()], Box::new(|g, v| Ok(g.offset(v[0], 0.4)))),
        (
            "lincomb",
            vec![a.clone(), b.clone()],
            Box::new(|g, v| g.lincomb(&[(0.5, v[0]), (-2.0, v[1]), (1.0, v[0])])),
        ),
        ("sum", vec![a.clone()], Box::new(|g, v| Ok(g.sum(v[0])))),
        ("mean", vec![a.clone()], Box::new(|g, v| Ok(g.mean(v[0])))),
        ("sum_cols", vec![a.clone()], Box::new(|g, v| Ok(g.sum_cols(v[0])))),
        ("sum_rows", vec![a.clone()], Box::new(|g, v| Ok(g.sum_rows(v[0])))),
        ("concat", vec![a.clone(), b], Box::new(|g, v| g.concat(&[v[0], v[1], v[0]]))),
        ("slice_cols", vec![a.clone()], Box::new(|g, v| g.slice_cols(v[0], 1, 2))),
        ("gather_rows", vec![a.clone()], Box::new(|g, v| g.gather_rows(v[0], &[2, 0, 2, 1]))),
        ("row_matvec", vec![mat12, vec4], Box::new(|g, v| g.row_matvec(v[0], v[1]))),
        ("reshape", vec![a], Box::new(|g, v| g.reshape(v[0], vec![2, 6]))),
    ]
}

fn hidden4(encoder: EncoderKind, flow: FlowKind, formulation: Formulation) -> ModelConfig {
    ModelConfig {
        encoder,
        flow,
        formulation,
        horizon: 3,
        hidden_dim: 4,
        cde_width: 4,
        coupling_layers: 2,
        coupling_hidden: 4,
        cnf_hidden: 4,
        cnf_depth: 2,
        solver: SolverConfig::with_tol(1e-8),
        ..ModelConfig::default()
    }
}

/// Train-mode loss with fixed probe draws and its tape gradients.
fn train_loss(model: &FlowModel, ws: &[&trajflow::data::TrajectoryWindow], trace: TraceMode) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let mut updates = StatUpdates::new();
    let loss = model.nll_loss(&mut g, &p, ws, &mut Mode::Train(&mut updates), trace, &mut rng(99))?;
    let grads = g.backward(loss)?;
    let per = p.vars().iter().map(|&v| grads.get_or_zero(v)).collect();
    Ok((g.value(loss).item(), per))
}

/// Norm-wise relative error of every trainable parameter's gradient.
fn model_gradient_error(model: &mut FlowModel, ws: &[&trajflow::data::TrajectoryWindow], trace: TraceMode) -> Result<f64> {
    let (_, analytic) = train_loss(model, ws, trace)?;
    let eps = 1e-5;
    let (mut diff2, mut norm2) = (0.0, 0.0);
    for i in 0..model.store.len() {
        if !model.store.entries()[i].trainable {
            continue;
        }
        for j in 0..model.store.entries()[i].value.numel() {
            let x = model.store.entries()[i].value.data()[j];
            model.store.entries_mut()[i].value.data_mut()[j] = x + eps;
            let plus = train_loss(model, ws, trace)?.0;
            model.store.entries_mut()[i].value.data_mut()[j] = x - eps;
            let minus = train_loss(model, ws, trace)?.0;
            model.store.entries_mut()[i].value.data_mut()[j] = x;
            let fd = (plus - minus) / (2.0 * eps);
            diff2 += (fd - analytic[i][j]).powi(2);
            norm2 += analytic[i][j].powi(2);
        }
    }
    Ok((diff2 / norm2).sqrt())
}

pub fn autodiff(report: &mut Report) -> Result<()> {
    let start = Instant::now();
    let mut worst: (f64, &str) = (0.0, "");
    for (name, inputs, f) in primitives() {
        let r = check_gradients(&inputs, 1e-5, |g, v| {
            let out = f(g, v)?;
            project(g, out)
        })?;
        let e = r.max_rel_error();
        if e > worst.0 {
            worst = (e, name);
        }
        if e > 1e-4 {
            report.check(format!("primitive {name}"), false, format!("relative error {e:.2e} > 1e-4"));
        }
    }
    report.check(
        "27 primitives",
        worst.0 <= 1e-4,
        format!("worst relative error {:.2e} ({}) <= 1e-4", worst.0, worst.1),
    );

    let records = synthesize_dataset(&SynthSpec::constant_velocity(2), 6)?;
    let slicing = SlicingConfig {
        pred_len: 3,
        step: 4,
        ..SlicingConfig::default()
    };
    let ws = slice_windows(&records, &slicing)?;
    let ws = Pipeline::fit(PreprocessConfig::default(), &ws)?.apply_all(ws)?;
    let refs: Vec<_> = ws.iter().take(3).collect();
    for enc in [EncoderKind::Gru, EncoderKind::Cde] {
        for (flow, form, trace) in [
            (FlowKind::Dnf, Formulation::Marginal, TraceMode::Exact),
            (FlowKind::Cnf, Formulation::Marginal, TraceMode::Exact),
            (FlowKind::Dnf, Formulation::Joint, TraceMode::Exact),
            (FlowKind::Cnf, Formulation::Joint, TraceMode::Hutchinson { probes: 1 }),
        ] {
            let t = Instant::now();
            let mut model = FlowModel::new(hidden4(enc, flow, form), 13)?;
            randomize(&mut model.store, &mut rng(14), 0.5);
            let e = model_gradient_error(&mut model, &refs, trace)?;
            report.check(
                format!("{enc:?}-{flow:?} {form:?} hidden 4"),
                e <= 1e-3,
                format!("relative error {e:.2e} <= 1e-3 over every parameter ({:.1} s)", t.elapsed().as_secs_f64()),
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report.check("runtime", secs < 60.0, format!("{secs:.1} s < 60 s"));
    Ok(())
}

// ------------------------------------------------------------ criterion 2

/// `dh/dt = tanh(h·W1 + b1)·W2 + b2 + 0.3·sin(t)` on a 4-D state.
struct MlpField {
    params: Vec<Tensor>,
}

impl ParamField for MlpField {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn forward(&self, g: &mut Graph, t: f64, h: Var, p: &[Var]) -> Result<Var> {
        let a = g.matmul(h, p[0])?;
        let a = g.add(a, p[1])?;
        let a = g.tanh(a);
        let o = g.matmul(a, p[2])?;
        let o = g.add(o, p[3])?;
        Ok(g.offset(o, 0.3 * t.sin()))
    }
}

pub fn ode_solver(report: &mut Report) -> Result<()> {
    let cfg = SolverConfig::with_tol(1e-5);
    let exp = integrate(|_, h| Ok(h.to_vec()), &[1.0], 0.0, 1.0, &cfg)?;
    let err = (exp.h1[0] - E).abs();
    report.check(
        "exponential dh/dt = h on [0, 1]",
        err <= 1e-6,
        format!("|h(1) − e| = {err:.2e} <= 1e-6 at rtol = atol = 1e-5 ({} steps)", exp.steps.len()),
    );
    let rot = integrate(|_, h| Ok(vec![-h[1], h[0]]), &[1.0, 0.0], 0.0, 2.0 * PI, &cfg)?;
    let err = (rot.h1[0] - 1.0).abs().max(rot.h1[1].abs());
    report.check(
        "rotation over one period",
        err <= 1e-6,
        format!("max error {err:.2e} <= 1e-6 at rtol = atol = 1e-5 ({} steps)", rot.steps.len()),
    );

    let field = |t: f64, h: &[f64]| Ok(vec![-h[1] + 0.2 * t, h[0] - 0.1 * h[1]]);
    let mut r = rng(21);
    let mut worst = 0.0f64;
    for _ in 0..32 {
        let (tm, a, b) = (r.random_range(0.05..0.95), r.random_range(-1.5..1.5), r.random_range(-1.5..1.5));
        let full = integrate(field, &[a, b], 0.0, 1.0, &cfg)?;
        let first = integrate(field, &[a, b], 0.0, tm, &cfg)?;
        let second = integrate(field, &first.h1, tm, 1.0, &cfg)?;
        for i in 0..2 {
            let tol = 10.0 * (cfg.atol + cfg.rtol * full.h1[i].abs());
            worst = worst.max((full.h1[i] - second.h1[i]).abs() / tol);
        }
    }
    report.check(
        "interval additivity",
        worst <= 1.0,
        format!("worst gap {worst:.3} of 10·(atol + rtol·|h|) over 32 splits"),
    );

    let errs: Vec<f64> = [4, 8, 16]
        .iter()
        .map(|&n| integrate_fixed(|_, h| Ok(h.to_vec()), &[1.0], 0.0, 1.0, n).map(|h| (h[0] - E).abs()))
        .collect::<Result<_>>()?;
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    report.check(
        "order of convergence",
        orders.iter().all(|p| (4.5..=5.5).contains(p)),
        format!("observed orders {:.2}, {:.2} within 5 ± 0.5", orders[0], orders[1]),
    );

    let mut r = rng(11);
    let mut draw = |rows: usize, cols: usize| random(&mut r, rows, cols, -0.7, 0.7);
    let mlp = MlpField {
        params: vec![draw(4, 8), draw(1, 8), draw(8, 4), draw(1, 4)],
    };
    let (h0, seed) = ([0.5, -0.4, 0.3, 0.9], [1.0, -2.0, 0.5, 0.25]);
    let bp = backprop_gradients(&mlp, &h0, 0.0, 1.0, &seed, &cfg)?;
    let adj = adjoint_gradients(&mlp, &bp.endpoint, 0.0, 1.0, &seed, &cfg)?;
    let (eh, et) = (rel_norm(&adj.dl_dh0, &bp.dl_dh0), rel_norm(&adj.dl_dtheta, &bp.dl_dtheta));
    report.check(
        "adjoint vs step backprop",
        eh <= 1e-3 && et <= 1e-3,
        format!("relative error {eh:.2e} (state), {et:.2e} (parameters) <= 1e-3"),
    );
    Ok(())
}

// ------------------------------------------------------------ criterion 3

pub fn flow_correctness(report: &mut Report) -> Result<()> {
    let mut r = rng(31);
    let cfg = SolverConfig::with_tol(1e-5);

    let mut store = ParamStore::new();
    let dnf = Flow::Discrete(Dnf::new(&mut store, "dnf", 2, 4, 8, 8, &mut r));
    randomize(&mut store, &mut r, 0.5);
    let rows = 256;
    let z = random(&mut r, rows, 2, -3.0, 3.0);
    let zeta = random(&mut r, rows, 3, -1.0, 1.0);
    let step = random(&mut r, rows, 1, 0.05, 1.0);
    let cond = ConditionValues {
        zeta: &zeta,
        step: Some(&step),
    };
    let u = dnf.inverse_values(&store, &z, cond, &cfg)?;
    let (back, _) = dnf.forward_values(&store, &u, cond, &cfg)?;
    let err = back.max_abs_diff(&z);
    report.check("DNF round trip", err <= 1e-10, format!("max error {err:.2e} <= 1e-10 over {rows} rows"));

    let mut worst = 0.0f64;
    for i in 0..10 {
        let x = random(&mut r, 1, 2, -2.0, 2.0);
        let zr = Tensor::row(zeta.row_slice(i).to_vec());
        let sr = Tensor::row(step.row_slice(i).to_vec());
        let c = ConditionValues {
            zeta: &zr,
            step: Some(&sr),
        };
        let (_, ld) = dnf.forward_values(&store, &x, c, &cfg)?;
        let fwd = |v: &[f64]| {
            dnf.forward_values(&store, &Tensor::row(v.to_vec()), c, &cfg)
                .expect("forward")
                .0
                .into_data()
        };
        let (_, det) = dense_solve(fd_jacobian(fwd, x.data(), 1e-6), vec![0.0; 2]);
        worst = worst.max((det.abs().ln() - ld[0]).abs());
    }
    report.check(
        "DNF log-det vs finite-difference Jacobian",
        worst <= 1e-5,
        format!("max deviation {worst:.2e} <= 1e-5 over 10 points"),
    );

    let mut store = ParamStore::new();
    let cnf = Cnf::new(&mut store, "cnf", 2, 3, true, 16, 3, &mut r);
    randomize(&mut store, &mut r, 0.5);
    let n = 32;
    let x = random(&mut r, n, 2, -2.0, 2.0);
    let zeta_n = Tensor::from_rows(&vec![vec![0.2, -0.5, 0.9]; n])?;
    let step_n = Tensor::full(&[n, 1], 0.5);
    let (zc, _) = cnf.forward_values(&store, &x, &zeta_n, Some(&step_n), &cfg)?;
    let back = cnf.inverse_values(&store, &zc, &zeta_n, Some(&step_n), &cfg)?;
    let moved = zc.max_abs_diff(&x);
    let err = back.max_abs_diff(&x);
    report.check(
        "CNF round trip at tol 1e-5",
        err <= 1e-3 && moved > 1e-2,
        format!("max error {err:.2e} <= 1e-3 (flow moves points by {moved:.2})"),
    );

    let trace = |x: &Tensor, kind: TraceMode, r: &mut rand_chacha::ChaCha8Rng| -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let rows = x.rows();
        let zeta = g.constant(Tensor::zeros(&[rows, 3]));
        let s = g.constant(Tensor::full(&[rows, 1], 0.5));
        let conds = cnf.field.condition(&mut g, &p, zeta, Some(s))?;
        let xv = g.constant(x.clone());
        let probes = Probes::new(&mut g, kind, rows, 2, r);
        let (_, tr) = cnf.field.eval_with_trace(&mut g, &p, &conds, 0.3, xv, &probes)?;
        Ok(g.value(tr).data().to_vec())
    };
    let point = Tensor::row(vec![0.3, -0.8]);
    let exact = trace(&point, TraceMode::Exact, &mut r)?[0];
    let probes = 10_000;
    let many = Tensor::from_rows(&vec![point.data().to_vec(); probes])?;
    let est = trace(&many, TraceMode::Hutchinson { probes: 1 }, &mut r)?;
    let mean = est.iter().sum::<f64>() / probes as f64;
    let var = est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (probes - 1) as f64;
    let se = (var / probes as f64).sqrt();
    report.check(
        "Hutchinson unbiasedness",
        se > 0.0 && (mean - exact).abs() <= 3.0 * se,
        format!("mean {mean:.5} vs exact {exact:.5}, |Δ| = {:.2} SE over 10⁴ probes", (mean - exact).abs() / se),
    );
    Ok(())
}

// ------------------------------------------------------------ criterion 5

pub fn spline(report: &mut Report) -> Result<()> {
    let mut r = rng(51);
    let (mut knot, mut c1, mut c2) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..64 {
        let m = r.random_range(2..12);
        let mut times = vec![0.0];
        for _ in 1..m {
            times.push(times.last().unwrap() + r.random_range(0.2..2.0));
        }
        let values: Vec<Vec<f64>> = (0..m).map(|_| (0..3).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
        let s = fit_natural_cubic(&values, &times)?;
        for (t, v) in times.iter().zip(&values) {
            for (a, b) in s.eval(*t)?.iter().zip(v) {
                knot = knot.max((a - b).abs());
            }
        }
        for i in 1..m - 1 {
            let (d1l, d2l) = s.derivatives_on_piece(i - 1, 1.0);
            let (d1r, d2r) = s.derivatives_on_piece(i, 0.0);
            for ch in 0..3 {
                c1 = c1.max((d1l[ch] - d1r[ch]).abs());
                c2 = c2.max((d2l[ch] - d2r[ch]).abs());
            }
        }
    }
    report.check("knot interpolation", knot <= 1e-10, format!("max residual {knot:.2e} <= 1e-10 over 64 random splines"));
    report.check(
        "C¹ and C² continuity",
        c1 <= 1e-9 && c2 <= 1e-9,
        format!("max jumps {c1:.2e} (first), {c2:.2e} (second) <= 1e-9"),
    );

    let mut worst = 0.0f64;
    for n in 1..20 {
        let sub: Vec<f64> = (0..n - 1).map(|_| r.random_range(-1.0..1.0)).collect();
        let sup: Vec<f64> = (0..n - 1).map(|_| r.random_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|_| 3.0 + r.random_range(-1.0..1.0)).collect();
        let rhs: Vec<f64> = (0..n).map(|_| r.random_range(-4.0..4.0)).collect();
        let x = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = diag[i];
            if i + 1 < n {
                a[i][i + 1] = sup[i];
                a[i + 1][i] = sub[i];
            }
        }
        let (y, _) = dense_solve(a, rhs);
        worst = worst.max(x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
    }
    report.check(
        "tridiagonal vs dense solve",
        worst <= 1e-12,
        format!("max difference {worst:.2e} <= 1e-12 for n = 1..19"),
    );

    let s = fit_natural_cubic(&[vec![0.0], vec![1.0], vec![0.0]], &[0.0, 1.0, 2.0])?;
    let d = [s.knot_derivative(0)[0], s.knot_derivative(1)[0], s.knot_derivative(2)[0]];
    report.check("three-knot fixture", d == [1.5, 0.0, -1.5], format!("D = {d:?}, expected [1.5, 0.0, -1.5] exactly"));
    Ok(())
}

// ------------------------------------------------------------ criterion 6

/// `∫ (F̂(t) − 1{t ≥ y})² dt`, exact between breakpoints.
fn crps_integral(samples: &[f64], y: f64) -> f64 {
    let n = samples.len() as f64;
    let mut pts = samples.to_vec();
    pts.push(y);
    pts.sort_by(f64::total_cmp);
    let cdf = |t: f64| samples.iter().filter(|&&x| x <= t).count() as f64 / n;
    pts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let h = if mid >= y { 1.0 } else { 0.0 };
            (cdf(mid) - h).powi(2) * (w[1] - w[0])
        })
        .sum()
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn metrics(report: &mut Report) -> Result<()> {
    let mut r = rng(61);
    let mut mismatches = 0;
    let fixtures = 200;
    for _ in 0..fixtures {
        let (n, horizon) = (r.random_range(1..12), r.random_range(1..13));
        let mut pt = || [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)];
        let truth: Vec<Point> = (0..horizon).map(|_| pt()).collect();
        let samples: Vec<Vec<Point>> = (0..n).map(|_| (0..horizon).map(|_| pt()).collect()).collect();
        let set = SampleSet::new(samples.clone(), truth.clone())?;
        let mut ade = f64::INFINITY;
        let mut fde = f64::INFINITY;
        let (mut sq, mut count) = (0.0, 0.0);
        for s in &samples {
            let mut tot = 0.0;
            for i in 0..horizon {
                tot += dist(s[i], truth[i]);
                sq += (s[i][0] - truth[i][0]).powi(2) + (s[i][1] - truth[i][1]).powi(2);
                count += 1.0;
            }
            ade = ade.min(tot / horizon as f64);
            fde = fde.min(dist(s[horizon - 1], truth[horizon - 1]));
        }
        let brute_rmse = (sq / count).sqrt();
        if min_ade(&set) != ade || min_fde(&set) != fde || rmse(&set) != brute_rmse {
            mismatches += 1;
        }
    }
    report.check(
        "minADE, minFDE, RMSE vs brute force",
        mismatches == 0,
        format!("{mismatches} mismatches over {fixtures} random fixtures"),
    );

    let mut worst = 0.0f64;
    for n in 1..=16 {
        for _ in 0..20 {
            let xs: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
            let y = r.random_range(-12.0..12.0);
            worst = worst.max((crps_empirical(&xs, y)? - crps_integral(&xs, y)).abs());
        }
    }
    report.check(
        "CRPS vs squared-CDF integral",
        worst <= 1e-6,
        format!("max difference {worst:.2e} <= 1e-6 for n = 1..16"),
    );
    let fixture = crps_empirical(&[0.0, 1.0], 0.5)?;
    report.check(
        "CRPS fixture {0, 1} vs 0.5",
        fixture == 0.25 && crps_integral(&[0.0, 1.0], 0.5) == 0.25,
        format!("{fixture}, expected 0.25"),
    );
    Ok(())
}
