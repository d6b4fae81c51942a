//! Criteria that train models on synthetic processes.

use std::time::Instant;

use trajflow::data::{Point, SynthSpec, TrajectoryWindow, TruePredictive};
use trajflow::diffcore::Tensor;
use trajflow::encoders::EncoderKind;
use trajflow::flows::{ConditionValues, FlowKind};
use trajflow::inference::{
    additive_fusion, density_raster, roughness, sample_per_step, top_k_trajectory, GridSpec, OccupancyGrid,
};
use trajflow::model::{train, FlowModel, Formulation, ModelConfig, TrainConfig};
use trajflow::Result;

use super::support::{rng, synthetic_split, Split};
use super::Report;

/// Compact widths shared by every trained check.
fn compact(encoder: EncoderKind, flow: FlowKind, formulation: Formulation) -> ModelConfig {
    ModelConfig {
        encoder,
        flow,
        formulation,
        hidden_dim: 8,
        cde_width: 8,
        coupling_layers: 4,
        coupling_hidden: 16,
        cnf_hidden: 16,
        cnf_depth: 2,
        ..ModelConfig::default()
    }
}

fn fit(config: ModelConfig, split: &Split, training: &TrainConfig) -> Result<FlowModel> {
    let mut model = FlowModel::new(config, 0)?;
    model.pipeline = split.pipeline.clone();
    train(&mut model, &split.train, training)?;
    Ok(model)
}

fn label(c: &ModelConfig) -> String {
    format!("{:?}-{:?}", c.encoder, c.flow)
}

// ------------------------------------------------------------ criterion 4

/// World-space bounding box of the image of the latent square `[-6, 6]²`.
fn pushed_box(model: &FlowModel, w: &TrajectoryWindow, s: f64) -> Result<GridSpec> {
    let edge: Vec<f64> = (0..=64)
        .flat_map(|i| {
            let a = -6.0 + 12.0 * i as f64 / 64.0;
            [a, -6.0, a, 6.0, -6.0, a, 6.0, a]
        })
        .collect();
    let n = edge.len() / 2;
    let z = Tensor::matrix(n, 2, edge)?;
    let zeta = model.embed(&[w])?;
    let zeta = Tensor::from_rows(&vec![zeta.row_slice(0).to_vec(); n])?;
    let step = Tensor::full(&[n, 1], s / model.horizon() as f64);
    let cond = ConditionValues {
        zeta: &zeta,
        step: Some(&step),
    };
    let u = model.flow.inverse_values(&model.store, &z, cond, &model.config.solver)?;
    let pts: Vec<Point> = (0..n).map(|r| w.preprocess.to_world([u.get(r, 0), u.get(r, 1)])).collect();
    let lo = |ax: usize| pts.iter().map(|p| p[ax]).fold(f64::INFINITY, f64::min);
    let hi = |ax: usize| pts.iter().map(|p| p[ax]).fold(f64::NEG_INFINITY, f64::max);
    Ok(GridSpec {
        x_min: lo(0),
        x_max: hi(0),
        y_min: lo(1),
        y_max: hi(1),
        resolution: 300,
    })
}

pub fn density_normalization(report: &mut Report) -> Result<()> {
    let start = Instant::now();
    let split = synthetic_split(SynthSpec::constant_velocity(500), 4)?;
    let training = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    for flow in [FlowKind::Dnf, FlowKind::Cnf] {
        let model = fit(compact(EncoderKind::Gru, flow, Formulation::Marginal), &split, &training)?;
        for w in split.test.iter().take(2) {
            for s in [1.0, 12.0] {
                let spec = pushed_box(&model, w, s)?;
                let mass = density_raster(&model, w, s, &spec)?.mass();
                report.check(
                    format!("trained {} window {} s = {s}", label(&model.config), w.agent_id),
                    (mass - 1.0).abs() <= 0.02,
                    format!(
                        "mass {mass:.5} over 300² cells, box {:.2}×{:.2} m",
                        spec.x_max - spec.x_min,
                        spec.y_max - spec.y_min
                    ),
                );
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report.check("runtime", secs < 300.0, format!("{secs:.1} s < 300 s including training"));
    Ok(())
}

// ------------------------------------------------------------ criterion 7

pub fn synthetic_end_to_end(report: &mut Report) -> Result<()> {
    let split = synthetic_split(SynthSpec::constant_velocity(2000), 0)?;
    let truth: Vec<TruePredictive> = split
        .test_raw
        .iter()
        .map(|w| TruePredictive::constant_velocity(&split.spec, &w.obs, 12))
        .collect::<Result<_>>()?;
    let true_nll = split
        .test_raw
        .iter()
        .zip(&truth)
        .map(|(w, tp)| tp.nll(&w.future).iter().sum::<f64>() / 12.0)
        .sum::<f64>()
        / truth.len() as f64;
    let training = TrainConfig {
        epochs: 400,
        lr_decay: 0.995,
        ..TrainConfig::default()
    };
    let test: Vec<&TrajectoryWindow> = split.test.iter().collect();
    for encoder in [EncoderKind::Gru, EncoderKind::Cde] {
        for flow in [FlowKind::Dnf, FlowKind::Cnf] {
            let config = compact(encoder, flow, Formulation::Marginal);
            let name = label(&config);
            let start = Instant::now();
            let model = fit(config, &split, &training)?;
            let secs = start.elapsed().as_secs_f64();
            let nll = model.nll(&test)?;
            report.check(
                format!("{name} NLL"),
                (nll - true_nll).abs() <= 0.3 && secs < 1800.0,
                format!(
                    "held-out {nll:.4} vs true predictive {true_nll:.4} (gap {:.4} <= 0.3), trained in {secs:.0} s < 1800 s",
                    nll - true_nll
                ),
            );

            let mut r = rng(70);
            let mut within = 0;
            let mut worst = 0.0f64;
            let mut square_sum = 0.0;
            let windows = 10;
            for (w, tp) in split.test.iter().zip(&truth).take(windows) {
                let draws = model.sample_future(w, 12.0, 100, &mut r)?;
                let sd = tp.var[11].sqrt();
                let tol = 3.0 * sd / 10.0;
                let devs: Vec<f64> = (0..2)
                    .map(|ax| (draws.iter().map(|p| p[ax]).sum::<f64>() / 100.0 - tp.mean[11][ax]).abs())
                    .collect();
                square_sum += devs.iter().map(|d| (d / sd).powi(2)).sum::<f64>();
                let dev = devs.iter().copied().fold(0.0, f64::max);
                worst = worst.max(dev / tol);
                within += usize::from(dev <= tol);
            }
            let rms = (square_sum / (2 * windows) as f64).sqrt();
            report.check(
                format!("{name} sample mean at s = 12"),
                within == windows,
                format!(
                    "{within}/{windows} windows within 3σ/√100 per coordinate (worst {worst:.2} of tolerance, RMS offset {rms:.2}σ)"
                ),
            );

            let (mut rough1, mut rough20) = (0.0, 0.0);
            let trials = 100;
            for t in 0..trials {
                let w = &split.test[t % split.test.len()];
                rough1 += roughness(&top_k_trajectory(&model, w, 1, &mut r)?.path);
                rough20 += roughness(&top_k_trajectory(&model, w, 20, &mut r)?.path);
            }
            let (rough1, rough20) = (rough1 / trials as f64, rough20 / trials as f64);
            report.check(
                format!("{name} top-k roughness"),
                rough20 < rough1,
                format!("k = 20: {rough20:.4} < k = 1: {rough1:.4} over {trials} trials"),
            );
        }
    }
    Ok(())
}

// ------------------------------------------------------------ criterion 8

/// Noise-free continuation after the last observation in the model frame,
/// turning with `sign`.
fn branch(spec: &SynthSpec, sign: f64) -> Vec<Point> {
    let trajflow::data::Process::TwoModeTurn { speed, turn_rate, .. } = spec.process else {
        unreachable!("two-mode process");
    };
    let mut p = [0.0, 0.0];
    (1..=12)
        .map(|k| {
            let h = sign * turn_rate * k as f64;
            p = [p[0] + speed * spec.frame_period * h.cos(), p[1] + speed * spec.frame_period * h.sin()];
            p
        })
        .collect()
}

/// Highest fused value within `radius` of the branch points that sit at
/// least 1 m off the straight line.
fn ridge(grid: &OccupancyGrid, w: &TrajectoryWindow, path: &[Point], radius: f64) -> f64 {
    let mut best = 0.0f64;
    for p in path.iter().filter(|p| p[1].abs() >= 1.0) {
        let c = w.preprocess.to_world(*p);
        for (i, q) in grid.spec.centers().iter().enumerate() {
            if (q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2) <= radius * radius {
                best = best.max(grid.values[i]);
            }
        }
    }
    best
}

/// Lateral offset in metres beyond which a path counts as committed to a side.
const LATERAL: f64 = 0.5;

#[derive(Default)]
struct Modes {
    total: usize,
    switched: usize,
    left: usize,
}

impl Modes {
    /// `path` is in the model frame, heading along +x at the last observation.
    fn add(&mut self, path: &[Point]) {
        let left = path.iter().any(|p| p[1] > LATERAL);
        let right = path.iter().any(|p| p[1] < -LATERAL);
        self.total += 1;
        self.switched += usize::from(left && right);
        self.left += usize::from(left && !right);
    }

    fn consistent_share(&self) -> f64 {
        (self.total - self.switched) as f64 / self.total as f64
    }
}

pub fn marginal_vs_joint(report: &mut Report) -> Result<()> {
    let split = synthetic_split(SynthSpec::two_mode_turn(2000), 8)?;
    let training = TrainConfig {
        epochs: 200,
        lr_decay: 0.995,
        ..TrainConfig::default()
    };
    let joint_config = ModelConfig {
        coupling_layers: 8,
        coupling_hidden: 32,
        hidden_dim: 16,
        ..compact(EncoderKind::Gru, FlowKind::Dnf, Formulation::Joint)
    };
    let joint = fit(joint_config, &split, &training)?;
    let mut r = rng(80);
    let mut joint_modes = Modes::default();
    for w in split.test.iter().take(40) {
        for path in joint.sample_joint_model(w, 10, &mut r)? {
            joint_modes.add(&path);
        }
    }
    report.check(
        "joint samples stay in one mode",
        joint_modes.consistent_share() >= 0.95,
        format!(
            "{}/{} = {:.1}% without a lateral sign switch beyond ±{LATERAL} m (>= 95%)",
            joint_modes.total - joint_modes.switched,
            joint_modes.total,
            100.0 * joint_modes.consistent_share()
        ),
    );
    let left_share = joint_modes.left as f64 / joint_modes.total as f64;
    report.check(
        "joint samples use both turn directions",
        (0.2..=0.8).contains(&left_share),
        format!("{:.1}% turn left (within 20–80%)", 100.0 * left_share),
    );

    let marginal = fit(compact(EncoderKind::Gru, FlowKind::Dnf, Formulation::Marginal), &split, &training)?;
    let mut marginal_modes = Modes::default();
    for w in split.test.iter().take(40) {
        for _ in 0..10 {
            let path: Vec<Point> = sample_per_step(&marginal, w, &mut r)?
                .into_iter()
                .map(|p| w.preprocess.to_model(p))
                .collect();
            marginal_modes.add(&path);
        }
    }
    report.check(
        "per-step marginal samples switch modes more often",
        marginal_modes.consistent_share() < joint_modes.consistent_share(),
        format!(
            "{:.1}% of independent per-step marginal paths stay in one mode vs {:.1}% joint",
            100.0 * marginal_modes.consistent_share(),
            100.0 * joint_modes.consistent_share()
        ),
    );
    let (left, right) = (branch(&split.spec, 1.0), branch(&split.spec, -1.0));
    let windows = 5;
    let mut covered = 0;
    let mut weakest = f64::INFINITY;
    for w in split.test.iter().take(windows) {
        let spec = GridSpec::centered(w.preprocess.to_world(w.last_obs()), 6.0, 120);
        let grid = additive_fusion(&marginal, w, 10, &spec)?;
        let (l, rt) = (ridge(&grid, w, &left, 0.3), ridge(&grid, w, &right, 0.3));
        weakest = weakest.min(l.min(rt));
        covered += usize::from(l >= 0.1 * grid.max() && rt >= 0.1 * grid.max());
    }
    report.check(
        "marginal fused grid covers both branches",
        covered == windows,
        format!("{covered}/{windows} windows with both ridges >= 0.1 of max (weakest ridge {weakest:.3})"),
    );
    Ok(())
}
