//! Synthetic trajectory processes with known ground truth.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Point, TrajectoryRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Process {
    /// `p(t) = p₀ + v·t + ε` with `p₀ ~ N(0, σ_p² I)` and `v ~ N(0, σ_v² I)`.
    ConstantVelocity { position_std: f64, speed_std: f64 },
    /// Straight motion at `speed` with a uniformly random heading, then a
    /// constant-rate turn left or right (equal odds) from frame `turn_after`.
    TwoModeTurn { speed: f64, turn_rate: f64, turn_after: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub process: Process,
    pub agents: usize,
    pub length: usize,
    pub frame_period: f64,
    /// Standard deviation of the isotropic position noise on every frame.
    pub noise: f64,
}

impl SynthSpec {
    /// Constant-velocity agents of length 20 sampled every 0.4 s.
    pub fn constant_velocity(agents: usize) -> Self {
        SynthSpec {
            process: Process::ConstantVelocity {
                position_std: 5.0,
                speed_std: 1.0,
            },
            agents,
            length: 20,
            frame_period: 0.4,
            noise: 0.1,
        }
    }

    pub fn two_mode_turn(agents: usize) -> Self {
        SynthSpec {
            process: Process::TwoModeTurn {
                speed: 1.5,
                turn_rate: 0.3,
                turn_after: 8,
            },
            agents,
            length: 20,
            frame_period: 0.4,
            noise: 0.05,
        }
    }
}

pub fn synthesize_dataset(spec: &SynthSpec, seed: u64) -> Result<Vec<TrajectoryRecord>> {
    if !(spec.noise >= 0.0 && spec.frame_period > 0.0) || spec.length < 2 {
        return Err(Error::contract("synthetic spec needs noise >= 0, frame_period > 0, length >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gauss = |rng: &mut ChaCha8Rng| std_normal.sample(rng);
    let dt = spec.frame_period;
    let mut out = Vec::with_capacity(spec.agents);
    for a in 0..spec.agents {
        let clean: Vec<Point> = match spec.process {
            Process::ConstantVelocity { position_std, speed_std } => {
                let p0 = [position_std * gauss(&mut rng), position_std * gauss(&mut rng)];
                let v = [speed_std * gauss(&mut rng), speed_std * gauss(&mut rng)];
                (0..spec.length)
                    .map(|k| {
                        let t = k as f64 * dt;
                        [p0[0] + v[0] * t, p0[1] + v[1] * t]
                    })
                    .collect()
            }
            Process::TwoModeTurn { speed, turn_rate, turn_after } => {
                let mut heading = rng.random_range(-PI..PI);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = [0.0, 0.0];
                let mut pts = Vec::with_capacity(spec.length);
                for k in 0..spec.length {
                    pts.push(p);
                    if k + 1 >= turn_after {
                        heading += sign * turn_rate;
                    }
                    p = [p[0] + speed * dt * heading.cos(), p[1] + speed * dt * heading.sin()];
                }
                pts
            }
        };
        let positions = clean
            .into_iter()
            .map(|p| [p[0] + spec.noise * gauss(&mut rng), p[1] + spec.noise * gauss(&mut rng)])
            .collect();
        out.push(TrajectoryRecord {
            scene_id: "synthetic".into(),
            agent_id: a.to_string(),
            frames: (0..spec.length as i64).collect(),
            positions,
            frame_period: dt,
        });
    }
    Ok(out)
}

/// Exact posterior predictive of the constant-velocity process for a window
/// that starts at the first frame of its track. Isotropic per step.
#[derive(Clone, Debug, PartialEq)]
pub struct TruePredictive {
    pub mean: Vec<Point>,
    pub var: Vec<f64>,
}

impl TruePredictive {
    /// Bayesian linear regression of each coordinate on `[1, t]`.
    pub fn constant_velocity(spec: &SynthSpec, obs: &[Point], horizon: usize) -> Result<Self> {
        let Process::ConstantVelocity { position_std, speed_std } = spec.process else {
            return Err(Error::contract("true predictive is only known for the constant-velocity process"));
        };
        if !(spec.noise > 0.0) {
            return Err(Error::contract("true predictive needs positive noise"));
        }
        let dt = spec.frame_period;
        let s2 = spec.noise * spec.noise;
        // posterior precision [[a, b], [b, c]]
        let mut a = 1.0 / (position_std * position_std);
        let mut c = 1.0 / (speed_std * speed_std);
        let mut b = 0.0;
        let mut rhs = [[0.0; 2]; 2];
        for (k, p) in obs.iter().enumerate() {
            let t = k as f64 * dt;
            a += 1.0 / s2;
            b += t / s2;
            c += t * t / s2;
            for ax in 0..2 {
                rhs[ax][0] += p[ax] / s2;
                rhs[ax][1] += t * p[ax] / s2;
            }
        }
        let det = a * c - b * b;
        let cov = [[c / det, -b / det], [-b / det, a / det]];
        let beta: Vec<[f64; 2]> = rhs
            .iter()
            .map(|r| [cov[0][0] * r[0] + cov[0][1] * r[1], cov[1][0] * r[0] + cov[1][1] * r[1]])
            .collect();
        let t_last = obs.len() as f64 - 1.0;
        let (mut mean, mut var) = (Vec::with_capacity(horizon), Vec::with_capacity(horizon));
        for s in 1..=horizon {
            let t = (t_last + s as f64) * dt;
            mean.push([beta[0][0] + beta[0][1] * t, beta[1][0] + beta[1][1] * t]);
            var.push(s2 + cov[0][0] + 2.0 * t * cov[0][1] + t * t * cov[1][1]);
        }
        Ok(TruePredictive { mean, var })
    }

    /// `−log N(uₛ; μₛ, varₛ I)` per step.
    pub fn nll(&self, future: &[Point]) -> Vec<f64> {
        future
            .iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(u, (m, v))| {
                let r2 = (u[0] - m[0]).powi(2) + (u[1] - m[1]).powi(2);
                (2.0 * PI * v).ln() + r2 / (2.0 * v)
            })
            .collect()
    }

    /// Expected per-step NLL under the predictive itself, averaged over steps.
    pub fn expected_nll(&self) -> f64 {
        self.var.iter().map(|v| (2.0 * PI * v).ln() + 1.0).sum::<f64>() / self.var.len() as f64
    }
}
