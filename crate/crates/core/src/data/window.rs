use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transform::Preprocess;
use super::{Feature, Point, TrajectoryRecord};
use crate::encoders::INPUT_DIM;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlicingConfig {
    pub obs_len: usize,
    pub pred_len: usize,
    pub step: usize,
    /// Agents with longer tracks are dropped entirely.
    pub max_trajectory_len: Option<usize>,
    /// When false, windows near the end of a track keep a shorter future of
    /// at least two positions.
    pub require_full: bool,
}

impl Default for SlicingConfig {
    fn default() -> Self {
        SlicingConfig {
            obs_len: 8,
            pred_len: 12,
            step: 1,
            max_trajectory_len: None,
            require_full: true,
        }
    }
}

impl SlicingConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.obs_len < 2 {
            errs.push(format!("slicing.obs_len must be >= 2 (got {})", self.obs_len));
        }
        if self.pred_len < 1 {
            errs.push("slicing.pred_len must be >= 1".into());
        }
        if self.step < 1 {
            errs.push("slicing.step must be >= 1".into());
        }
        errs
    }

    fn min_future(&self) -> usize {
        if self.require_full {
            self.pred_len
        } else {
            self.pred_len.min(2)
        }
    }
}

/// One instance: `T + 1` observed positions with features and the future.
/// Positions are in model coordinates; `preprocess` maps back to the world.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryWindow {
    pub scene_id: String,
    pub agent_id: String,
    pub start_frame: i64,
    pub frame_period: f64,
    pub obs: Vec<Point>,
    pub features: Vec<Feature>,
    pub future: Vec<Point>,
    pub preprocess: Preprocess,
}

impl TrajectoryWindow {
    /// Build from world positions with identity preprocessing.
    pub fn new(
        scene_id: impl Into<String>,
        agent_id: impl Into<String>,
        start_frame: i64,
        frame_period: f64,
        obs: Vec<Point>,
        future: Vec<Point>,
    ) -> Result<Self> {
        if obs.len() < 2 {
            return Err(Error::contract("a window needs at least two observed positions"));
        }
        let features = compute_features(&obs, frame_period);
        Ok(TrajectoryWindow {
            scene_id: scene_id.into(),
            agent_id: agent_id.into(),
            start_frame,
            frame_period,
            obs,
            features,
            future,
            preprocess: Preprocess::default(),
        })
    }

    /// Last observed position `oᵀ`.
    pub fn last_obs(&self) -> Point {
        *self.obs.last().expect("windows are never empty")
    }

    /// Encoder inputs `(x, y, ẋ, ẏ, ẍ, ÿ, θ)` per observed step.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.obs
            .iter()
            .zip(&self.features)
            .map(|(p, f)| {
                let mut v = Vec::with_capacity(INPUT_DIM);
                v.extend_from_slice(p);
                v.extend_from_slice(f);
                v
            })
            .collect()
    }

    pub(crate) fn refresh_features(&mut self) {
        self.features = compute_features(&self.obs, self.frame_period);
    }

    /// Future positions mapped back to world coordinates.
    pub fn future_world(&self) -> Vec<Point> {
        self.future.iter().map(|p| self.preprocess.to_world(*p)).collect()
    }

    pub fn obs_world(&self) -> Vec<Point> {
        self.obs.iter().map(|p| self.preprocess.to_world(*p)).collect()
    }
}

pub fn slice_windows(records: &[TrajectoryRecord], cfg: &SlicingConfig) -> Result<Vec<TrajectoryWindow>> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mut out = Vec::new();
    for rec in records {
        let len = rec.len();
        if cfg.max_trajectory_len.is_some_and(|m| len > m) {
            continue;
        }
        let mut start = 0;
        while start + cfg.obs_len + cfg.min_future() <= len {
            let split = start + cfg.obs_len;
            let end = (split + cfg.pred_len).min(len);
            out.push(TrajectoryWindow::new(
                rec.scene_id.clone(),
                rec.agent_id.clone(),
                rec.frames[start],
                rec.frame_period,
                rec.positions[start..split].to_vec(),
                rec.positions[split..end].to_vec(),
            )?);
            start += cfg.step;
        }
    }
    Ok(out)
}

/// Wrap an angle to `(−π, π]`.
pub(crate) fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Backward-difference velocity and acceleration (forward difference at the
/// first index) and heading `atan2(ẏ, ẋ)`. A zero velocity keeps the
/// previous heading, starting from 0.
pub fn compute_features(obs: &[Point], frame_period: f64) -> Vec<Feature> {
    let n = obs.len();
    if n < 2 {
        return vec![[0.0; 5]; n];
    }
    let diff = |a: Point, b: Point| [(b[0] - a[0]) / frame_period, (b[1] - a[1]) / frame_period];
    let vel: Vec<Point> = (0..n)
        .map(|t| if t == 0 { diff(obs[0], obs[1]) } else { diff(obs[t - 1], obs[t]) })
        .collect();
    let acc: Vec<Point> = (0..n)
        .map(|t| if t == 0 { diff(vel[0], vel[1]) } else { diff(vel[t - 1], vel[t]) })
        .collect();
    let mut heading = 0.0;
    (0..n)
        .map(|t| {
            let [vx, vy] = vel[t];
            if vx != 0.0 || vy != 0.0 {
                heading = wrap_angle(vy.atan2(vx));
            }
            [vx, vy, acc[t][0], acc[t][1], heading]
        })
        .collect()
}

/// Seeded random split; the first `round(train_fraction · n)` shuffled
/// windows train.
pub fn split_windows(
    windows: Vec<TrajectoryWindow>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<TrajectoryWindow>, Vec<TrajectoryWindow>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Range {
            value: train_fraction,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let n = windows.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_fraction * n as f64).round() as usize;
    let mut slots: Vec<Option<TrajectoryWindow>> = windows.into_iter().map(Some).collect();
    let mut take = |ix: &[usize]| ix.iter().map(|&i| slots[i].take().expect("each index once")).collect::<Vec<_>>();
    let train = take(&order[..cut]);
    let test = take(&order[cut..]);
    Ok((train, test))
}
