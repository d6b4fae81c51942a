//! Invertible per-window coordinate transforms and augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::window::TrajectoryWindow;
use super::Point;
use crate::error::{Error, Result};

/// Rotation by `angle` about `pivot`; with `centered` the pivot is also
/// moved to the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub angle: f64,
    pub pivot: Point,
    pub centered: bool,
}

impl Rotation {
    fn apply(&self, p: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (p[0] - self.pivot[0], p[1] - self.pivot[1]);
        let r = [c * dx - s * dy, s * dx + c * dy];
        if self.centered {
            r
        } else {
            [r[0] + self.pivot[0], r[1] + self.pivot[1]]
        }
    }

    fn invert(&self, q: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = if self.centered {
            (q[0], q[1])
        } else {
            (q[0] - self.pivot[0], q[1] - self.pivot[1])
        };
        [c * dx + s * dy + self.pivot[0], -s * dx + c * dy + self.pivot[1]]
    }
}

/// Per-axis bounds for `x′ = (x − min)/(max − min)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxBounds {
    pub min: Point,
    pub max: Point,
}

impl MinMaxBounds {
    fn apply(&self, p: Point) -> Point {
        [
            (p[0] - self.min[0]) / (self.max[0] - self.min[0]),
            (p[1] - self.min[1]) / (self.max[1] - self.min[1]),
        ]
    }

    fn invert(&self, q: Point) -> Point {
        [
            q[0] * (self.max[0] - self.min[0]) + self.min[0],
            q[1] * (self.max[1] - self.min[1]) + self.min[1],
        ]
    }

    /// `log |det ∂x′/∂x|`.
    pub fn log_jacobian(&self) -> f64 {
        -((self.max[0] - self.min[0]) * (self.max[1] - self.min[1])).ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Transform {
    Rotate(Rotation),
    MinMax(MinMaxBounds),
}

/// Ordered world → model transforms applied to a window.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub steps: Vec<Transform>,
}

impl Preprocess {
    pub fn to_model(&self, mut p: Point) -> Point {
        for t in &self.steps {
            p = match t {
                Transform::Rotate(r) => r.apply(p),
                Transform::MinMax(b) => b.apply(p),
            };
        }
        p
    }

    pub fn to_world(&self, mut p: Point) -> Point {
        for t in self.steps.iter().rev() {
            p = match t {
                Transform::Rotate(r) => r.invert(p),
                Transform::MinMax(b) => b.invert(p),
            };
        }
        p
    }

    /// `log |det ∂(model)/∂(world)|` for one position. Adding it to a
    /// model-space log-density gives the world-space value.
    pub fn log_jacobian(&self) -> f64 {
        self.steps
            .iter()
            .map(|t| match t {
                Transform::Rotate(_) => 0.0,
                Transform::MinMax(b) => b.log_jacobian(),
            })
            .sum()
    }

    pub fn rotation(&self) -> Option<&Rotation> {
        self.steps.iter().find_map(|t| match t {
            Transform::Rotate(r) => Some(r),
            _ => None,
        })
    }
}

fn map_positions(w: &mut TrajectoryWindow, f: impl Fn(Point) -> Point) {
    w.obs.iter_mut().for_each(|p| *p = f(*p));
    w.future.iter_mut().for_each(|p| *p = f(*p));
    w.refresh_features();
}

/// Rotate about `oᵀ` so the last observed displacement points along +x.
/// A zero last displacement leaves the orientation unchanged.
pub fn canonical_rotate(mut w: TrajectoryWindow, centered: bool) -> TrajectoryWindow {
    let n = w.obs.len();
    let (prev, last) = (w.obs[n - 2], w.obs[n - 1]);
    let (dx, dy) = (last[0] - prev[0], last[1] - prev[1]);
    let angle = if dx == 0.0 && dy == 0.0 { 0.0 } else { -dy.atan2(dx) };
    let rot = Rotation {
        angle,
        pivot: last,
        centered,
    };
    map_positions(&mut w, |p| rot.apply(p));
    w.preprocess.steps.push(Transform::Rotate(rot));
    w
}

/// Bounds over every observed and future position of `windows`.
pub fn min_max_bounds(windows: &[TrajectoryWindow]) -> Result<MinMaxBounds> {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in windows.iter().flat_map(|w| w.obs.iter().chain(&w.future)) {
        for k in 0..2 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    if !(max[0] > min[0] && max[1] > min[1]) {
        return Err(Error::Degenerate(format!("min-max bounds {min:?}..{max:?} have zero extent")));
    }
    Ok(MinMaxBounds { min, max })
}

impl MinMaxBounds {
    pub fn normalize(&self, mut w: TrajectoryWindow) -> TrajectoryWindow {
        map_positions(&mut w, |p| self.apply(p));
        w.preprocess.steps.push(Transform::MinMax(*self));
        w
    }
}

/// Scale every position's deviation from the window mean by `factor`.
pub fn scale_about_mean(mut w: TrajectoryWindow, factor: f64) -> TrajectoryWindow {
    let n = (w.obs.len() + w.future.len()) as f64;
    let mut mean = [0.0; 2];
    for p in w.obs.iter().chain(&w.future) {
        mean[0] += p[0] / n;
        mean[1] += p[1] / n;
    }
    map_positions(&mut w, |p| {
        [mean[0] + factor * (p[0] - mean[0]), mean[1] + factor * (p[1] - mean[1])]
    });
    w
}

/// Random rescaling about the window mean with a factor drawn from `range`.
pub fn scale_augment(w: TrajectoryWindow, range: (f64, f64), rng: &mut impl Rng) -> TrajectoryWindow {
    let factor = rng.random_range(range.0..=range.1);
    scale_about_mean(w, factor)
}

/// `d₁ = u¹ − oᵀ`, `dₛ = uˢ − uˢ⁻¹`.
pub fn to_displacements(future: &[Point], last_obs: Point) -> Vec<Point> {
    let mut prev = last_obs;
    future
        .iter()
        .map(|p| {
            let d = [p[0] - prev[0], p[1] - prev[1]];
            prev = *p;
            d
        })
        .collect()
}

pub fn from_displacements(disp: &[Point], last_obs: Point) -> Vec<Point> {
    let mut acc = last_obs;
    disp.iter()
        .map(|d| {
            acc = [acc[0] + d[0], acc[1] + d[1]];
            acc
        })
        .collect()
}
