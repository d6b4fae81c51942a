//! Occupancy rasters, fused occupancy grids and top-k trajectories.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Point, TrajectoryWindow};
use crate::error::{Error, Result};
use crate::model::{DensityUnits, FlowModel, MarginalQuery};

/// Cell values of one grid are evaluated in chunks of this many queries.
const QUERY_CHUNK: usize = 4096;

/// Square-celled raster over world coordinates. Row 0 is the lowest `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Cells per axis.
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_min: -10.0,
            x_max: 10.0,
            y_min: -10.0,
            y_max: 10.0,
            resolution: 100,
        }
    }
}

impl GridSpec {
    pub fn centered(center: Point, half_width: f64, resolution: usize) -> Self {
        GridSpec {
            x_min: center[0] - half_width,
            x_max: center[0] + half_width,
            y_min: center[1] - half_width,
            y_max: center[1] + half_width,
            resolution,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.x_max > self.x_min) || !self.x_min.is_finite() || !self.x_max.is_finite() {
            errs.push("grid x extent must be finite and nonempty".into());
        }
        if !(self.y_max > self.y_min) || !self.y_min.is_finite() || !self.y_max.is_finite() {
            errs.push("grid y extent must be finite and nonempty".into());
        }
        if self.resolution < 2 {
            errs.push("grid.resolution must be >= 2".into());
        }
        errs
    }

    fn checked(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn cell_size(&self) -> (f64, f64) {
        let n = self.resolution as f64;
        ((self.x_max - self.x_min) / n, (self.y_max - self.y_min) / n)
    }

    pub fn cell_area(&self) -> f64 {
        let (dx, dy) = self.cell_size();
        dx * dy
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point {
        let (dx, dy) = self.cell_size();
        [self.x_min + (ix as f64 + 0.5) * dx, self.y_min + (iy as f64 + 0.5) * dy]
    }

    /// Cell containing `p`, if any.
    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let (dx, dy) = self.cell_size();
        let fx = (p[0] - self.x_min) / dx;
        let fy = (p[1] - self.y_min) / dy;
        let n = self.resolution as f64;
        if (0.0..n).contains(&fx) && (0.0..n).contains(&fy) {
            Some((fx as usize, fy as usize))
        } else {
            None
        }
    }

    /// Centers in row-major order.
    pub fn centers(&self) -> Vec<Point> {
        let n = self.resolution;
        (0..n * n).map(|k| self.cell_center(k % n, k / n)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    /// Probability density per square meter at one forecast time.
    Density,
    /// Summed densities normalized to a maximum of one.
    Fused,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    pub kind: GridKind,
    /// Row-major, `values[iy * resolution + ix]`.
    pub values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.spec.resolution + ix]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Cell indices of the largest value; the first one on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        (best % self.spec.resolution, best / self.spec.resolution)
    }

    /// Riemann sum of the values over the grid area.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_area()
    }
}

/// `exp(log p(u | window, s))` at every cell center, in world units.
pub fn density_raster(model: &FlowModel, window: &TrajectoryWindow, s: f64, spec: &GridSpec) -> Result<OccupancyGrid> {
    spec.checked()?;
    let centers = spec.centers();
    let mut values = Vec::with_capacity(centers.len());
    for chunk in centers.chunks(QUERY_CHUNK) {
        let lp = model.log_prob_world_points(window, chunk, s, DensityUnits::World)?;
        values.extend(lp.into_iter().map(f64::exp));
    }
    Ok(OccupancyGrid {
        spec: *spec,
        kind: GridKind::Density,
        values,
    })
}

/// Forecast times `j/oversample` for `j = 1..=S·oversample`.
pub fn fusion_times(horizon: usize, oversample: usize) -> Vec<f64> {
    (1..=horizon * oversample).map(|j| j as f64 / oversample as f64).collect()
}

/// Sum of rasters divided by its maximum cell.
pub fn fuse_rasters(rasters: &[OccupancyGrid]) -> Result<OccupancyGrid> {
    let first = rasters.first().ok_or_else(|| Error::contract("nothing to fuse"))?;
    let mut sum = vec![0.0; first.values.len()];
    for r in rasters {
        if r.spec != first.spec {
            return Err(Error::contract("rasters must share one grid"));
        }
        sum.iter_mut().zip(&r.values).for_each(|(a, b)| *a += b);
    }
    let max = sum.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::Degenerate(format!("fused grid maximum is {max}")));
    }
    Ok(OccupancyGrid {
        spec: first.spec,
        kind: GridKind::Fused,
        values: sum.into_iter().map(|v| v / max).collect(),
    })
}

/// Occupancy over the whole horizon, sampled `oversample` times per step.
pub fn additive_fusion(
    model: &FlowModel,
    window: &TrajectoryWindow,
    oversample: usize,
    spec: &GridSpec,
) -> Result<OccupancyGrid> {
    if oversample == 0 {
        return Err(Error::Config(vec!["oversample must be >= 1".into()]));
    }
    let rasters = fusion_times(model.horizon(), oversample)
        .into_iter()
        .map(|s| density_raster(model, window, s, spec))
        .collect::<Result<Vec<_>>>()?;
    fuse_rasters(&rasters)
}

/// Candidates drawn at one forecast step and the one kept.
#[derive(Clone, Debug, PartialEq)]
pub struct TopKStep {
    /// Model-space candidates.
    pub candidates: Vec<Point>,
    pub log_probs: Vec<f64>,
    pub chosen: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopKTrajectory {
    /// World-space positions for `s = 1..=S`.
    pub path: Vec<Point>,
    pub steps: Vec<TopKStep>,
}

/// At every step draw `k` candidates and keep the most likely one.
pub fn top_k_trajectory(
    model: &FlowModel,
    window: &TrajectoryWindow,
    k: usize,
    rng: &mut impl Rng,
) -> Result<TopKTrajectory> {
    if k == 0 {
        return Err(Error::Config(vec!["k must be >= 1".into()]));
    }
    let zeta = model.embed(&[window])?;
    let mut path = Vec::with_capacity(model.horizon());
    let mut steps = Vec::with_capacity(model.horizon());
    for s in 1..=model.horizon() {
        let s = s as f64;
        let candidates = model.sample_future_model(window, s, k, rng)?;
        let queries: Vec<MarginalQuery> = candidates
            .iter()
            .map(|&point| MarginalQuery { window: 0, point, s })
            .collect();
        let log_probs = model.log_prob_marginal(&zeta, &queries)?;
        let mut chosen = 0;
        for (i, lp) in log_probs.iter().enumerate() {
            if *lp > log_probs[chosen] {
                chosen = i;
            }
        }
        path.push(window.preprocess.to_world(candidates[chosen]));
        steps.push(TopKStep {
            candidates,
            log_probs,
            chosen,
        });
    }
    Ok(TopKTrajectory { path, steps })
}

/// One independent marginal draw per step, in world coordinates.
pub fn sample_per_step(model: &FlowModel, window: &TrajectoryWindow, rng: &mut impl Rng) -> Result<Vec<Point>> {
    (1..=model.horizon())
        .map(|s| Ok(model.sample_future(window, s as f64, 1, rng)?[0]))
        .collect()
}

/// Sum of second-difference norms along a path.
pub fn roughness(path: &[Point]) -> f64 {
    path.windows(3)
        .map(|w| {
            let dx = w[2][0] - 2.0 * w[1][0] + w[0][0];
            let dy = w[2][1] - 2.0 * w[1][1] + w[0][1];
            (dx * dx + dy * dy).sqrt()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFormat {
    Csv,
    Pgm,
}

pub const PGM_MAX: u32 = 65535;

/// CSV: a `resolution,x_min,x_max,y_min,y_max,kind` header line and its
/// values, then one line per grid row starting at the lowest `y`.
pub fn grid_to_csv(grid: &OccupancyGrid) -> String {
    let s = &grid.spec;
    let kind = match grid.kind {
        GridKind::Density => "density",
        GridKind::Fused => "fused",
    };
    let mut out = String::from("resolution,x_min,x_max,y_min,y_max,kind\n");
    let _ = writeln!(out, "{},{},{},{},{},{kind}", s.resolution, s.x_min, s.x_max, s.y_min, s.y_max);
    for row in grid.values.chunks(s.resolution) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn grid_from_csv(text: &str) -> Result<OccupancyGrid> {
    let mut lines = text.lines().enumerate();
    let parse = |row: usize, v: &str| -> Result<f64> {
        v.trim().parse::<f64>().map_err(|e| Error::Parse {
            row: row + 1,
            message: format!("`{v}`: {e}"),
        })
    };
    match lines.next() {
        Some((_, h)) if h.trim() == "resolution,x_min,x_max,y_min,y_max,kind" => {}
        _ => return Err(Error::Format("missing grid header".into())),
    }
    let (row, meta) = lines.next().ok_or_else(|| Error::Format("missing grid metadata".into()))?;
    let f: Vec<&str> = meta.split(',').collect();
    if f.len() != 6 {
        return Err(Error::Parse {
            row: row + 1,
            message: "expected 6 metadata fields".into(),
        });
    }
    let resolution = f[0].trim().parse::<usize>().map_err(|e| Error::Parse {
        row: row + 1,
        message: e.to_string(),
    })?;
    let kind = match f[5].trim() {
        "density" => GridKind::Density,
        "fused" => GridKind::Fused,
        other => return Err(Error::Format(format!("unknown grid kind `{other}`"))),
    };
    let spec = GridSpec {
        resolution,
        x_min: parse(row, f[1])?,
        x_max: parse(row, f[2])?,
        y_min: parse(row, f[3])?,
        y_max: parse(row, f[4])?,
    };
    spec.checked()?;
    let mut values = Vec::with_capacity(resolution * resolution);
    for (row, line) in lines {
        let cells = line.split(',').map(|v| parse(row, v)).collect::<Result<Vec<_>>>()?;
        if cells.len() != resolution {
            return Err(Error::Parse {
                row: row + 1,
                message: format!("{} cells in a row of {resolution}", cells.len()),
            });
        }
        values.extend(cells);
    }
    if values.len() != resolution * resolution {
        return Err(Error::Format(format!(
            "{} grid rows for resolution {resolution}",
            values.len() / resolution
        )));
    }
    Ok(OccupancyGrid { spec, kind, values })
}

/// Plain PGM (`P2`) scaled so the largest cell is [`PGM_MAX`]. The top image
/// row is the highest `y`.
pub fn grid_to_pgm(grid: &OccupancyGrid) -> String {
    let n = grid.spec.resolution;
    let max = grid.max();
    let mut out = format!("P2\n{n} {n}\n{PGM_MAX}\n");
    for iy in (0..n).rev() {
        let line: Vec<String> = (0..n)
            .map(|ix| {
                let v = if max > 0.0 { grid.get(ix, iy) / max } else { 0.0 };
                ((v * PGM_MAX as f64).round() as u32).to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn export_grid(grid: &OccupancyGrid, path: &Path, format: GridFormat) -> Result<()> {
    let text = match format {
        GridFormat::Csv => grid_to_csv(grid),
        GridFormat::Pgm => grid_to_pgm(grid),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
