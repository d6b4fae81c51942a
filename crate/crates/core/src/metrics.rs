//! Forecast evaluation: minADE, minFDE, RMSE and CRPS.

use std::io::Write;
use std::path::Path;

use crate::data::Point;
use crate::error::{Error, Result};

/// `n` sampled futures of one instance and its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    samples: Vec<Vec<Point>>,
    truth: Vec<Point>,
}

impl SampleSet {
    pub fn new(samples: Vec<Vec<Point>>, truth: Vec<Point>) -> Result<Self> {
        if samples.is_empty() || truth.is_empty() {
            return Err(Error::contract("a sample set needs at least one sample and one step"));
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != truth.len()) {
            return Err(Error::contract(format!(
                "sample of {} steps against ground truth of {}",
                bad.len(),
                truth.len()
            )));
        }
        Ok(SampleSet { samples, truth })
    }

    pub fn samples(&self) -> &[Vec<Point>] {
        &self.samples
    }

    pub fn truth(&self) -> &[Point] {
        &self.truth
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn horizon(&self) -> usize {
        self.truth.len()
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn min_ade(set: &SampleSet) -> f64 {
    set.samples
        .iter()
        .map(|s| s.iter().zip(&set.truth).map(|(p, q)| dist(*p, *q)).sum::<f64>() / set.horizon() as f64)
        .fold(f64::INFINITY, f64::min)
}

pub fn min_fde(set: &SampleSet) -> f64 {
    let last = set.horizon() - 1;
    set.samples
        .iter()
        .map(|s| dist(s[last], set.truth[last]))
        .fold(f64::INFINITY, f64::min)
}

/// Root of the mean squared distance over every sampled point.
pub fn rmse(set: &SampleSet) -> f64 {
    let mut sum = 0.0;
    for s in &set.samples {
        for (p, q) in s.iter().zip(&set.truth) {
            sum += (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        }
    }
    (sum / (set.n_samples() * set.horizon()) as f64).sqrt()
}

/// `E|X − y| + E[X] − 2·E[X·F̂(X)]` with `F̂(x₍ᵢ₎) = (i − ½)/n`.
pub fn crps_empirical(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("CRPS of an empty sample"));
    }
    let n = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let abs = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    let mean = sorted.iter().sum::<f64>() / n;
    let weighted = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| x * (i as f64 + 0.5) / n)
        .sum::<f64>()
        / n;
    Ok(abs + mean - 2.0 * weighted)
}

/// CRPS per coordinate and step, averaged over coordinates, steps and sets.
pub fn crps_report(sets: &[SampleSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::contract("CRPS report over no instances"));
    }
    let mut total = 0.0;
    for set in sets {
        let mut inst = 0.0;
        for s in 0..set.horizon() {
            for ax in 0..2 {
                let xs: Vec<f64> = set.samples.iter().map(|p| p[s][ax]).collect();
                inst += crps_empirical(&xs, set.truth[s][ax])?;
            }
        }
        total += inst / (2 * set.horizon()) as f64;
    }
    Ok(total / sets.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub n_samples: usize,
    pub n_instances: usize,
    pub seed: u64,
}

pub const REPORT_HEADER: [&str; 5] = ["metric", "value", "n_samples", "n_instances", "seed"];

pub fn write_report(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let fail = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(REPORT_HEADER).map_err(fail)?;
        for r in rows {
            w.write_record([
                r.metric.clone(),
                format!("{}", r.value),
                r.n_samples.to_string(),
                r.n_instances.to_string(),
                r.seed.to_string(),
            ])
            .map_err(fail)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}
