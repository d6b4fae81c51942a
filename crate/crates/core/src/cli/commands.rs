use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{RunConfig, Split};
use crate::data::{
    load_trajectories, slice_windows, split_windows, synthesize_dataset, Pipeline, Point, TrajectoryWindow,
};
use crate::error::{Error, Result};
use crate::inference::{additive_fusion, density_raster, export_grid, top_k_trajectory, GridFormat, GridSpec, OccupancyGrid};
use crate::metrics::{crps_report, min_ade, min_fde, rmse, write_report, MetricRow, SampleSet};
use crate::model::{load_checkpoint, save_checkpoint, train, FlowModel, Formulation, TrainReport};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
pub const LOSS_TRACE: &str = "loss.csv";
pub const REPORT: &str = "report.csv";
pub const SAMPLES: &str = "samples.csv";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write(&cfg.out_dir.join(EFFECTIVE_CONFIG), &cfg.to_toml()?)
}

/// Raw train and test windows.
pub fn load_split(cfg: &RunConfig) -> Result<(Vec<TrajectoryWindow>, Vec<TrajectoryWindow>)> {
    let records = match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(path), None) => load_trajectories(path, cfg.data.adapter, cfg.data.frame_period)?,
        (None, Some(spec)) => synthesize_dataset(spec, cfg.data.synthetic_seed)?,
        _ => return Err(Error::Config(vec!["set exactly one of data.path and data.synthetic".into()])),
    };
    let windows = slice_windows(&records, &cfg.slicing)?;
    if windows.is_empty() {
        return Err(Error::Format("the dataset yields no complete windows".into()));
    }
    split_windows(windows, cfg.data.train_fraction, cfg.seed)
}

fn load_model(cfg: &RunConfig) -> Result<FlowModel> {
    let model = load_checkpoint(&cfg.checkpoint_path())?;
    if model.config != cfg.model {
        return Err(Error::Version(format!(
            "checkpoint {} was trained with a different model configuration",
            cfg.checkpoint_path().display()
        )));
    }
    Ok(model)
}

fn split_windows_for(cfg: &RunConfig, model: &FlowModel, split: Split) -> Result<Vec<TrajectoryWindow>> {
    let (train, test) = load_split(cfg)?;
    let chosen = match split {
        Split::Train => train,
        Split::Test => test,
    };
    model.pipeline.apply_all(chosen)
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    prepare_out(cfg)?;
    let (train_raw, _) = load_split(cfg)?;
    let pipeline = Pipeline::fit(cfg.preprocess.clone(), &train_raw)?;
    let windows = pipeline.apply_all(train_raw)?;
    let mut model = FlowModel::new(cfg.model.clone(), cfg.seed)?;
    model.pipeline = pipeline;
    let train_cfg = crate::model::TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let report = train(&mut model, &windows, &train_cfg)?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", e + 1);
    }
    write(&cfg.out_dir.join(LOSS_TRACE), &csv)?;
    let checkpoint = cfg.checkpoint_path();
    save_checkpoint(&model, &checkpoint)?;
    Ok(TrainOutcome { report, checkpoint })
}

/// `n` world-space futures; marginal models draw each step independently.
pub fn sample_trajectories(
    model: &FlowModel,
    window: &TrajectoryWindow,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Point>>> {
    match model.config.formulation {
        Formulation::Marginal => {
            let mut out = vec![Vec::with_capacity(model.horizon()); n];
            for s in 1..=model.horizon() {
                for (traj, p) in out.iter_mut().zip(model.sample_future(window, s as f64, n, rng)?) {
                    traj.push(p);
                }
            }
            Ok(out)
        }
        Formulation::Joint => Ok(model
            .sample_joint_model(window, n, rng)?
            .into_iter()
            .map(|path| path.into_iter().map(|p| window.preprocess.to_world(p)).collect())
            .collect()),
    }
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<MetricRow>> {
    prepare_out(cfg)?;
    let model = load_model(cfg)?;
    let mut windows = split_windows_for(cfg, &model, cfg.eval.split)?;
    if let Some(m) = cfg.eval.max_windows {
        windows.truncate(m);
    }
    if windows.is_empty() {
        return Err(Error::Format("no windows to evaluate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut best_of, mut dist) = (Vec::new(), Vec::new());
    for w in &windows {
        let truth = w.future_world();
        best_of.push(SampleSet::new(sample_trajectories(&model, w, cfg.eval.n_best_of, &mut rng)?, truth.clone())?);
        dist.push(SampleSet::new(sample_trajectories(&model, w, cfg.eval.n_distribution, &mut rng)?, truth)?);
    }
    let n = windows.len();
    let mean = |f: fn(&SampleSet) -> f64, sets: &[SampleSet]| sets.iter().map(f).sum::<f64>() / sets.len() as f64;
    let refs: Vec<&TrajectoryWindow> = windows.iter().collect();
    let row = |metric: &str, value: f64, n_samples: usize| MetricRow {
        metric: metric.into(),
        value,
        n_samples,
        n_instances: n,
        seed: cfg.seed,
    };
    let rows = vec![
        row("min_ade", mean(min_ade, &best_of), cfg.eval.n_best_of),
        row("min_fde", mean(min_fde, &best_of), cfg.eval.n_best_of),
        row("rmse", mean(rmse, &dist), cfg.eval.n_distribution),
        row("crps", crps_report(&dist)?, cfg.eval.n_distribution),
        row("nll", model.nll(&refs)?, 0),
    ];
    write_report(&cfg.out_dir.join(REPORT), &rows)?;
    Ok(rows)
}

fn sample_window_ids(cfg: &RunConfig, available: usize) -> Result<Vec<usize>> {
    if cfg.sample.windows.is_empty() {
        return Ok((0..available.min(cfg.sample.max_windows)).collect());
    }
    if let Some(bad) = cfg.sample.windows.iter().find(|&&i| i >= available) {
        return Err(Error::Config(vec![format!(
            "sample.windows entry {bad} is out of range for {available} test windows"
        )]));
    }
    Ok(cfg.sample.windows.clone())
}

/// CSV with columns `window_id,sample_id,s,x,y` in world coordinates.
pub fn cmd_sample(cfg: &RunConfig) -> Result<String> {
    prepare_out(cfg)?;
    let model = load_model(cfg)?;
    if model.config.formulation == Formulation::Joint && cfg.sample.k > 1 {
        return Err(Error::Config(vec!["top-k sampling needs a marginal model".into()]));
    }
    let windows = split_windows_for(cfg, &model, Split::Test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut csv = String::from("window_id,sample_id,s,x,y\n");
    for id in sample_window_ids(cfg, windows.len())? {
        let w = &windows[id];
        for sample in 0..cfg.sample.n_samples {
            let path = match model.config.formulation {
                Formulation::Marginal => top_k_trajectory(&model, w, cfg.sample.k, &mut rng)?.path,
                Formulation::Joint => model.sample_joint(w, &mut rng)?,
            };
            for (s, p) in path.iter().enumerate() {
                let _ = writeln!(csv, "{id},{sample},{},{},{}", s + 1, p[0], p[1]);
            }
        }
    }
    write(&cfg.out_dir.join(SAMPLES), &csv)?;
    Ok(csv)
}

fn grid_spec(cfg: &RunConfig, window: &TrajectoryWindow) -> GridSpec {
    match cfg.grid.extent {
        Some([x_min, x_max, y_min, y_max]) => GridSpec {
            x_min,
            x_max,
            y_min,
            y_max,
            resolution: cfg.grid.resolution,
        },
        None => GridSpec::centered(
            window.preprocess.to_world(window.last_obs()),
            cfg.grid.half_width,
            cfg.grid.resolution,
        ),
    }
}

fn export_all(cfg: &RunConfig, grid: &OccupancyGrid, stem: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    for format in &cfg.grid.formats {
        let ext = match format {
            GridFormat::Csv => "csv",
            GridFormat::Pgm => "pgm",
        };
        let path = cfg.out_dir.join(format!("{stem}.{ext}"));
        export_grid(grid, &path, *format)?;
        written.push(path);
    }
    Ok(())
}

/// Density rasters at `grid.times` and the fused grid; returns written files.
pub fn cmd_grid(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    prepare_out(cfg)?;
    let model = load_model(cfg)?;
    if model.config.formulation != Formulation::Marginal {
        return Err(Error::Config(vec!["occupancy grids need a marginal model".into()]));
    }
    let windows = split_windows_for(cfg, &model, Split::Test)?;
    let w = windows.get(cfg.grid.window).ok_or_else(|| {
        Error::Config(vec![format!(
            "grid.window {} is out of range for {} test windows",
            cfg.grid.window,
            windows.len()
        )])
    })?;
    let spec = grid_spec(cfg, w);
    let mut written = Vec::new();
    for &s in &cfg.grid.times {
        let g = density_raster(&model, w, s, &spec)?;
        export_all(cfg, &g, &format!("density_s{s}"), &mut written)?;
    }
    if cfg.grid.oversample > 0 {
        let g = additive_fusion(&model, w, cfg.grid.oversample, &spec)?;
        export_all(cfg, &g, "fused", &mut written)?;
    }
    Ok(written)
}
