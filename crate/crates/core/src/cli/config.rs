use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Adapter, PreprocessConfig, SlicingConfig, SynthSpec};
use crate::error::{Error, Result};
use crate::inference::GridFormat;
use crate::model::{ModelConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Trajectory file. Mutually exclusive with `synthetic`.
    pub path: Option<PathBuf>,
    pub adapter: Adapter,
    /// Seconds between frames.
    pub frame_period: f64,
    pub synthetic: Option<SynthSpec>,
    pub synthetic_seed: u64,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            adapter: Adapter::Generic,
            frame_period: 0.4,
            synthetic: None,
            synthetic_seed: 0,
            train_fraction: 0.8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Samples per instance for minADE and minFDE.
    pub n_best_of: usize,
    /// Samples per instance for RMSE and CRPS.
    pub n_distribution: usize,
    pub split: Split,
    /// Evaluate at most this many windows.
    pub max_windows: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_best_of: 20,
            n_distribution: 1000,
            split: Split::Test,
            max_windows: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    /// Candidates per step; 1 is plain sampling.
    pub k: usize,
    pub n_samples: usize,
    /// Test-split window indices; empty means the first `max_windows`.
    pub windows: Vec<usize>,
    pub max_windows: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            k: 1,
            n_samples: 1,
            windows: Vec::new(),
            max_windows: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Test-split window index.
    pub window: usize,
    pub resolution: usize,
    /// Square extent around the last observed position, used when
    /// `extent` is absent.
    pub half_width: f64,
    /// `[x_min, x_max, y_min, y_max]` in world meters.
    pub extent: Option<[f64; 4]>,
    /// Forecast times of individual density rasters.
    pub times: Vec<f64>,
    /// Fused grid sampling rate per step; 0 skips the fused grid.
    pub oversample: usize,
    pub formats: Vec<GridFormat>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            window: 0,
            resolution: 100,
            half_width: 10.0,
            extent: None,
            times: Vec::new(),
            oversample: 10,
            formats: vec![GridFormat::Csv, GridFormat::Pgm],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Drives the split, initialization, shuffling and sampling. Replaces
    /// `train.seed`.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Defaults to `model.json` in `out_dir`.
    pub checkpoint: Option<PathBuf>,
    pub data: DataConfig,
    pub slicing: SlicingConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sample: SampleConfig,
    pub grid: GridConfig,
}

impl RunConfig {
    /// Parse TOML, reporting every unknown key and every invalid value.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        let mut unknown = Vec::new();
        let cfg: RunConfig = serde_ignored::deserialize(de, |path| unknown.push(format!("unknown key `{path}`")))
            .map_err(|e| Error::Config(vec![e.to_string()]))?;
        let mut errs = unknown;
        errs.extend(cfg.validate());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.json"))
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let d = &self.data;
        match (&d.path, &d.synthetic) {
            (None, None) => errs.push("data: set either data.path or data.synthetic".into()),
            (Some(_), Some(_)) => errs.push("data: data.path and data.synthetic are exclusive".into()),
            _ => {}
        }
        if !(d.frame_period > 0.0) {
            errs.push("data.frame_period must be positive".into());
        }
        if !(0.0..=1.0).contains(&d.train_fraction) {
            errs.push("data.train_fraction must lie in [0, 1]".into());
        }
        errs.extend(self.slicing.validate());
        errs.extend(self.model.validate());
        errs.extend(self.train.validate());
        if self.slicing.pred_len != self.model.horizon {
            errs.push(format!(
                "model.horizon ({}) must equal slicing.pred_len ({})",
                self.model.horizon, self.slicing.pred_len
            ));
        }
        if !self.slicing.require_full {
            errs.push("slicing.require_full = false is not supported for training and evaluation".into());
        }
        if self.eval.n_best_of == 0 || self.eval.n_distribution == 0 {
            errs.push("eval sample counts must be >= 1".into());
        }
        if self.sample.k == 0 || self.sample.n_samples == 0 {
            errs.push("sample.k and sample.n_samples must be >= 1".into());
        }
        if self.grid.resolution < 2 {
            errs.push("grid.resolution must be >= 2".into());
        }
        if !(self.grid.half_width > 0.0) {
            errs.push("grid.half_width must be positive".into());
        }
        if let Some([x0, x1, y0, y1]) = self.grid.extent {
            if !(x1 > x0 && y1 > y0) {
                errs.push("grid.extent must be [x_min, x_max, y_min, y_max] with min < max".into());
            }
        }
        let big_s = self.model.horizon as f64;
        for t in &self.grid.times {
            if !(*t > 0.0 && *t <= big_s) {
                errs.push(format!("grid.times entry {t} is outside (0, {big_s}]"));
            }
        }
        errs
    }
}
