use serde::{Deserialize, Serialize};

use super::transform::{canonical_rotate, min_max_bounds, MinMaxBounds};
use super::window::TrajectoryWindow;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Align the last observed displacement with +x.
    pub rotate: bool,
    /// Move `oᵀ` to the origin together with the rotation.
    pub center: bool,
    /// Min-max scale positions with bounds fitted on the training split.
    pub min_max: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            rotate: true,
            center: true,
            min_max: false,
        }
    }
}

/// Fitted preprocessing, applied identically to every split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub config: PreprocessConfig,
    pub bounds: Option<MinMaxBounds>,
}

impl Pipeline {
    pub fn identity() -> Self {
        Pipeline {
            config: PreprocessConfig {
                rotate: false,
                center: false,
                min_max: false,
            },
            bounds: None,
        }
    }

    pub fn fit(config: PreprocessConfig, train: &[TrajectoryWindow]) -> Result<Self> {
        let mut p = Pipeline { config, bounds: None };
        if p.config.min_max {
            let rotated = train.iter().map(|w| p.rotate(w.clone())).collect::<Result<Vec<_>>>()?;
            p.bounds = Some(min_max_bounds(&rotated)?);
        }
        Ok(p)
    }

    fn rotate(&self, w: TrajectoryWindow) -> Result<TrajectoryWindow> {
        if !w.preprocess.steps.is_empty() {
            return Err(Error::contract("window has already been preprocessed"));
        }
        Ok(if self.config.rotate {
            canonical_rotate(w, self.config.center)
        } else {
            w
        })
    }

    pub fn apply(&self, w: TrajectoryWindow) -> Result<TrajectoryWindow> {
        let w = self.rotate(w)?;
        match (&self.bounds, self.config.min_max) {
            (Some(b), true) => Ok(b.normalize(w)),
            (None, true) => Err(Error::contract("min-max pipeline used before fitting")),
            _ => Ok(w),
        }
    }

    pub fn apply_all(&self, ws: Vec<TrajectoryWindow>) -> Result<Vec<TrajectoryWindow>> {
        ws.into_iter().map(|w| self.apply(w)).collect()
    }
}
