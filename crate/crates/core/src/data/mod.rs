//! Trajectory ingestion, windowing and preprocessing.

mod io;
mod pipeline;
mod synth;
mod transform;
mod window;

pub use io::{load_trajectories, read_trajectories, Adapter};
pub use pipeline::{Pipeline, PreprocessConfig};
pub use synth::{synthesize_dataset, Process, SynthSpec, TruePredictive};
pub use transform::{
    canonical_rotate, from_displacements, min_max_bounds, scale_about_mean, scale_augment, to_displacements,
    MinMaxBounds, Preprocess, Rotation, Transform,
};
pub use window::{compute_features, slice_windows, split_windows, SlicingConfig, TrajectoryWindow};

pub type Point = [f64; 2];

/// Velocity, acceleration and heading: `(ẋ, ẏ, ẍ, ÿ, θ)`.
pub type Feature = [f64; 5];

/// One agent's track in a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub scene_id: String,
    pub agent_id: String,
    pub frames: Vec<i64>,
    pub positions: Vec<Point>,
    /// Seconds between consecutive samples.
    pub frame_period: f64,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}
