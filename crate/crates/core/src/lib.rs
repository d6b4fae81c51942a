pub mod cli;
pub mod data;
pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod flows;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod odeint;
pub mod spline;

pub use error::{Error, Result};
