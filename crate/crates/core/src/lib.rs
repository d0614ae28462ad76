pub mod dataset;
pub mod error;
pub mod field;
pub mod fixtures;
pub mod imageio;
pub mod math;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod relight;
pub mod render;
pub mod scene;
pub mod service;
pub mod shading;
pub mod training;
pub mod visibility;

pub use error::{Error, Result};
