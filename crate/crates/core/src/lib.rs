pub mod error;
pub mod field;
pub mod formats;
pub mod geometry;
pub mod guidance;
pub mod image;
pub mod nn;
pub mod pipeline;
pub mod post;
pub mod priors;
pub mod render;
pub mod rng;
pub mod scene;
pub mod training;

pub use error::{Error, Result};
