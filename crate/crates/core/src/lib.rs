pub mod augment;
pub mod datasets;
pub mod error;
pub mod geometry;
pub mod keypoints;
pub mod metrics;
pub mod mockrender;
pub mod scenelayout;
pub mod standin;

pub use error::{Error, Result};
