pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod tensorcore;
pub mod train;

pub use error::{Error, Result};
