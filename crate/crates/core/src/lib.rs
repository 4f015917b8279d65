pub mod autodiff;
pub mod error;
pub mod filters;
pub mod metrics;
pub mod neural;
pub mod scene;
pub mod signal;
pub mod training;
pub mod wav;

pub use error::{Error, Result};
