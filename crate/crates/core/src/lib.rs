//! Recurrent back-projection video super-resolution.

pub mod config;
pub mod context;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod frame;
pub mod model;
pub mod nn;
pub mod projection;
pub mod training;

pub use config::{ModelConfig, ScaleFactor, TrainConfig, ValidatedConfig};
pub use error::{Error, ErrorClass, Result};
pub use flow::FlowField;
pub use frame::Frame;
pub use model::{Architecture, VsrModel};
