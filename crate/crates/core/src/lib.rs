//! Block-moving grid benchmark for experience stitching in goal-conditioned RL.

pub mod agents;
pub mod error;
pub mod grid_env;
pub mod harness;
pub mod neural;
pub mod oracle;
pub mod replay;
pub mod scalar;
pub mod stats;
pub mod task_settings;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Agent32 = agents::Agent<f32>;
pub type Agent64 = agents::Agent<f64>;
pub type ParamSet32 = neural::ParamSet<f32>;
pub type ParamSet64 = neural::ParamSet<f64>;
pub type Matrix32 = neural::Matrix<f32>;
pub type Matrix64 = neural::Matrix<f64>;
