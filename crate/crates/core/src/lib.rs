//! Health-indicator prediction from gait video by transfer from 3D pose
//! estimation.

pub mod body_model;
pub mod error;
pub mod glance;
pub mod head;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod svr;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
