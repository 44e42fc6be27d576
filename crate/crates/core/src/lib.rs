pub mod cli;
pub mod config;
pub mod error;
pub mod graph_core;
pub mod layers;
pub mod model;
pub mod montage;
pub mod numerics;
pub mod pipeline;
pub mod pooling;
pub mod trainer;
pub mod wl;

pub use error::{Error, Result};
