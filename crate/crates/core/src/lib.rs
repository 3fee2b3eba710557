//! Continuous-time survival modeling with neural controlled differential
//! equations, a Cox risk head and time-aware contrastive alignment.

pub mod checkpoint;
pub mod config;
pub mod controlpath;
pub mod data;
pub mod error;
pub mod interpret;
pub mod metrics;
pub mod model;
pub mod ncde;
pub mod nn;
pub mod pipeline;
pub mod survhead;
pub mod tacl;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
