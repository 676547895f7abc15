//! Coherent optical link simulation, neural channel equalizers and knowledge
//! distillation from a recurrent teacher to a feedforward student.

pub mod bench;
pub mod channel;
pub mod config;
pub mod dsp;
pub mod error;
pub mod io;
pub mod link;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
