//! Experiment harness for symbol-based DPD training: configuration, file
//! formats, staged runs and power sweeps on top of `symdpd-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod config;
pub mod formats;
pub mod harness;
pub mod sweep;

pub use config::{ExperimentConfig, PaSelection, Trainer};
pub use harness::{Harness, Scheme};
