//! Simulation core for symbol-based over-the-air digital predistortion.
//!
//! The crate models the complete baseband chain
//!
//! ```text
//! m -> QAM mapper -> upsample + RRC -> DPD -> Gaussian policy -> PA -> AWGN
//!   -> matched filter + downsample -> demapper -> per-symbol cross-entropy
//! ```
//!
//! and two ways of training the predistorter: a score-function (REINFORCE)
//! estimator driven only by per-symbol receiver losses ([`policy`]), and the
//! classical indirect-learning architecture with a feedback ADC ([`ila`]).
//!
//! Everything here is `no_std` + `alloc`; file formats, the CLI and the
//! experiment harness live in the companion `symdpd` crate.

#![no_std]
// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod chain;
pub mod dpd;
pub mod error;
pub mod gmp;
pub mod ila;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pa;
pub mod policy;
pub mod receiver;
pub mod rng;
pub mod signal;
pub mod spectrum;

pub use num_complex::Complex64;

pub use chain::{Chain, ChainConfig};
pub use dpd::{DpdKind, DpdModel};
pub use error::{Error, Result};
pub use gmp::GmpConfig;
pub use pa::{PaKind, PaModel};
pub use receiver::{Demapper, ProbabilityMatrix};
pub use signal::{ComplexSignal, Constellation, PulseShape};

/// One logged training iteration (RL) or refit (ILA).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Mean per-symbol cross-entropy (RL) or postdistorter MSE (ILA).
    pub loss: f64,
    pub grad_norm: f64,
    /// Average PA output power of the batch.
    pub power_dbm: f64,
    /// Batch symbol error rate, when the receiver was run.
    pub ser: Option<f64>,
    pub nmse_db: Option<f64>,
    pub acpr_dbc: Option<f64>,
}
