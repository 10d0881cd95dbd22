//! The end-to-end baseband chain and its evaluation helpers.
//!
//! Waveforms are processed in cyclic blocks of whole symbols. The shaped
//! signal is rescaled to unit mean power before the predistorter, and the
//! PA input is `drive * x` with `drive` the rms input voltage.

use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dpd::DpdModel;
use crate::error::{Error, Result};
use crate::metrics::{nmse_db, theoretical_ser_qam};
use crate::pa::PaModel;
use crate::receiver::{equalize, Demapper};
use crate::rng;
use crate::signal::{
    matched_filter_slice, mean_power, mean_square_from_dbm, modulate, power_dbm_from_mean_square, Constellation,
    PulseShape,
};
use crate::spectrum::{acpr_db, DEFAULT_CHANNEL_SPACING_HZ, DEFAULT_SIGNAL_BW_HZ};

/// Default DAC full scale, volts: three times the reference PA's input
/// saturation, far into compression.
pub const DEFAULT_PA_INPUT_LIMIT_V: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub order: usize,
    pub oversampling: usize,
    pub symbol_rate: f64,
    pub roll_off: f64,
    pub span_symbols: usize,
    /// Receiver AWGN, total complex standard deviation per full-rate sample (V).
    pub channel_noise_std: f64,
    /// Whether the PA's measurement noise is applied.
    pub pa_noise: bool,
    /// DAC full scale: PA input magnitudes above this many volts are clipped
    /// (phase kept). Keeps behavioral PA models inside their identified range.
    pub pa_input_limit: Option<f64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            order: 64,
            oversampling: 4,
            symbol_rate: 50e6,
            roll_off: 0.1,
            span_symbols: 96,
            channel_noise_std: 0.3,
            pa_noise: true,
            pa_input_limit: Some(DEFAULT_PA_INPUT_LIMIT_V),
        }
    }
}

impl ChainConfig {
    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.oversampling as f64
    }

    /// Occupied bandwidth `(1 + beta) * symbol_rate`.
    pub fn signal_bandwidth(&self) -> f64 {
        (1.0 + self.roll_off) * self.symbol_rate
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_rate > 0.0) {
            return Err(Error::invalid("symbol_rate", "must be positive"));
        }
        if !(self.channel_noise_std >= 0.0) {
            return Err(Error::invalid("channel_noise_std", "must be non-negative"));
        }
        if matches!(self.pa_input_limit, Some(v) if !(v > 0.0)) {
            return Err(Error::invalid("pa_input_limit", "must be positive"));
        }
        Constellation::square_qam(self.order)?;
        PulseShape::rrc(self.roll_off, self.span_symbols, self.oversampling)?;
        Ok(())
    }
}

/// One transmitted block before the predistorter.
#[derive(Clone, Debug)]
pub struct TxBlock {
    pub messages: Vec<usize>,
    pub symbols: Vec<Complex64>,
    /// Unit-power shaped waveform.
    pub u: Vec<Complex64>,
}

/// Result of a drive-level search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSearch {
    pub drive: f64,
    pub achieved_dbm: f64,
    pub steps: usize,
    /// False when the target is beyond what the PA can deliver.
    pub converged: bool,
}

pub const POWER_TOLERANCE_DB: f64 = 0.05;
/// Bisection keeps going until this close, well inside the tolerance, so that
/// data-dependent power fluctuations of other blocks stay within it too.
pub const BISECTION_RESOLUTION_DB: f64 = 0.005;
pub const MAX_BISECTION_STEPS: usize = 40;
/// Symbols in the fixed calibration block used to measure output power.
pub const CALIBRATION_SYMBOLS: usize = 8192;
const MAX_DRIVE: f64 = 1e3;

/// Aggregated counts over one or more evaluation blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub symbols: usize,
    pub errors: usize,
    /// Sum over blocks of `mean|x_PA|^2 * block_samples`.
    pub pa_energy: f64,
    pub samples: usize,
}

impl BlockStats {
    pub fn merge(mut self, other: BlockStats) -> Self {
        self.symbols += other.symbols;
        self.errors += other.errors;
        self.pa_energy += other.pa_energy;
        self.samples += other.samples;
        self
    }

    pub fn ser(&self) -> f64 {
        self.errors as f64 / self.symbols.max(1) as f64
    }

    pub fn power_dbm(&self) -> f64 {
        power_dbm_from_mean_square(self.pa_energy / self.samples.max(1) as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub power_dbm: f64,
    pub nmse_db: f64,
    pub acpr_dbc: f64,
}

#[derive(Clone, Debug)]
pub struct Chain {
    pub config: ChainConfig,
    pub constellation: Constellation,
    pub shape: PulseShape,
    pub pa: PaModel,
    pub demapper: Demapper,
}

impl Chain {
    pub fn new(config: ChainConfig, pa: PaModel, demapper: Demapper) -> Result<Self> {
        config.validate()?;
        pa.validate()?;
        demapper.validate()?;
        if demapper.order() != config.order {
            return Err(Error::invalid("demapper", "constellation order differs from the chain"));
        }
        Ok(Self {
            constellation: Constellation::square_qam(config.order)?,
            shape: PulseShape::rrc(config.roll_off, config.span_symbols, config.oversampling)?,
            config,
            pa,
            demapper,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.config.sample_rate()
    }

    pub fn transmit<R: Rng + ?Sized>(&self, rng: &mut R, symbols: usize) -> Result<TxBlock> {
        let messages = rng::messages(rng, self.config.order, symbols);
        self.transmit_messages(messages)
    }

    pub fn transmit_messages(&self, messages: Vec<usize>) -> Result<TxBlock> {
        let symbols = self.constellation.map_messages(&messages)?;
        let shaped = modulate(&symbols, &self.shape, self.sample_rate())?;
        let k = (self.config.oversampling as f64).sqrt();
        let u = shaped.samples().iter().map(|z| z * k).collect();
        Ok(TxBlock { messages, symbols, u })
    }

    /// Fixes `model`'s normalization to the scale measured on `symbols`
    /// transmitted symbols, so evaluation no longer depends on the batch.
    pub fn freeze_scale(&self, model: &mut DpdModel, seed: u64, symbols: usize) -> Result<()> {
        let mut r = rng::stream(seed, "freeze");
        let tx = self.transmit(&mut r, symbols.max(1))?;
        let raw = model.forward_raw(&tx.u)?;
        model.frozen_scale = Some(crate::dpd::normalization_scale(&tx.u, &raw)?);
        Ok(())
    }

    /// Predistorts (if a model is given) and scales to the PA input.
    pub fn pa_input(&self, u: &[Complex64], dpd: Option<&DpdModel>, drive: f64) -> Result<Vec<Complex64>> {
        let x = match dpd {
            Some(m) => m.forward(u)?.samples,
            None => u.to_vec(),
        };
        Ok(x.into_iter().map(|z| z * drive).collect())
    }

    /// Applies the DAC full-scale clip to a PA input.
    pub fn limit_pa_input(&self, pa_in: &[Complex64]) -> Vec<Complex64> {
        match self.config.pa_input_limit {
            Some(v) => pa_in
                .iter()
                .map(|&z| {
                    let r = z.norm();
                    if r > v {
                        z * (v / r)
                    } else {
                        z
                    }
                })
                .collect(),
            None => pa_in.to_vec(),
        }
    }

    /// DAC clip, then the PA (with measurement noise if enabled).
    pub fn amplify<R: Rng + ?Sized>(&self, pa_in: &[Complex64], rng: &mut R) -> Result<Vec<Complex64>> {
        let x = self.limit_pa_input(pa_in);
        if self.config.pa_noise {
            self.pa.forward_slice(&x, rng)
        } else {
            self.pa.forward_noiseless(&x)
        }
    }

    pub fn add_channel_noise<R: Rng + ?Sized>(&self, y: &mut [Complex64], rng: &mut R) {
        rng::add_complex_noise(rng, y, self.config.channel_noise_std);
    }

    /// Matched filter, symbol-rate sampling and data-aided gain removal.
    pub fn receive(&self, y: &[Complex64], sent: &[Complex64]) -> Result<Vec<Complex64>> {
        let raw = matched_filter_slice(y, &self.shape)?;
        equalize(&raw, sent)
    }

    /// Noiseless PA output power for a fixed calibration block at `drive`.
    fn calibration_power(&self, u: &[Complex64], dpd: Option<&DpdModel>, drive: f64) -> Result<f64> {
        let x = self.limit_pa_input(&self.pa_input(u, dpd, drive)?);
        Ok(power_dbm_from_mean_square(mean_power(&self.pa.forward_noiseless(&x)?)))
    }

    /// Bisects the drive so the mean PA output power hits `target_dbm`.
    pub fn find_drive(&self, dpd: Option<&DpdModel>, target_dbm: f64, seed: u64) -> Result<DriveSearch> {
        let mut r = rng::stream(seed, "calibration");
        let tx = self.transmit(&mut r, CALIBRATION_SYMBOLS)?;
        // Small-signal starting bracket from the requested power.
        let mut hi = mean_square_from_dbm(target_dbm).sqrt() / 4.0;
        let mut steps = 0;
        let mut p_hi = self.calibration_power(&tx.u, dpd, hi)?;
        while p_hi < target_dbm {
            hi *= 2.0;
            steps += 1;
            if hi > MAX_DRIVE || steps >= MAX_BISECTION_STEPS {
                return Ok(DriveSearch {
                    drive: hi,
                    achieved_dbm: p_hi,
                    steps,
                    converged: false,
                });
            }
            p_hi = self.calibration_power(&tx.u, dpd, hi)?;
        }
        let mut lo = 0.0;
        let mut best = (hi, p_hi);
        while steps < MAX_BISECTION_STEPS {
            if (best.1 - target_dbm).abs() <= BISECTION_RESOLUTION_DB {
                return Ok(DriveSearch {
                    drive: best.0,
                    achieved_dbm: best.1,
                    steps,
                    converged: true,
                });
            }
            let mid = 0.5 * (lo + hi);
            let p = self.calibration_power(&tx.u, dpd, mid)?;
            steps += 1;
            if p < target_dbm {
                lo = mid;
            } else {
                hi = mid;
            }
            if (p - target_dbm).abs() < (best.1 - target_dbm).abs() {
                best = (mid, p);
            }
        }
        Ok(DriveSearch {
            drive: best.0,
            achieved_dbm: best.1,
            steps,
            converged: (best.1 - target_dbm).abs() <= POWER_TOLERANCE_DB,
        })
    }

    /// Runs one block through the complete chain and counts symbol errors.
    pub fn evaluate_block<R: Rng + ?Sized>(
        &self,
        dpd: Option<&DpdModel>,
        drive: f64,
        symbols: usize,
        rng: &mut R,
    ) -> Result<BlockStats> {
        let tx = self.transmit(rng, symbols)?;
        let x = self.pa_input(&tx.u, dpd, drive)?;
        let mut y = self.amplify(&x, rng)?;
        let pa_energy = mean_power(&y) * y.len() as f64;
        let samples = y.len();
        self.add_channel_noise(&mut y, rng);
        let rx = self.receive(&y, &tx.symbols)?;
        let decided = self.demapper.decide_symbols(&rx)?;
        let errors = decided.iter().zip(&tx.messages).filter(|(a, b)| a != b).count();
        Ok(BlockStats {
            symbols,
            errors,
            pa_energy,
            samples,
        })
    }

    /// SER over `blocks` blocks of `block_symbols`, each from its own
    /// sub-stream of `seed` so that blocks can also be run in parallel.
    pub fn evaluate_ser(
        &self,
        dpd: Option<&DpdModel>,
        drive: f64,
        blocks: usize,
        block_symbols: usize,
        seed: u64,
    ) -> Result<BlockStats> {
        let mut total = BlockStats::default();
        for b in 0..blocks {
            let mut r = rng::substream(seed, "eval", b as u64);
            total = total.merge(self.evaluate_block(dpd, drive, block_symbols, &mut r)?);
        }
        Ok(total)
    }

    /// NMSE of the PA output against the predistorter input, and the PA
    /// output ACPR, on one block.
    pub fn linearity(&self, dpd: Option<&DpdModel>, drive: f64, symbols: usize, seed: u64) -> Result<LinearityReport> {
        let mut r = rng::stream(seed, "linearity");
        let tx = self.transmit(&mut r, symbols)?;
        let x = self.pa_input(&tx.u, dpd, drive)?;
        let y = self.amplify(&x, &mut r)?;
        Ok(LinearityReport {
            power_dbm: power_dbm_from_mean_square(mean_power(&y)),
            nmse_db: nmse_db(&y, &tx.u)?,
            acpr_dbc: acpr_db(&y, self.sample_rate(), DEFAULT_SIGNAL_BW_HZ, DEFAULT_CHANNEL_SPACING_HZ)?,
        })
    }

    /// `Es/N0 = R * P_rx / sigma_ch^2` for a received power in dBm.
    pub fn es_n0(&self, power_dbm: f64) -> f64 {
        let p = mean_square_from_dbm(power_dbm);
        self.config.oversampling as f64 * p / (self.config.channel_noise_std * self.config.channel_noise_std)
    }

    /// Analytic SER of an ideal linear PA delivering `power_dbm`.
    pub fn theoretical_ser(&self, power_dbm: f64) -> Result<f64> {
        theoretical_ser_qam(self.config.order, self.es_n0(power_dbm))
    }
}

/// Noise variance seen by the demapper on equalized symbols during training:
/// exploration noise through the matched filter plus the receiver AWGN.
pub fn training_noise_var(policy_var: f64, oversampling: usize, channel_noise_std: f64, pa_power_dbm: f64) -> f64 {
    let r = oversampling as f64;
    let explore = policy_var / (r * (1.0 - policy_var));
    let channel = channel_noise_std * channel_noise_std / (r * mean_square_from_dbm(pa_power_dbm));
    explore + channel
}
