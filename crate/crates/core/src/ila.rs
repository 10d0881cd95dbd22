//! Indirect learning with a feedback ADC.
//!
//! The ADC samples the periodic band-unlimited reconstruction of each
//! full-rate block at its own rate, with no anti-alias filter, so content
//! beyond `F_adc / 2` folds into the capture. The capture is then brought
//! back to the full rate by periodic band-limited interpolation. A block of
//! `N` full-rate samples yields `round(N * F_adc / F_s)` ADC samples, so the
//! effective rate is quantized to `F_s / N`.

use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::chain::Chain;
use crate::dpd::{DpdKind, DpdModel};
use crate::error::{Error, Result};
use crate::gmp;
use crate::metrics::nmse_db;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng;
use crate::signal::{mean_power, power_dbm_from_mean_square, ComplexSignal};
use crate::spectrum::{acpr_db, DEFAULT_CHANNEL_SPACING_HZ, DEFAULT_SIGNAL_BW_HZ};
use crate::TrainRecord;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackAdc {
    pub sample_rate: f64,
}

impl FeedbackAdc {
    pub fn new(sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::invalid("adc sample_rate", "must be positive"));
        }
        Ok(Self { sample_rate })
    }

    fn check(&self, full_rate: f64) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(Error::invalid("adc sample_rate", "must be positive"));
        }
        if self.sample_rate > full_rate * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "adc sample_rate",
                alloc::format!("{} Hz exceeds the full rate {} Hz", self.sample_rate, full_rate),
            ));
        }
        Ok(())
    }

    fn is_full_rate(&self, full_rate: f64) -> bool {
        (self.sample_rate - full_rate).abs() <= 1e-12 * full_rate
    }
}

/// Value at fractional offset `tau` (in samples) of the periodic
/// trigonometric interpolation kernel for period `p`.
fn dirichlet(tau: f64, sin_pt: f64, sin_tp: f64, cos_tp: f64, p: usize) -> f64 {
    // sin(pi tau) / (p sin(pi tau / p)), with the Nyquist bin split for even p.
    if sin_tp.abs() < 1e-12 {
        // tau is a multiple of p.
        let k = (tau / p as f64).round() as i64;
        return if p.is_multiple_of(2) && k % 2 != 0 { -1.0 } else { 1.0 };
    }
    if p % 2 == 1 {
        sin_pt / (p as f64 * sin_tp)
    } else {
        sin_pt * cos_tp / (p as f64 * sin_tp)
    }
}

/// Evaluates the periodic band-limited interpolant of `xs` (period
/// `xs.len()` samples) at fractional sample positions `times`.
fn periodic_interp(xs: &[Complex64], times: &[f64]) -> Vec<Complex64> {
    let p = xs.len();
    let pf = p as f64;
    // sin/cos of pi n / p for every source index, for angle subtraction.
    let src: Vec<(f64, f64)> = (0..p).map(|n| (PI * n as f64 / pf).sin_cos()).collect();
    times
        .iter()
        .map(|&t| {
            let near = t.round();
            if (t - near).abs() < 1e-12 {
                return xs[(near as i64).rem_euclid(p as i64) as usize];
            }
            let (sa, ca) = (PI * t / pf).sin_cos();
            let sin_pt0 = (PI * (t - near)).sin();
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, (x, &(sb, cb))) in xs.iter().zip(&src).enumerate() {
                // sin(pi (t - n)) = (-1)^n sin(pi t); reduce around the nearest integer.
                let parity = ((near as i64 - n as i64).rem_euclid(2) == 1) as i32;
                let sin_pt = if parity == 1 { -sin_pt0 } else { sin_pt0 };
                let sin_tp = sa * cb - ca * sb;
                let cos_tp = ca * cb + sa * sb;
                acc += x * dirichlet(t - n as f64, sin_pt, sin_tp, cos_tp, p);
            }
            acc
        })
        .collect()
}

/// Raw ADC stream of one periodic block at the (quantized) ADC rate.
pub fn adc_samples(x: &ComplexSignal, adc: &FeedbackAdc) -> Result<ComplexSignal> {
    let fs = x.sample_rate();
    adc.check(fs)?;
    if adc.is_full_rate(fs) {
        return Ok(x.clone());
    }
    let n = x.len();
    let k = ((n as f64) * adc.sample_rate / fs).round() as usize;
    if k < 2 {
        return Err(Error::InsufficientData { needed: 2, got: k });
    }
    let step = n as f64 / k as f64;
    let times: Vec<f64> = (0..k).map(|j| j as f64 * step).collect();
    ComplexSignal::new(periodic_interp(x.samples(), &times), fs * k as f64 / n as f64)
}

/// What the full-rate postdistorter sees: the ADC stream interpolated back to
/// the original rate. Identity when the ADC runs at the full rate.
pub fn feedback_capture(x: &ComplexSignal, adc: &FeedbackAdc) -> Result<ComplexSignal> {
    let fs = x.sample_rate();
    adc.check(fs)?;
    if adc.is_full_rate(fs) {
        return Ok(x.clone());
    }
    let low = adc_samples(x, adc)?;
    let n = x.len();
    let k = low.len();
    let step = k as f64 / n as f64;
    let times: Vec<f64> = (0..n).map(|j| j as f64 * step).collect();
    ComplexSignal::new(periodic_interp(low.samples(), &times), fs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlaConfig {
    pub iterations: usize,
    pub blocks: usize,
    pub block_symbols: usize,
    /// Ridge on the column-equilibrated closed-form GMP postdistorter fit.
    pub ridge: f64,
    /// Fixed gain dividing the capture; `None` rescales the capture to the
    /// predistorter output power.
    pub target_gain: Option<f64>,
    /// PA input rms voltage during training.
    pub drive: f64,
    pub seed: u64,
    /// Adam settings for network postdistorters.
    pub nn_steps: usize,
    pub nn_batch: usize,
    pub nn_learning_rate: f64,
    /// Symbols used to freeze the returned model's normalization scale.
    pub freeze_symbols: usize,
}

impl Default for IlaConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            blocks: 8,
            block_symbols: 2048,
            ridge: 1e-5,
            target_gain: None,
            drive: 1.0,
            seed: 0,
            nn_steps: 3000,
            nn_batch: 256,
            nn_learning_rate: 1e-3,
            freeze_symbols: 16_384,
        }
    }
}

/// Data gathered in one ILA iteration.
#[derive(Clone, Debug)]
pub struct IlaData {
    /// Unit-power predistorter inputs.
    pub u: Vec<Vec<Complex64>>,
    /// Predistorter outputs (postdistorter targets).
    pub x: Vec<Vec<Complex64>>,
    /// Full-rate PA outputs.
    pub y: Vec<Vec<Complex64>>,
    /// Scaled captures (postdistorter inputs).
    pub z: Vec<Vec<Complex64>>,
}

/// Runs the current predistorter through the PA and the feedback ADC.
pub fn collect(
    chain: &Chain,
    model: &DpdModel,
    adc: &FeedbackAdc,
    cfg: &IlaConfig,
    iteration: usize,
) -> Result<IlaData> {
    let mut data = IlaData {
        u: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
    };
    for b in 0..cfg.blocks {
        let mut r = rng::substream(cfg.seed, "ila", (iteration * cfg.blocks + b) as u64);
        let tx = chain.transmit(&mut r, cfg.block_symbols)?;
        let x = model.forward(&tx.u)?.samples;
        let pa_in: Vec<Complex64> = x.iter().map(|z| z * cfg.drive).collect();
        let y = chain.amplify(&pa_in, &mut r)?;
        let captured = feedback_capture(&ComplexSignal::new(y.clone(), chain.sample_rate())?, adc)?.into_samples();
        data.u.push(tx.u);
        data.x.push(x);
        data.y.push(y);
        data.z.push(captured);
    }
    let scale = match cfg.target_gain {
        Some(g) if g > 0.0 => 1.0 / g,
        Some(_) => return Err(Error::invalid("target_gain", "must be positive")),
        None => {
            let px: f64 = data.x.iter().map(|b| mean_power(b)).sum();
            let pz: f64 = data.z.iter().map(|b| mean_power(b)).sum();
            if !(pz > 0.0) {
                return Err(Error::ZeroSignal {
                    what: "feedback capture",
                });
            }
            (px / pz).sqrt()
        }
    };
    for z in data.z.iter_mut() {
        z.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(data)
}

fn postdistorter_mse(model: &DpdModel, data: &IlaData) -> Result<f64> {
    let mut err = 0.0;
    let mut count = 0;
    for (z, x) in data.z.iter().zip(&data.x) {
        let f = model.forward_raw(z)?;
        err += f.iter().zip(x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        count += x.len();
    }
    Ok(err / count as f64)
}

/// Fits the postdistorter mapping captures to predistorter outputs, starting
/// from `model`. Returns the fitted model, its MSE and the last gradient norm.
pub fn fit_postdistorter(model: &DpdModel, data: &IlaData, cfg: &IlaConfig) -> Result<(DpdModel, f64, f64)> {
    match &model.kind {
        DpdKind::Gmp { config } => {
            let records: Vec<(&[Complex64], &[Complex64])> = data
                .z
                .iter()
                .zip(&data.x)
                .map(|(z, x)| (z.as_slice(), x.as_slice()))
                .collect();
            let fit = gmp::fit_records(&records, config, cfg.ridge)?;
            let post = DpdModel::from_gmp_coefficients(*config, &fit.coeffs)?;
            let mse = postdistorter_mse(&post, data)?;
            Ok((post, mse, 0.0))
        }
        DpdKind::R2tdnn { .. } => {
            let mut post = model.clone();
            post.frozen_scale = None;
            let mut index: Vec<(usize, usize)> = data
                .z
                .iter()
                .enumerate()
                .flat_map(|(b, z)| (0..z.len()).map(move |n| (b, n)))
                .collect();
            let mut r = rng::stream(cfg.seed, "ila-nn");
            let mut state = AdamState::new(post.param_count());
            let adam = AdamConfig::default();
            let mut scratch = post.scratch();
            let mut grad = vec![0.0; post.param_count()];
            let mut grad_norm = 0.0;
            let mut cursor = index.len();
            for _ in 0..cfg.nn_steps {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for _ in 0..cfg.nn_batch {
                    if cursor == index.len() {
                        index.shuffle(&mut r);
                        cursor = 0;
                    }
                    let (b, n) = index[cursor];
                    cursor += 1;
                    let z = &data.z[b];
                    let f = post.forward_raw(&z[n.saturating_sub(post.memory())..=n])?;
                    let e = *f.last().unwrap() - data.x[b][n];
                    let w = e * (2.0 / cfg.nn_batch as f64);
                    post.accumulate_vjp(z, n, 1.0, w, &mut scratch, &mut grad);
                }
                grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                adam_step(&mut post.params, &grad, &mut state, cfg.nn_learning_rate, &adam)?;
            }
            let mse = postdistorter_mse(&post, data)?;
            Ok((post, mse, grad_norm))
        }
    }
}

/// Trains a predistorter by indirect learning, returning the iterate with the
/// lowest measured NMSE (initial model included, normalization scale frozen)
/// and one record per fit.
pub fn ila_train(
    chain: &Chain,
    model: &DpdModel,
    adc: &FeedbackAdc,
    cfg: &IlaConfig,
) -> Result<(DpdModel, Vec<TrainRecord>)> {
    if cfg.iterations == 0 || cfg.blocks == 0 || cfg.block_symbols == 0 {
        return Err(Error::invalid(
            "ila config",
            "iterations, blocks and block_symbols must be positive",
        ));
    }
    if !(cfg.drive > 0.0) {
        return Err(Error::invalid("drive", "must be positive"));
    }
    model.validate()?;
    let mut current = model.clone();
    current.frozen_scale = None;
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut increases = 0;
    // Each capture also measures the predistorter that produced it; the last
    // fit gets one extra capture so every iterate is scored the same way.
    let mut best: Option<(f64, DpdModel)> = None;
    for it in 0..=cfg.iterations {
        let data = collect(chain, &current, adc, cfg, it)?;
        let y_all: Vec<Complex64> = data.y.concat();
        let u_all: Vec<Complex64> = data.u.concat();
        let nmse = nmse_db(&y_all, &u_all)?;
        if best.as_ref().is_none_or(|(b, _)| nmse < *b) {
            best = Some((nmse, current.clone()));
        }
        if it == cfg.iterations {
            break;
        }
        let (post, mse, grad_norm) = fit_postdistorter(&current, &data, cfg)?;
        if !mse.is_finite() {
            return Err(Error::Training(alloc::format!(
                "postdistorter MSE not finite at iteration {it}"
            )));
        }
        if let Some(prev) = records.last().map(|r: &TrainRecord| r.loss) {
            increases = if mse > prev { increases + 1 } else { 0 };
            if increases >= 3 {
                let trace: Vec<f64> = records.iter().map(|r| r.loss).chain([mse]).collect();
                return Err(Error::Training(alloc::format!("ILA diverged; MSE trace {trace:?}")));
            }
        }
        records.push(TrainRecord {
            iteration: it,
            loss: mse,
            grad_norm,
            power_dbm: power_dbm_from_mean_square(mean_power(&y_all)),
            ser: None,
            nmse_db: Some(nmse),
            acpr_dbc: Some(acpr_db(
                &data.y[0],
                chain.sample_rate(),
                DEFAULT_SIGNAL_BW_HZ,
                DEFAULT_CHANNEL_SPACING_HZ,
            )?),
        });
        current = post;
    }
    let (_, mut best) = best.expect("at least one capture");
    chain.freeze_scale(&mut best, cfg.seed, cfg.freeze_symbols)?;
    Ok((best, records))
}
