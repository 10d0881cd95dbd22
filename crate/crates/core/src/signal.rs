//! Constellation mapping, RRC pulse shaping, matched filtering and power
//! accounting.
//!
//! Pulse shaping and matched filtering are cyclic over the block: a block of
//! `N` symbols maps to exactly `N * R` samples and back to `N` symbols without
//! losing the pulse tails of the edge symbols.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

/// Load impedance used for all power figures, ohms.
pub const LOAD_OHMS: f64 = 50.0;

/// Complex baseband samples (volts) with their sample rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexSignal {
    samples: Vec<Complex64>,
    sample_rate: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid("sample_rate", "must be positive and finite"));
        }
        check_finite("signal", &samples)?;
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    /// Same rate, samples multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|z| z * k).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

pub fn mean_power(xs: &[Complex64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().map(|z| z.norm_sqr()).sum::<f64>() / xs.len() as f64
}

/// Square Gray-labeled QAM with unit average symbol energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    order: usize,
    side: usize,
    /// Points in grid order: index `i * side + q`.
    points: Vec<Complex64>,
    /// message -> grid index
    labeling: Vec<usize>,
    scale: f64,
}

fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

fn inverse_gray(mut g: usize) -> usize {
    let mut i = g;
    while g > 0 {
        g >>= 1;
        i ^= g;
    }
    i
}

impl Constellation {
    /// `order` must be a power of four (4, 16, 64, 256, ...).
    pub fn square_qam(order: usize) -> Result<Self> {
        if order < 4 || !order.is_power_of_two() || !order.trailing_zeros().is_multiple_of(2) {
            return Err(Error::invalid(
                "constellation order",
                alloc::format!("{order} is not a power of four"),
            ));
        }
        let side = 1usize << (order.trailing_zeros() / 2);
        let bits = order.trailing_zeros() / 2;
        let mask = side - 1;
        // Mean energy of the odd-integer grid {±1, ±3, ...}^2 is 2(M-1)/3.
        let scale = 1.0 / (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let level = |i: usize| (2 * i) as f64 - (side as f64 - 1.0);
        let mut points = Vec::with_capacity(order);
        for i in 0..side {
            for q in 0..side {
                points.push(Complex64::new(level(i), level(q)) * scale);
            }
        }
        let labeling = (0..order)
            .map(|m| inverse_gray(m >> bits) * side + inverse_gray(m & mask))
            .collect();
        Ok(Self {
            order,
            side,
            points,
            labeling,
            scale,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Points per axis.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn labeling(&self) -> &[usize] {
        &self.labeling
    }

    /// Amplitude normalizer applied to the odd-integer grid.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn point(&self, message: usize) -> Complex64 {
        self.points[self.labeling[message]]
    }

    /// Message whose point is closest to `z` (per-axis slicing).
    pub fn nearest(&self, z: Complex64) -> usize {
        let half = (self.side as f64 - 1.0) * 0.5;
        let slice = |v: f64| {
            let idx = (v / self.scale * 0.5 + half).round();
            idx.max(0.0).min(self.side as f64 - 1.0) as usize
        };
        let bits = self.order.trailing_zeros() / 2;
        (gray(slice(z.re)) << bits) | gray(slice(z.im))
    }

    pub fn map_messages(&self, messages: &[usize]) -> Result<Vec<Complex64>> {
        messages
            .iter()
            .enumerate()
            .map(|(index, &m)| {
                if m < self.order {
                    Ok(self.point(m))
                } else {
                    Err(Error::MessageOutOfRange {
                        index,
                        value: m,
                        order: self.order,
                    })
                }
            })
            .collect()
    }
}

/// Unit-energy root-raised-cosine pulse sampled at `oversampling` samples per symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    taps: Vec<f64>,
    span_symbols: usize,
    oversampling: usize,
    roll_off: f64,
}

/// RRC impulse response at `t` symbol periods.
fn rrc_value(t: f64, beta: f64) -> f64 {
    if t == 0.0 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    if beta > 0.0 && (1.0 - (4.0 * beta * t).powi(2)).abs() < 1e-10 {
        let a = PI / (4.0 * beta);
        return beta * FRAC_1_SQRT_2 * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    num / (PI * t * (1.0 - (4.0 * beta * t).powi(2)))
}

impl PulseShape {
    pub fn rrc(roll_off: f64, span_symbols: usize, oversampling: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&roll_off) {
            return Err(Error::invalid("roll_off", "must lie in [0, 1]"));
        }
        if span_symbols < 8 {
            return Err(Error::invalid("span_symbols", "must be at least 8"));
        }
        if oversampling < 2 {
            return Err(Error::invalid("oversampling", "must be at least 2"));
        }
        // span * R is even, so the tap count is odd and the center is a sample.
        let half = (span_symbols * oversampling / 2) as isize;
        let mut taps: Vec<f64> = (-half..=half)
            .map(|k| rrc_value(k as f64 / oversampling as f64, roll_off))
            .collect();
        let energy = taps.iter().map(|h| h * h).sum::<f64>().sqrt();
        taps.iter_mut().for_each(|h| *h /= energy);
        Ok(Self {
            taps,
            span_symbols,
            oversampling,
            roll_off,
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn span_symbols(&self) -> usize {
        self.span_symbols
    }

    pub fn oversampling(&self) -> usize {
        self.oversampling
    }

    pub fn roll_off(&self) -> f64 {
        self.roll_off
    }

    /// Index of the center tap (group delay in samples).
    pub fn delay(&self) -> usize {
        self.taps.len() / 2
    }
}

/// Zero-insertion upsampling by R followed by cyclic RRC filtering.
///
/// Output sample `n * R` is centered on symbol `n`; the output has `N * R` samples.
pub fn modulate(symbols: &[Complex64], shape: &PulseShape, sample_rate: f64) -> Result<ComplexSignal> {
    if symbols.is_empty() {
        return Err(Error::ZeroSignal {
            what: "symbol sequence",
        });
    }
    check_finite("symbols", symbols)?;
    let r = shape.oversampling;
    let len = symbols.len() * r;
    let delay = shape.delay() as isize;
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (n, &s) in symbols.iter().enumerate() {
        let start = (n * r) as isize - delay;
        for (j, &h) in shape.taps.iter().enumerate() {
            let k = (start + j as isize).rem_euclid(len as isize) as usize;
            out[k] += s * h;
        }
    }
    ComplexSignal::new(out, sample_rate)
}

/// Cyclic matched filter (the taps are real and symmetric) sampled at every R-th sample.
pub fn matched_filter_downsample(y: &ComplexSignal, shape: &PulseShape) -> Result<Vec<Complex64>> {
    matched_filter_slice(y.samples(), shape)
}

pub(crate) fn matched_filter_slice(y: &[Complex64], shape: &PulseShape) -> Result<Vec<Complex64>> {
    let r = shape.oversampling;
    if y.is_empty() || !y.len().is_multiple_of(r) {
        return Err(Error::invalid(
            "signal length",
            alloc::format!("{} is not a positive multiple of R = {r}", y.len()),
        ));
    }
    let len = y.len() as isize;
    let delay = shape.delay() as isize;
    Ok((0..y.len() / r)
        .map(|n| {
            let start = (n * r) as isize - delay;
            shape
                .taps
                .iter()
                .enumerate()
                .map(|(j, &h)| y[(start + j as isize).rem_euclid(len) as usize] * h)
                .sum()
        })
        .collect())
}

/// Average power in dBm of an envelope in volts across [`LOAD_OHMS`]: `|x|^2 / (2 R)`.
pub fn measure_power_dbm(xs: &[Complex64]) -> Result<f64> {
    let p = mean_power(xs);
    if p <= 0.0 {
        return Err(Error::ZeroSignal {
            what: "power measurement input",
        });
    }
    Ok(power_dbm_from_mean_square(p))
}

pub fn power_dbm_from_mean_square(mean_square_volts: f64) -> f64 {
    10.0 * (mean_square_volts / (2.0 * LOAD_OHMS) * 1000.0).log10()
}

/// Mean |x|^2 (V^2) that corresponds to `dbm`.
pub fn mean_square_from_dbm(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0 * 2.0 * LOAD_OHMS
}

pub fn measure_papr(xs: &[Complex64]) -> Result<f64> {
    let p = mean_power(xs);
    if p <= 0.0 {
        return Err(Error::ZeroSignal { what: "PAPR input" });
    }
    let peak = xs.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    Ok(10.0 * (peak / p).log10())
}
