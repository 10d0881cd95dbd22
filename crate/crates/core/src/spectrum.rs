//! Welch power spectral density, ACPR and the gain-fitted error spectrum.

use alloc::vec;
use alloc::vec::Vec;

use microfft::Complex32;
use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::fit_gain;

pub const DEFAULT_SEGMENT: usize = 1024;
pub const DEFAULT_SIGNAL_BW_HZ: f64 = 55e6;
pub const DEFAULT_CHANNEL_SPACING_HZ: f64 = 55e6;

/// Two-sided density in V^2/Hz on fft-shifted bins (`-fs/2 .. fs/2 - df`).
#[derive(Clone, Debug, PartialEq)]
pub struct Psd {
    pub freqs_hz: Vec<f64>,
    pub density: Vec<f64>,
    pub segments: usize,
}

impl Psd {
    pub fn bin_width(&self) -> f64 {
        self.freqs_hz[1] - self.freqs_hz[0]
    }

    /// Integrated power of bins whose centre lies in `[lo, hi]`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let tol = 1e-9 * self.bin_width();
        self.freqs_hz
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= lo - tol && **f <= hi + tol)
            .map(|(_, d)| d)
            .sum::<f64>()
            * self.bin_width()
    }

    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub freqs_hz: Vec<f64>,
    /// dB relative to the estimate's reference level.
    pub psd_db: Vec<f64>,
    pub segment: usize,
    pub overlap: usize,
    pub segments: usize,
    pub window: &'static str,
}

fn fft_in_place(buf: &mut [Complex32]) -> Result<()> {
    macro_rules! dispatch {
        ($($n:literal => $f:ident),*) => {
            match buf.len() {
                $($n => {
                    let _ = microfft::complex::$f(buf.try_into().unwrap());
                })*
                n => return Err(Error::invalid("segment", alloc::format!("unsupported FFT size {n}"))),
            }
        };
    }
    dispatch!(256 => cfft_256, 512 => cfft_512, 1024 => cfft_1024, 2048 => cfft_2048, 4096 => cfft_4096);
    Ok(())
}

fn hann(n: usize) -> Vec<f64> {
    // Periodic window, the usual choice for spectral estimation.
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * core::f64::consts::PI * k as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed Welch estimate with 50% overlap.
pub fn welch(xs: &[Complex64], sample_rate: f64, segment: usize) -> Result<Psd> {
    if xs.len() < segment {
        return Err(Error::InsufficientData {
            needed: segment,
            got: xs.len(),
        });
    }
    if !(sample_rate > 0.0) {
        return Err(Error::invalid("sample_rate", "must be positive"));
    }
    let window = hann(segment);
    let norm = sample_rate * window.iter().map(|w| w * w).sum::<f64>();
    let hop = segment / 2;
    let segments = (xs.len() - segment) / hop + 1;
    let mut acc = vec![0.0; segment];
    let mut buf = vec![Complex32::new(0.0, 0.0); segment];
    for s in 0..segments {
        let chunk = &xs[s * hop..s * hop + segment];
        for ((b, x), w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex32::new((x.re * w) as f32, (x.im * w) as f32);
        }
        fft_in_place(&mut buf)?;
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += (b.re as f64).powi(2) + (b.im as f64).powi(2);
        }
    }
    let df = sample_rate / segment as f64;
    let half = segment / 2;
    let mut freqs_hz = Vec::with_capacity(segment);
    let mut density = Vec::with_capacity(segment);
    for k in 0..segment {
        let bin = (k + half) % segment;
        freqs_hz.push((k as f64 - half as f64) * df);
        density.push(acc[bin] / (segments as f64 * norm));
    }
    Ok(Psd {
        freqs_hz,
        density,
        segments,
    })
}

fn to_estimate(psd: &Psd, reference: f64, segment: usize) -> SpectrumEstimate {
    SpectrumEstimate {
        freqs_hz: psd.freqs_hz.clone(),
        psd_db: psd
            .density
            .iter()
            .map(|d| 10.0 * (d.max(f64::MIN_POSITIVE) / reference).log10())
            .collect(),
        segment,
        overlap: segment / 2,
        segments: psd.segments,
        window: "hann",
    }
}

/// PSD in dB relative to its own peak bin.
pub fn spectrum_db(xs: &[Complex64], sample_rate: f64) -> Result<SpectrumEstimate> {
    let psd = welch(xs, sample_rate, DEFAULT_SEGMENT)?;
    let peak = psd.density.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::ZeroSignal { what: "spectrum input" });
    }
    Ok(to_estimate(&psd, peak, DEFAULT_SEGMENT))
}

/// Worse of the two adjacent-channel to in-band power ratios, in dBc.
pub fn acpr_db(xs: &[Complex64], sample_rate: f64, signal_bw: f64, spacing: f64) -> Result<f64> {
    if sample_rate < 2.0 * (spacing + signal_bw / 2.0) {
        return Err(Error::invalid(
            "sample_rate",
            alloc::format!("{sample_rate} Hz cannot hold the adjacent channels"),
        ));
    }
    let psd = welch(xs, sample_rate, DEFAULT_SEGMENT)?;
    let inband = psd.band_power(-signal_bw / 2.0, signal_bw / 2.0);
    if !(inband > 0.0) {
        return Err(Error::ZeroSignal {
            what: "ACPR in-band power",
        });
    }
    let upper = psd.band_power(spacing - signal_bw / 2.0, spacing + signal_bw / 2.0);
    let lower = psd.band_power(-spacing - signal_bw / 2.0, -spacing + signal_bw / 2.0);
    Ok(10.0 * (upper.max(lower) / inband).log10())
}

/// Spectrum of `actual - alpha * ideal`, relative to the peak of `alpha * ideal`.
pub fn error_spectrum(actual: &[Complex64], ideal: &[Complex64], sample_rate: f64) -> Result<SpectrumEstimate> {
    let (est, _) = error_spectrum_with_psd(actual, ideal, sample_rate)?;
    Ok(est)
}

/// Like [`error_spectrum`], also returning the linear error density.
pub fn error_spectrum_with_psd(
    actual: &[Complex64],
    ideal: &[Complex64],
    sample_rate: f64,
) -> Result<(SpectrumEstimate, Psd)> {
    let alpha = fit_gain(actual, ideal)?;
    let scaled: Vec<Complex64> = ideal.iter().map(|z| alpha * z).collect();
    let error: Vec<Complex64> = actual.iter().zip(&scaled).map(|(a, s)| a - s).collect();
    let reference = welch(&scaled, sample_rate, DEFAULT_SEGMENT)?;
    let peak = reference.density.iter().cloned().fold(0.0, f64::max);
    let psd = welch(&error, sample_rate, DEFAULT_SEGMENT)?;
    Ok((to_estimate(&psd, peak, DEFAULT_SEGMENT), psd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::nmse_db;
    use crate::rng;
    use crate::signal::{mean_power, modulate, Constellation, PulseShape};

    const FS: f64 = 200e6;

    fn noise(seed: u64, n: usize) -> Vec<Complex64> {
        let mut r = rng::stream(seed, "psd");
        (0..n).map(|_| rng::complex_gaussian(&mut r, 1.0)).collect()
    }

    fn qam_block(seed: u64, symbols: usize) -> Vec<Complex64> {
        let c = Constellation::square_qam(64).unwrap();
        let mut r = rng::stream(seed, "qam");
        let m = rng::messages(&mut r, 64, symbols);
        let s = c.map_messages(&m).unwrap();
        modulate(&s, &PulseShape::rrc(0.1, 96, 4).unwrap(), FS)
            .unwrap()
            .into_samples()
    }

    #[test]
    fn parseval() {
        for xs in [noise(1, 1 << 16), qam_block(2, 1 << 14)] {
            let psd = welch(&xs, FS, 1024).unwrap();
            let rel = psd.total_power() / mean_power(&xs) - 1.0;
            assert!(rel.abs() < 0.01, "{rel}");
        }
    }

    #[test]
    fn bins_and_layout() {
        let est = spectrum_db(&noise(3, 4096), FS).unwrap();
        assert_eq!(est.freqs_hz.len(), 1024);
        assert_eq!(est.freqs_hz[512], 0.0);
        assert_eq!(est.freqs_hz[1], -est.freqs_hz[1023]);
        assert!(welch(&noise(3, 1000), FS, 1024).is_err());
        assert!(welch(&noise(3, 3000), FS, 1000).is_err());
    }

    #[test]
    fn white_noise_acpr_is_zero() {
        let a = acpr_db(&noise(4, 1 << 17), FS, 55e6, 55e6).unwrap();
        assert!(a.abs() < 0.3, "{a}");
    }

    #[test]
    fn clean_rrc_acpr_below_50() {
        let a = acpr_db(&qam_block(5, 1 << 14), FS, 55e6, 55e6).unwrap();
        assert!(a < -50.0, "{a}");
    }

    #[test]
    fn acpr_bandwidth_guard() {
        assert!(acpr_db(&noise(6, 8192), 150e6, 55e6, 55e6).is_err());
    }

    #[test]
    fn error_tone_peaks() {
        let ideal = qam_block(7, 1 << 13);
        let f0 = 70e6;
        let tone: Vec<Complex64> = (0..ideal.len())
            .map(|n| Complex64::from_polar(0.01, 2.0 * core::f64::consts::PI * f0 * n as f64 / FS))
            .collect();
        let actual: Vec<Complex64> = ideal.iter().zip(&tone).map(|(a, b)| a + b).collect();
        let est = error_spectrum(&actual, &ideal, FS).unwrap();
        let (k, peak) = est
            .psd_db
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
        assert!((est.freqs_hz[k] - f0).abs() < FS / 1024.0);
        for off in [4usize, 8, 16] {
            assert!(peak - est.psd_db[k + off] >= 30.0);
            assert!(peak - est.psd_db[k - off] >= 30.0);
        }
    }

    #[test]
    fn error_spectrum_parseval_matches_nmse() {
        let ideal = qam_block(8, 1 << 13);
        let mut r = rng::stream(9, "err");
        let actual: Vec<Complex64> = ideal
            .iter()
            .map(|z| z * Complex64::new(0.8, 0.3) + rng::complex_gaussian(&mut r, 1e-4) + z * z.norm_sqr() * 0.05)
            .collect();
        let (_, psd) = error_spectrum_with_psd(&actual, &ideal, FS).unwrap();
        let alpha = fit_gain(&actual, &ideal).unwrap();
        let ref_power = mean_power(&ideal) * alpha.norm_sqr();
        let implied = 10.0 * (psd.total_power() / ref_power).log10();
        let direct = nmse_db(&actual, &ideal).unwrap();
        assert!((implied - direct).abs() < 0.5, "{implied} vs {direct}");
    }

    #[test]
    fn perfect_match_hits_floor() {
        let ideal = qam_block(10, 4096);
        let actual: Vec<Complex64> = ideal.iter().map(|z| z * 2.0).collect();
        let est = error_spectrum(&actual, &ideal, FS).unwrap();
        assert!(est.psd_db.iter().all(|&v| v < -120.0));
    }
}
