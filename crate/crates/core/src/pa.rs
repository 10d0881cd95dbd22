//! Power-amplifier behavioral models.

use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::gmp::{self, GmpConfig};
use crate::rng;
use crate::signal::{modulate, ComplexSignal, Constellation, PulseShape};

/// Saturation magnitude of the reference PA, volts (36.4 dBm into 50 ohm).
pub const REFERENCE_SATURATION_V: f64 = 20.9;
/// Measurement noise standard deviation of the reference PA, volts.
pub const REFERENCE_NOISE_STD_V: f64 = 0.053;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PaKind {
    Gmp {
        config: GmpConfig,
        coeffs: Vec<Complex64>,
    },
    /// Linear gain up to `saturation` volts, then a hard magnitude clip.
    LinearClipping {
        gain: f64,
        saturation: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaModel {
    pub kind: PaKind,
    /// Std of the circular Gaussian measurement noise added at the output, volts.
    pub noise_std: f64,
}

impl PaModel {
    pub fn gmp(config: GmpConfig, coeffs: Vec<Complex64>, noise_std: f64) -> Result<Self> {
        let pa = Self {
            kind: PaKind::Gmp { config, coeffs },
            noise_std,
        };
        pa.validate()?;
        Ok(pa)
    }

    pub fn linear_clipping(gain: f64, saturation: f64, noise_std: f64) -> Result<Self> {
        let pa = Self {
            kind: PaKind::LinearClipping { gain, saturation },
            noise_std,
        };
        pa.validate()?;
        Ok(pa)
    }

    /// Noiseless unit-gain pass-through.
    pub fn identity() -> Self {
        Self {
            kind: PaKind::LinearClipping {
                gain: 1.0,
                saturation: f64::INFINITY,
            },
            noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std", "must be finite and non-negative"));
        }
        match &self.kind {
            PaKind::Gmp { config, coeffs } => {
                config.validate()?;
                if coeffs.len() != config.basis_count() {
                    return Err(Error::LengthMismatch {
                        expected: config.basis_count(),
                        found: coeffs.len(),
                    });
                }
            }
            PaKind::LinearClipping { gain, saturation } => {
                if !gain.is_finite() {
                    return Err(Error::invalid("gain", "must be finite"));
                }
                if !(*saturation > 0.0) {
                    return Err(Error::invalid("saturation", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Past samples the model reads (K_2).
    pub fn memory(&self) -> usize {
        match &self.kind {
            PaKind::Gmp { config, .. } => config.max_lag(),
            PaKind::LinearClipping { .. } => 0,
        }
    }

    pub fn without_noise(&self) -> Self {
        Self {
            noise_std: 0.0,
            ..self.clone()
        }
    }

    pub fn forward_noiseless(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let out = match &self.kind {
            PaKind::Gmp { config, coeffs } => gmp::evaluate(x, config, coeffs),
            PaKind::LinearClipping { gain, saturation } => x
                .iter()
                .map(|&z| {
                    let y = z * *gain;
                    let mag = y.norm();
                    if mag <= *saturation {
                        y
                    } else {
                        y * (*saturation / mag)
                    }
                })
                .collect(),
        };
        check_finite("PA output", &out)?;
        Ok(out)
    }

    /// PA output with measurement noise.
    pub fn forward_slice<R: Rng + ?Sized>(&self, x: &[Complex64], rng: &mut R) -> Result<Vec<Complex64>> {
        let mut out = self.forward_noiseless(x)?;
        rng::add_complex_noise(rng, &mut out, self.noise_std);
        Ok(out)
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &ComplexSignal, rng: &mut R) -> Result<ComplexSignal> {
        ComplexSignal::new(self.forward_slice(x.samples(), rng)?, x.sample_rate())
    }
}

/// Saturating PA with memory used to synthesize the reference GMP: a Rapp
/// AM/AM curve with a smooth AM/PM rotation, followed by a short output FIR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPa {
    /// Small-signal voltage gain.
    pub gain: f64,
    pub saturation: f64,
    /// Rapp knee sharpness.
    pub smoothness: f64,
    /// Phase rotation approached at deep saturation, radians.
    pub am_pm: f64,
    pub fir: Vec<Complex64>,
}

impl Default for CanonicalPa {
    fn default() -> Self {
        Self {
            gain: 10.0,
            saturation: REFERENCE_SATURATION_V,
            smoothness: 2.5,
            am_pm: 0.25,
            fir: alloc::vec![
                Complex64::new(1.0, 0.0),
                Complex64::from_polar(0.2, -0.7),
                Complex64::new(-0.06, 0.0),
            ],
        }
    }
}

impl CanonicalPa {
    fn static_nonlinearity(&self, z: Complex64) -> Complex64 {
        let r = z.norm();
        if r == 0.0 {
            return z;
        }
        let drive = self.gain * r / self.saturation;
        let p2 = 2.0 * self.smoothness;
        let amp = self.gain * r / (1.0 + drive.powf(p2)).powf(1.0 / p2);
        let phase = self.am_pm * drive * drive / (1.0 + drive * drive);
        Complex64::from_polar(amp, z.arg() + phase)
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let z: Vec<Complex64> = x.iter().map(|&v| self.static_nonlinearity(v)).collect();
        (0..z.len())
            .map(|n| {
                self.fir
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k <= n)
                    .map(|(k, h)| h * z[n - k])
                    .sum()
            })
            .collect()
    }

    /// Response to inputs far below saturation: `gain * (fir * x)`.
    pub fn small_signal(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..x.len())
            .map(|n| {
                self.fir
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k <= n)
                    .map(|(k, h)| h * x[n - k] * self.gain)
                    .sum()
            })
            .collect()
    }
}

/// Drive levels (input rms volts) covered by the reference identification.
///
/// The top two levels push peaks well past input saturation so the fitted
/// polynomial keeps compressing for the peak-expanded waveforms a
/// predistorter produces, instead of diverging just outside the nominal range.
pub const REFERENCE_FIT_DRIVES: [f64; 10] = [0.1, 0.4, 0.7, 1.0, 1.2, 1.4, 1.6, 1.8, 2.2, 2.8];

/// Unit-power 64-QAM / RRC(0.1) / R=4 block like the operating waveform.
pub(crate) fn table_waveform<R: Rng + ?Sized>(rng: &mut R, symbols: usize) -> Result<Vec<Complex64>> {
    let qam = Constellation::square_qam(64)?;
    let shape = PulseShape::rrc(0.1, 96, 4)?;
    let syms = qam.map_messages(&rng::messages(rng, 64, symbols))?;
    let u = modulate(&syms, &shape, 200e6)?;
    let k = 1.0 / u.mean_power().sqrt();
    Ok(u.samples().iter().map(|z| z * k).collect())
}

/// Deterministic stand-in for a measured PA: the [`CanonicalPa`] identified by
/// a K=7, L=3, M=1 GMP over the drive range of [`REFERENCE_FIT_DRIVES`],
/// with 0.053 V measurement noise.
pub fn make_reference_pa(seed: u64) -> Result<PaModel> {
    let (pa, _) = make_reference_pa_with_report(seed)?;
    Ok(pa)
}

/// As [`make_reference_pa`], also returning the identification NMSE in dB.
pub fn make_reference_pa_with_report(seed: u64) -> Result<(PaModel, f64)> {
    let canonical = CanonicalPa::default();
    let mut rng = rng::stream(seed, "pa-fit");
    let mut inputs = Vec::new();
    for &drive in REFERENCE_FIT_DRIVES.iter() {
        let u: Vec<Complex64> = table_waveform(&mut rng, 1024)?.into_iter().map(|z| z * drive).collect();
        inputs.push(u);
    }
    let outputs: Vec<Vec<Complex64>> = inputs.iter().map(|u| canonical.apply(u)).collect();
    let records: Vec<(&[Complex64], &[Complex64])> = inputs
        .iter()
        .zip(&outputs)
        .map(|(a, b)| (a.as_slice(), b.as_slice()))
        .collect();
    let cfg = GmpConfig::default();
    let fit = gmp::fit_records(&records, &cfg, gmp::DEFAULT_RIDGE)?;
    if fit.nmse_db > -35.0 {
        return Err(Error::Training(alloc::format!(
            "reference PA identification NMSE {:.1} dB is worse than -35 dB",
            fit.nmse_db
        )));
    }
    Ok((PaModel::gmp(cfg, fit.coeffs, REFERENCE_NOISE_STD_V)?, fit.nmse_db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::nmse_db;
    use alloc::vec;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn linear_clipping_cases() {
        let mut r = rng::stream(0, "pa");
        let id = PaModel::identity();
        let x = vec![c(1.0, 2.0), c(-3.0, 0.5), c(0.0, 0.0)];
        assert_eq!(id.forward_slice(&x, &mut r).unwrap(), x);

        let pa = PaModel::linear_clipping(2.0, 1.0, 0.0).unwrap();
        assert_eq!(pa.forward_noiseless(&[c(1.0, 0.0)]).unwrap(), vec![c(1.0, 0.0)]);
        assert_eq!(pa.forward_noiseless(&[c(0.25, 0.0)]).unwrap(), vec![c(0.5, 0.0)]);
    }

    #[test]
    fn clipping_preserves_phase() {
        let pa = PaModel::linear_clipping(3.0, 0.7, 0.0).unwrap();
        for k in 0..50 {
            let z = Complex64::from_polar(0.05 * (k + 1) as f64, 0.3 * k as f64 - 2.0);
            let y = pa.forward_noiseless(&[z]).unwrap()[0];
            assert!((y.arg() - z.arg()).abs() < 1e-12);
            assert!(y.norm() <= 0.7 + 1e-12);
        }
    }

    #[test]
    fn gmp_linear_tap_scales() {
        let cfg = GmpConfig::default();
        let mut coeffs = vec![c(0.0, 0.0); cfg.basis_count()];
        coeffs[0] = c(0.5, -1.5);
        let pa = PaModel::gmp(cfg, coeffs, 0.0).unwrap();
        let x = vec![c(1.0, 0.0), c(0.3, -0.2), c(2.0, 2.0)];
        let y = pa.forward_noiseless(&x).unwrap();
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b * c(0.5, -1.5)).norm() < 1e-14);
        }
    }

    #[test]
    fn coefficient_count_checked() {
        assert!(PaModel::gmp(GmpConfig::default(), vec![c(1.0, 0.0)], 0.0).is_err());
        assert!(PaModel::linear_clipping(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn non_finite_output_reported_with_index() {
        let pa = PaModel::linear_clipping(1.0, 10.0, 0.0).unwrap();
        let x = vec![c(1.0, 0.0), c(f64::NAN, 0.0)];
        assert!(matches!(
            pa.forward_noiseless(&x),
            Err(Error::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn measurement_noise_has_configured_power() {
        let pa = PaModel::linear_clipping(1.0, f64::INFINITY, 0.053).unwrap();
        let x = vec![c(0.0, 0.0); 200_000];
        let mut r = rng::stream(9, "n");
        let y = pa.forward_slice(&x, &mut r).unwrap();
        let p = crate::signal::mean_power(&y);
        assert!((p / (0.053 * 0.053) - 1.0).abs() < 0.02);
    }

    #[test]
    fn reference_pa_is_deterministic_and_accurate() {
        let (a, nmse) = make_reference_pa_with_report(1).unwrap();
        let b = make_reference_pa(1).unwrap();
        assert_eq!(a, b);
        assert!(nmse < -35.0, "{nmse}");
        assert_eq!(a.noise_std, REFERENCE_NOISE_STD_V);
        assert_eq!(a.memory(), 3);
    }

    #[test]
    fn reference_pa_matches_canonical_on_held_out_data() {
        let pa = make_reference_pa(1).unwrap();
        let canonical = CanonicalPa::default();
        let mut r = rng::stream(99, "held-out");
        for drive in [0.3, 1.0, 1.5] {
            let u: Vec<_> = table_waveform(&mut r, 1024)
                .unwrap()
                .iter()
                .map(|z| z * drive)
                .collect();
            let want = canonical.apply(&u);
            let got = pa.forward_noiseless(&u).unwrap();
            let err: f64 = want.iter().zip(&got).map(|(a, b)| (a - b).norm_sqr()).sum();
            let e: f64 = want.iter().map(|a| a.norm_sqr()).sum();
            let db = 10.0 * (err / e).log10();
            assert!(db < -35.0, "drive {drive}: {db}");
        }
    }

    #[test]
    fn reference_pa_small_signal_is_linear() {
        let pa = make_reference_pa(1).unwrap();
        let canonical = CanonicalPa::default();
        let mut r = rng::stream(5, "ss");
        let u: Vec<_> = table_waveform(&mut r, 1024).unwrap().iter().map(|z| z * 0.05).collect();
        let got = pa.forward_noiseless(&u).unwrap();
        let lin = canonical.small_signal(&u);
        let db = nmse_db(&got, &lin).unwrap();
        assert!(db < -40.0, "{db}");
    }
}
