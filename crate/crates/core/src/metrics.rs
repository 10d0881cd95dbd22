//! Symbol error rate, analytic QAM SER and gain-fitted NMSE.
//!
//! Spectral metrics (ACPR, error spectrum) live in [`crate::spectrum`].

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;

use crate::error::{Error, Result};

/// Sentinel reported when the residual is exactly zero.
pub const NMSE_FLOOR_DB: f64 = -200.0;

pub fn ser(m: &[usize], m_hat: &[usize]) -> Result<f64> {
    if m.len() != m_hat.len() {
        return Err(Error::LengthMismatch {
            expected: m.len(),
            found: m_hat.len(),
        });
    }
    if m.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let errors = m.iter().zip(m_hat).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / m.len() as f64)
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / core::f64::consts::SQRT_2)
}

/// SER of Gray-coded square M-QAM over AWGN at linear `es_n0`.
pub fn theoretical_ser_qam(order: usize, es_n0: f64) -> Result<f64> {
    let side = (order as f64).sqrt().round() as usize;
    if order < 4 || side * side != order {
        return Err(Error::invalid("order", "square QAM order required"));
    }
    if !(es_n0 > 0.0) {
        return Err(Error::invalid("es_n0", "must be positive"));
    }
    let m = order as f64;
    let p_axis = 2.0 * (1.0 - 1.0 / side as f64) * q_function((3.0 * es_n0 / (m - 1.0)).sqrt());
    // 1 - (1 - p)^2 without cancellation at small p.
    Ok(p_axis * (2.0 - p_axis))
}

/// Least-squares complex gain `<y_ref, y> / <y_ref, y_ref>`.
pub fn fit_gain(y: &[Complex64], y_ref: &[Complex64]) -> Result<Complex64> {
    if y.len() != y_ref.len() {
        return Err(Error::LengthMismatch {
            expected: y_ref.len(),
            found: y.len(),
        });
    }
    let energy: f64 = y_ref.iter().map(|z| z.norm_sqr()).sum();
    if !(energy > 0.0) {
        return Err(Error::ZeroSignal { what: "NMSE reference" });
    }
    let cross: Complex64 = y_ref.iter().zip(y).map(|(r, v)| r.conj() * v).sum();
    Ok(cross / energy)
}

/// Gain-fitted NMSE in dB, floored at [`NMSE_FLOOR_DB`].
pub fn nmse_db(y: &[Complex64], y_ref: &[Complex64]) -> Result<f64> {
    let alpha = fit_gain(y, y_ref)?;
    let mut err = 0.0;
    let mut sig = 0.0;
    for (v, r) in y.iter().zip(y_ref) {
        let ideal = alpha * r;
        err += (v - ideal).norm_sqr();
        sig += ideal.norm_sqr();
    }
    if err == 0.0 || sig == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (err / sig).log10()).max(NMSE_FLOOR_DB))
}
