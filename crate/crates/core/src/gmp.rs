//! Generalized memory polynomial: basis construction, evaluation and
//! least-squares identification.
//!
//! Canonical term order (fixed, checkpoints depend on it):
//!
//! 1. aligned terms `x[n-l] * e(n-l)^(k-1)`, for `k = 1..=K_a`, then `l = 0..L_a`;
//! 2. lagging cross-terms `x[n-l] * e(n-l-m)^k`, for `k = 1..=K_b`, `l = 0..L_b`, `m = 1..=M_b`;
//! 3. leading cross-terms `x[n-l] * e(n-l+m)^k`, for `k = 1..=K_c`, `l = 0..L_c`, `m = 1..=M_c`;
//!
//! where `e(i) = |x[i]| / envelope_scale`, and samples outside the signal read
//! as zero. Cross-terms start at envelope exponent 1 so that no cross-term
//! duplicates an aligned column.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmpConfig {
    pub ka: usize,
    pub la: usize,
    pub kb: usize,
    pub lb: usize,
    pub mb: usize,
    pub kc: usize,
    pub lc: usize,
    pub mc: usize,
    /// Envelope normalizer; 1.0 means raw volts.
    #[serde(default = "one")]
    pub envelope_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for GmpConfig {
    /// Orders 7, memory 3, cross-term length 1.
    fn default() -> Self {
        Self::uniform(7, 3, 1)
    }
}

impl GmpConfig {
    pub fn uniform(order: usize, memory: usize, cross: usize) -> Self {
        Self {
            ka: order,
            la: memory,
            kb: order,
            lb: memory,
            mb: cross,
            kc: order,
            lc: memory,
            mc: cross,
            envelope_scale: 1.0,
        }
    }

    /// Memory polynomial without cross-terms.
    pub fn memory_polynomial(order: usize, memory: usize) -> Self {
        Self {
            kb: 0,
            lb: 0,
            mb: 0,
            kc: 0,
            lc: 0,
            mc: 0,
            ..Self::uniform(order, memory, 0)
        }
    }

    pub fn with_envelope_scale(mut self, scale: f64) -> Self {
        self.envelope_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ka == 0 || self.la == 0 {
            return Err(Error::invalid("gmp config", "K_a and L_a must be at least 1"));
        }
        if !(self.envelope_scale > 0.0 && self.envelope_scale.is_finite()) {
            return Err(Error::invalid("gmp config", "envelope scale must be positive"));
        }
        Ok(())
    }

    pub fn aligned_count(&self) -> usize {
        self.ka * self.la
    }

    pub fn lagging_count(&self) -> usize {
        self.kb * self.lb * self.mb
    }

    pub fn leading_count(&self) -> usize {
        self.kc * self.lc * self.mc
    }

    pub fn basis_count(&self) -> usize {
        self.aligned_count() + self.lagging_count() + self.leading_count()
    }

    /// Deepest past sample a row reads.
    pub fn max_lag(&self) -> usize {
        let a = self.la.saturating_sub(1);
        let b = if self.lagging_count() > 0 {
            self.lb - 1 + self.mb
        } else {
            0
        };
        let c = if self.leading_count() > 0 { self.lc - 1 } else { 0 };
        a.max(b).max(c)
    }

    /// Furthest future sample a row reads.
    pub fn max_lead(&self) -> usize {
        if self.leading_count() > 0 {
            self.mc
        } else {
            0
        }
    }

    /// Coefficients of the pass-through model (aligned k=1, l=0 tap = 1).
    pub fn identity_coefficients(&self) -> Vec<Complex64> {
        let mut c = vec![Complex64::new(0.0, 0.0); self.basis_count()];
        c[0] = Complex64::new(1.0, 0.0);
        c
    }

    /// Position of the aligned term of order `k` (1-based) and lag `l`.
    pub fn aligned_index(&self, k: usize, l: usize) -> usize {
        (k - 1) * self.la + l
    }
}

#[inline]
fn at(x: &[Complex64], i: isize) -> Complex64 {
    if i < 0 || i as usize >= x.len() {
        Complex64::new(0.0, 0.0)
    } else {
        x[i as usize]
    }
}

/// Fill `row` (length `basis_count`) with the basis terms at sample `n`.
pub fn basis_row(x: &[Complex64], n: usize, cfg: &GmpConfig, row: &mut [Complex64]) {
    debug_assert_eq!(row.len(), cfg.basis_count());
    let inv = 1.0 / cfg.envelope_scale;
    let env = |i: isize| at(x, i).norm() * inv;
    let n = n as isize;
    let mut p = 0;
    for k in 1..=cfg.ka {
        for l in 0..cfg.la as isize {
            let v = at(x, n - l);
            row[p] = v * env(n - l).powi(k as i32 - 1);
            p += 1;
        }
    }
    for k in 1..=cfg.kb {
        for l in 0..cfg.lb as isize {
            for m in 1..=cfg.mb as isize {
                row[p] = at(x, n - l) * env(n - l - m).powi(k as i32);
                p += 1;
            }
        }
    }
    for k in 1..=cfg.kc {
        for l in 0..cfg.lc as isize {
            for m in 1..=cfg.mc as isize {
                row[p] = at(x, n - l) * env(n - l + m).powi(k as i32);
                p += 1;
            }
        }
    }
}

/// Row-major `len x basis_count` regression matrix.
pub fn basis_matrix(x: &[Complex64], cfg: &GmpConfig) -> Vec<Complex64> {
    let p = cfg.basis_count();
    let mut out = vec![Complex64::new(0.0, 0.0); x.len() * p];
    for (n, row) in out.chunks_exact_mut(p).enumerate() {
        basis_row(x, n, cfg, row);
    }
    out
}

pub fn evaluate(x: &[Complex64], cfg: &GmpConfig, coeffs: &[Complex64]) -> Vec<Complex64> {
    let p = cfg.basis_count();
    assert_eq!(coeffs.len(), p, "coefficient count must match the basis");
    let mut row = vec![Complex64::new(0.0, 0.0); p];
    (0..x.len())
        .map(|n| {
            basis_row(x, n, cfg, &mut row);
            row.iter().zip(coeffs).map(|(b, c)| b * c).sum()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmpFit {
    pub coeffs: Vec<Complex64>,
    /// Residual energy relative to target energy, dB.
    pub nmse_db: f64,
}

/// Default ridge on the column-equilibrated regressor.
pub const DEFAULT_RIDGE: f64 = 1e-9;

/// Least-squares GMP identification over several (input, output) records.
///
/// Columns are first scaled to unit norm; the fit then minimizes
/// `sum |out - row * c|^2 + ridge * sum_j |a_j|^2 |c_j|^2` (a Tikhonov penalty
/// on the equilibrated coefficients, invariant to the units of each basis
/// term), solved by Householder QR on the ridge-augmented system. With
/// `ridge > 0` the augmented system is full rank by construction.
pub fn fit_records(records: &[(&[Complex64], &[Complex64])], cfg: &GmpConfig, ridge: f64) -> Result<GmpFit> {
    cfg.validate()?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid("ridge", "must be finite and non-negative"));
    }
    let p = cfg.basis_count();
    let mut rows = 0;
    for (xin, xout) in records {
        if xin.len() != xout.len() {
            return Err(Error::LengthMismatch {
                expected: xin.len(),
                found: xout.len(),
            });
        }
        rows += xin.len();
    }
    if rows < 4 * p {
        return Err(Error::InsufficientData {
            needed: 4 * p,
            got: rows,
        });
    }
    let extra = if ridge > 0.0 { p } else { 0 };
    let mut a = DMatrix::<Complex64>::zeros(rows + extra, p);
    let mut b = DVector::<Complex64>::zeros(rows + extra);
    let mut row = vec![Complex64::new(0.0, 0.0); p];
    let mut r0 = 0;
    for (xin, xout) in records {
        for n in 0..xin.len() {
            basis_row(xin, n, cfg, &mut row);
            for (j, v) in row.iter().enumerate() {
                a[(r0 + n, j)] = *v;
            }
            b[r0 + n] = xout[n];
        }
        r0 += xin.len();
    }
    let col_norm: Vec<f64> = (0..p)
        .map(|j| {
            a.view((0, j), (rows, 1))
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let scale: Vec<f64> = col_norm.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 1.0 }).collect();
    for j in 0..p {
        for i in 0..rows {
            a[(i, j)] *= scale[j];
        }
        if extra > 0 {
            a[(rows + j, j)] = Complex64::new(ridge.sqrt(), 0.0);
        }
    }
    let qr = a.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].norm()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
    if condition > 1e12 || !condition.is_finite() {
        return Err(Error::IllConditioned { condition });
    }
    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let rhs = qtb.rows(0, p).into_owned();
    let sol = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::IllConditioned { condition })?;
    let coeffs: Vec<Complex64> = sol.iter().zip(&scale).map(|(c, s)| c * *s).collect();

    let mut err = 0.0;
    let mut energy = 0.0;
    for (xin, xout) in records {
        let fitted = evaluate(xin, cfg, &coeffs);
        err += fitted
            .iter()
            .zip(xout.iter())
            .map(|(f, y)| (f - y).norm_sqr())
            .sum::<f64>();
        energy += xout.iter().map(|y| y.norm_sqr()).sum::<f64>();
    }
    let nmse_db = if energy == 0.0 || err == 0.0 {
        crate::metrics::NMSE_FLOOR_DB
    } else {
        (10.0 * (err / energy).log10()).max(crate::metrics::NMSE_FLOOR_DB)
    };
    Ok(GmpFit { coeffs, nmse_db })
}

pub fn fit(x_in: &[Complex64], x_out: &[Complex64], cfg: &GmpConfig, ridge: f64) -> Result<GmpFit> {
    fit_records(&[(x_in, x_out)], cfg, ridge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn noise(seed: u64, n: usize, std: f64) -> Vec<Complex64> {
        let mut r = rng::stream(seed, "gmp");
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        rng::add_complex_noise(&mut r, &mut v, std);
        v
    }

    #[test]
    fn counts() {
        let cfg = GmpConfig::default();
        assert_eq!(cfg.basis_count(), 63);
        assert_eq!(cfg.max_lag(), 3);
        assert_eq!(cfg.max_lead(), 1);
        assert_eq!(GmpConfig::memory_polynomial(5, 2).basis_count(), 10);
    }

    #[test]
    fn zero_input_gives_zero_row() {
        let cfg = GmpConfig::default();
        let x = vec![Complex64::new(0.0, 0.0); 8];
        let mut row = vec![Complex64::new(1.0, 1.0); 63];
        basis_row(&x, 4, &cfg, &mut row);
        assert!(row.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn linear_config_row_is_sample() {
        let cfg = GmpConfig::memory_polynomial(1, 1);
        let x = noise(1, 16, 1.0);
        let mut row = vec![Complex64::new(0.0, 0.0); 1];
        for n in 0..16 {
            basis_row(&x, n, &cfg, &mut row);
            assert_eq!(row[0], x[n]);
        }
    }

    #[test]
    fn row_terms_follow_canonical_order() {
        let cfg = GmpConfig::uniform(2, 2, 1);
        let x: Vec<Complex64> = (1..=5).map(|k| Complex64::new(k as f64, 0.5)).collect();
        let mut row = vec![Complex64::new(0.0, 0.0); cfg.basis_count()];
        basis_row(&x, 2, &cfg, &mut row);
        let e = |i: usize| x[i].norm();
        let want = [
            x[2],
            x[1],
            x[2] * e(2),
            x[1] * e(1),
            // lagging: k=1 (l=0, l=1), k=2
            x[2] * e(1),
            x[1] * e(0),
            x[2] * e(1).powi(2),
            x[1] * e(0).powi(2),
            // leading
            x[2] * e(3),
            x[1] * e(2),
            x[2] * e(3).powi(2),
            x[1] * e(2).powi(2),
        ];
        for (a, b) in row.iter().zip(want.iter()) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn fit_recovers_known_coefficients() {
        let cfg = GmpConfig::uniform(5, 2, 1);
        let x = noise(2, 4000, 0.7);
        let mut r = rng::stream(3, "c");
        let truth: Vec<Complex64> = (0..cfg.basis_count())
            .map(|k| rng::complex_gaussian(&mut r, 1.0) * 0.3f64.powi(k as i32 / 4))
            .collect();
        let y = evaluate(&x, &cfg, &truth);
        let fit = fit(&x, &y, &cfg, 0.0).unwrap();
        assert!(fit.nmse_db < -100.0, "{}", fit.nmse_db);
        for (a, b) in fit.coeffs.iter().zip(&truth) {
            assert!((a - b).norm() <= 1e-6 * b.norm().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn fit_of_pure_gain() {
        let cfg = GmpConfig::default();
        let x = noise(4, 2000, 1.0);
        let y: Vec<_> = x.iter().map(|z| z * 3.0).collect();
        let fit = fit(&x, &y, &cfg, 0.0).unwrap();
        assert!((fit.coeffs[0] - Complex64::new(3.0, 0.0)).norm() < 1e-8);
        assert!(fit.coeffs[1..].iter().all(|c| c.norm() < 1e-8));
    }

    #[test]
    fn fit_rejects_short_data() {
        let cfg = GmpConfig::default();
        let x = noise(5, 40, 1.0);
        assert!(matches!(fit(&x, &x, &cfg, 0.0), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn rank_deficient_needs_ridge() {
        let cfg = GmpConfig::memory_polynomial(3, 2);
        // Constant-envelope input: |x|^k columns are multiples of the k=1 columns.
        let x: Vec<Complex64> = (0..400).map(|n| Complex64::from_polar(1.0, 0.37 * n as f64)).collect();
        assert!(matches!(fit(&x, &x, &cfg, 0.0), Err(Error::IllConditioned { .. })));
        let f = fit(&x, &x, &cfg, 1e-6).unwrap();
        assert!(f.nmse_db < -60.0);
    }
}
