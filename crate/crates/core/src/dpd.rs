//! Predistorter models: GMP and the residual real-valued time-delay network.
//!
//! Both expose a batch forward pass with output-power normalization and the
//! real Jacobian of `(Re x_n, Im x_n)` with respect to the flat parameter
//! vector. The normalization scale is a constant for differentiation.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::gmp::{self, GmpConfig};
use crate::nn::{Mlp, Workspace};
use crate::signal::mean_power;

/// Hidden widths of the residual time-delay network.
pub const R2TDNN_HIDDEN: [usize; 2] = [12, 12];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DpdKind {
    /// Coefficients stored as interleaved (re, im) pairs in canonical GMP order.
    Gmp { config: GmpConfig },
    /// Input window `u_n .. u_{n-memory}` interleaved as (re, im), two dense
    /// rectifier layers, a linear pair output, plus `u_n` added back.
    R2tdnn { memory: usize, hidden: [usize; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpdModel {
    pub kind: DpdKind,
    pub params: Vec<f64>,
    /// Evaluation-time normalization; `None` recomputes it per batch.
    pub frozen_scale: Option<f64>,
}

/// Predistorted batch and the normalization scale that was applied.
#[derive(Clone, Debug, PartialEq)]
pub struct DpdOutput {
    pub samples: Vec<Complex64>,
    pub scale: f64,
}

/// `sqrt(mean|u|^2 / mean|raw|^2)`.
pub fn normalization_scale(u: &[Complex64], raw: &[Complex64]) -> Result<f64> {
    let pr = mean_power(raw);
    if !(pr > 0.0) {
        return Err(Error::ZeroSignal {
            what: "predistorter output",
        });
    }
    let s = (mean_power(u) / pr).sqrt();
    if !s.is_finite() {
        return Err(Error::NonFinite {
            stage: "normalization",
            index: 0,
        });
    }
    Ok(s)
}

/// Per-sample scratch space for Jacobians.
#[derive(Clone, Debug)]
pub struct JacobianScratch {
    row: Vec<Complex64>,
    input: Vec<f64>,
    ws: Workspace,
}

impl DpdModel {
    pub fn identity_gmp(config: GmpConfig) -> Result<Self> {
        config.validate()?;
        let mut params = vec![0.0; 2 * config.basis_count()];
        params[0] = 1.0;
        Ok(Self {
            kind: DpdKind::Gmp { config },
            params,
            frozen_scale: None,
        })
    }

    pub fn from_gmp_coefficients(config: GmpConfig, coeffs: &[Complex64]) -> Result<Self> {
        config.validate()?;
        if coeffs.len() != config.basis_count() {
            return Err(Error::LengthMismatch {
                expected: config.basis_count(),
                found: coeffs.len(),
            });
        }
        Ok(Self {
            kind: DpdKind::Gmp { config },
            params: coeffs.iter().flat_map(|c| [c.re, c.im]).collect(),
            frozen_scale: None,
        })
    }

    /// Fresh network: hidden layers random, output layer zero, so the model
    /// starts as the identity through the residual path.
    pub fn r2tdnn<R: Rng + ?Sized>(memory: usize, rng: &mut R) -> Self {
        let kind = DpdKind::R2tdnn {
            memory,
            hidden: R2TDNN_HIDDEN,
        };
        let params = Self::network(&kind).unwrap().init(rng, true);
        Self {
            kind,
            params,
            frozen_scale: None,
        }
    }

    fn network(kind: &DpdKind) -> Option<Mlp> {
        match kind {
            DpdKind::R2tdnn { memory, hidden } => Some(Mlp::new(&[2 * (memory + 1), hidden[0], hidden[1], 2])),
            DpdKind::Gmp { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match &self.kind {
            DpdKind::Gmp { config } => {
                config.validate()?;
                2 * config.basis_count()
            }
            kind => Self::network(kind).unwrap().param_count(),
        };
        if self.params.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: self.params.len(),
            });
        }
        if let Some(s) = self.frozen_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("frozen_scale", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Input memory length K_1.
    pub fn memory(&self) -> usize {
        match &self.kind {
            DpdKind::Gmp { config } => config.max_lag(),
            DpdKind::R2tdnn { memory, .. } => *memory,
        }
    }

    /// Layer widths of the network kind; empty for GMP.
    pub fn layer_widths(&self) -> Vec<usize> {
        Self::network(&self.kind)
            .map(|n| n.widths().to_vec())
            .unwrap_or_default()
    }

    pub fn gmp_coefficients(&self) -> Option<Vec<Complex64>> {
        match self.kind {
            DpdKind::Gmp { .. } => Some(
                self.params
                    .chunks_exact(2)
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn scratch(&self) -> JacobianScratch {
        let (row, input, ws) = match &self.kind {
            DpdKind::Gmp { config } => (
                vec![Complex64::new(0.0, 0.0); config.basis_count()],
                Vec::new(),
                Workspace::default(),
            ),
            kind => {
                let net = Self::network(kind).unwrap();
                (Vec::new(), vec![0.0; net.input_width()], net.workspace())
            }
        };
        JacobianScratch { row, input, ws }
    }

    fn window(u: &[Complex64], n: usize, memory: usize, out: &mut [f64]) {
        for k in 0..=memory {
            let v = if k <= n { u[n - k] } else { Complex64::new(0.0, 0.0) };
            out[2 * k] = v.re;
            out[2 * k + 1] = v.im;
        }
    }

    /// Un-normalized model output for every sample.
    pub fn forward_raw(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        self.validate()?;
        let out = match &self.kind {
            DpdKind::Gmp { config } => {
                let coeffs = self.gmp_coefficients().unwrap();
                gmp::evaluate(u, config, &coeffs)
            }
            kind @ DpdKind::R2tdnn { memory, .. } => {
                let net = Self::network(kind).unwrap();
                let mut ws = net.workspace();
                let mut input = vec![0.0; net.input_width()];
                (0..u.len())
                    .map(|n| {
                        Self::window(u, n, *memory, &mut input);
                        let y = net.forward(&self.params, &input, &mut ws);
                        Complex64::new(y[0] + u[n].re, y[1] + u[n].im)
                    })
                    .collect()
            }
        };
        check_finite("predistorter output", &out)?;
        Ok(out)
    }

    /// Normalized predistorter output for the batch `u`.
    pub fn forward(&self, u: &[Complex64]) -> Result<DpdOutput> {
        let raw = self.forward_raw(u)?;
        let scale = match self.frozen_scale {
            Some(s) => s,
            None => normalization_scale(u, &raw)?,
        };
        Ok(DpdOutput {
            samples: raw.into_iter().map(|z| z * scale).collect(),
            scale,
        })
    }

    /// Real `2 x P` Jacobian of `scale * f_raw` at sample `n`, row-major
    /// (`out[..P]` is the real part row, `out[P..]` the imaginary part row).
    pub fn jacobian(&self, u: &[Complex64], n: usize, scale: f64, scratch: &mut JacobianScratch, out: &mut [f64]) {
        let p = self.params.len();
        debug_assert_eq!(out.len(), 2 * p);
        match &self.kind {
            DpdKind::Gmp { config } => {
                gmp::basis_row(u, n, config, &mut scratch.row);
                for (j, phi) in scratch.row.iter().enumerate() {
                    // d/d re(c) = phi, d/d im(c) = i * phi
                    out[2 * j] = scale * phi.re;
                    out[p + 2 * j] = scale * phi.im;
                    out[2 * j + 1] = -scale * phi.im;
                    out[p + 2 * j + 1] = scale * phi.re;
                }
            }
            kind @ DpdKind::R2tdnn { memory, .. } => {
                let net = Self::network(kind).unwrap();
                Self::window(u, n, *memory, &mut scratch.input);
                out.iter_mut().for_each(|v| *v = 0.0);
                let (re_row, im_row) = out.split_at_mut(p);
                net.forward(&self.params, &scratch.input, &mut scratch.ws);
                net.backward(&self.params, &mut scratch.ws, &[scale, 0.0], re_row, None);
                net.backward(&self.params, &mut scratch.ws, &[0.0, scale], im_row, None);
            }
        }
    }

    /// Adds `[g_re, g_im] . J_n` to `grad` without forming the Jacobian.
    pub fn accumulate_vjp(
        &self,
        u: &[Complex64],
        n: usize,
        scale: f64,
        weight: Complex64,
        scratch: &mut JacobianScratch,
        grad: &mut [f64],
    ) {
        match &self.kind {
            DpdKind::Gmp { config } => {
                gmp::basis_row(u, n, config, &mut scratch.row);
                let (gr, gi) = (weight.re * scale, weight.im * scale);
                for (j, phi) in scratch.row.iter().enumerate() {
                    grad[2 * j] += gr * phi.re + gi * phi.im;
                    grad[2 * j + 1] += -gr * phi.im + gi * phi.re;
                }
            }
            kind @ DpdKind::R2tdnn { memory, .. } => {
                let net = Self::network(kind).unwrap();
                Self::window(u, n, *memory, &mut scratch.input);
                net.forward(&self.params, &scratch.input, &mut scratch.ws);
                net.backward(
                    &self.params,
                    &mut scratch.ws,
                    &[weight.re * scale, weight.im * scale],
                    grad,
                    None,
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn signal(seed: u64, n: usize) -> Vec<Complex64> {
        let mut r = rng::stream(seed, "dpd");
        (0..n).map(|_| rng::complex_gaussian(&mut r, 1.0)).collect()
    }

    #[test]
    fn fresh_network_is_identity() {
        let mut r = rng::stream(1, "init");
        let m = DpdModel::r2tdnn(3, &mut r);
        assert_eq!(m.layer_widths(), vec![8, 12, 12, 2]);
        let u = signal(2, 64);
        let out = m.forward(&u).unwrap();
        assert!((out.scale - 1.0).abs() < 1e-12);
        for (a, b) in out.samples.iter().zip(&u) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_gmp_is_identity() {
        let m = DpdModel::identity_gmp(GmpConfig::default()).unwrap();
        let u = signal(3, 64);
        let out = m.forward(&u).unwrap();
        assert_eq!(out.samples, u);
    }

    #[test]
    fn normalization_matches_input_power() {
        let mut r = rng::stream(4, "p");
        let mut m = DpdModel::r2tdnn(3, &mut r);
        for p in m.params.iter_mut() {
            *p += r.random_range(-0.5..0.5);
        }
        let u = signal(5, 512);
        let x = m.forward(&u).unwrap().samples;
        assert!((mean_power(&x) / mean_power(&u) - 1.0).abs() < 1e-9);
        // normalizing an already normalized batch is a no-op
        let again = normalization_scale(&u, &x).unwrap();
        assert!((again - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gmp_jacobian_is_basis_row() {
        let cfg = GmpConfig::default();
        let mut m = DpdModel::identity_gmp(cfg).unwrap();
        let u = signal(6, 32);
        let p = m.param_count();
        let mut scratch = m.scratch();
        let mut j1 = vec![0.0; 2 * p];
        m.jacobian(&u, 10, 1.0, &mut scratch, &mut j1);
        let mut row = vec![Complex64::new(0.0, 0.0); cfg.basis_count()];
        gmp::basis_row(&u, 10, &cfg, &mut row);
        for (k, phi) in row.iter().enumerate() {
            assert_eq!(j1[2 * k], phi.re);
            assert_eq!(j1[p + 2 * k], phi.im);
        }
        m.params.iter_mut().for_each(|v| *v = 0.37);
        let mut j2 = vec![0.0; 2 * p];
        m.jacobian(&u, 10, 1.0, &mut scratch, &mut j2);
        assert_eq!(j1, j2);
        let zeros = vec![Complex64::new(0.0, 0.0); 32];
        m.jacobian(&zeros, 10, 1.0, &mut scratch, &mut j2);
        assert!(j2.iter().all(|&v| v == 0.0));
    }

    /// Perturbs weights away from rectifier kinks before differencing.
    fn kink_safe_network(seed: u64) -> (DpdModel, Vec<Complex64>) {
        let mut r = rng::stream(seed, "fd");
        let mut m = DpdModel::r2tdnn(3, &mut r);
        for p in m.params.iter_mut() {
            *p += r.random_range(-0.3..0.3);
        }
        (m, signal(seed + 100, 16))
    }

    #[test]
    fn r2tdnn_jacobian_matches_finite_differences() {
        for seed in 0..5 {
            let (m, u) = kink_safe_network(seed);
            let p = m.param_count();
            let n = 9;
            let scale = 0.8;
            let mut scratch = m.scratch();
            let mut jac = vec![0.0; 2 * p];
            m.jacobian(&u, n, scale, &mut scratch, &mut jac);
            let h = 1e-5;
            for i in 0..p {
                let mut a = m.clone();
                let mut b = m.clone();
                a.params[i] += h;
                b.params[i] -= h;
                let fa = a.forward_raw(&u).unwrap()[n] * scale;
                let fb = b.forward_raw(&u).unwrap()[n] * scale;
                let fd = (fa - fb) / (2.0 * h);
                for (got, want) in [(jac[i], fd.re), (jac[p + i], fd.im)] {
                    if want.abs() > 1e-8 {
                        assert!(((got - want) / want).abs() < 1e-5, "param {i}: {got} vs {want}");
                    } else {
                        assert!(got.abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn vjp_matches_jacobian() {
        let (m, u) = kink_safe_network(11);
        let p = m.param_count();
        let mut scratch = m.scratch();
        let mut jac = vec![0.0; 2 * p];
        m.jacobian(&u, 5, 1.3, &mut scratch, &mut jac);
        let w = Complex64::new(0.4, -0.9);
        let mut g = vec![0.0; p];
        m.accumulate_vjp(&u, 5, 1.3, w, &mut scratch, &mut g);
        for i in 0..p {
            assert!((g[i] - (w.re * jac[i] + w.im * jac[p + i])).abs() < 1e-12);
        }
        let gm = DpdModel::identity_gmp(GmpConfig::default()).unwrap();
        let pg = gm.param_count();
        let mut scratch = gm.scratch();
        let mut jac = vec![0.0; 2 * pg];
        gm.jacobian(&u, 7, 0.9, &mut scratch, &mut jac);
        let mut g = vec![0.0; pg];
        gm.accumulate_vjp(&u, 7, 0.9, w, &mut scratch, &mut g);
        for i in 0..pg {
            assert!((g[i] - (w.re * jac[i] + w.im * jac[pg + i])).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_forward_consistency_second_order() {
        let (m, u) = kink_safe_network(21);
        let p = m.param_count();
        let n = 12;
        let mut scratch = m.scratch();
        let mut jac = vec![0.0; 2 * p];
        m.jacobian(&u, n, 1.0, &mut scratch, &mut jac);
        let mut r = rng::stream(3, "dir");
        let mut v: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        let f0 = m.forward_raw(&u).unwrap()[n];
        let jv = Complex64::new(
            (0..p).map(|i| jac[i] * v[i]).sum(),
            (0..p).map(|i| jac[p + i] * v[i]).sum(),
        );
        let residual = |eps: f64| {
            let mut a = m.clone();
            a.params.iter_mut().zip(&v).for_each(|(t, d)| *t += eps * d);
            (a.forward_raw(&u).unwrap()[n] - f0 - jv * eps).norm()
        };
        let (r3, r4) = (residual(1e-3), residual(1e-4));
        // Piecewise-linear network: the remainder is at most second order.
        assert!(r4 <= r3 * 0.011 + 1e-13, "{r3} {r4}");
    }

    #[test]
    fn validation() {
        let mut m = DpdModel::identity_gmp(GmpConfig::default()).unwrap();
        m.params.pop();
        assert!(m.validate().is_err());
        assert!(m.forward(&signal(1, 8)).is_err());
    }
}
