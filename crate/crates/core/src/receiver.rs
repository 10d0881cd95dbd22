//! Demapping received symbols to message probabilities, hard decisions and
//! the per-symbol cross-entropy that drives policy-gradient training.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::fit_gain;
use crate::nn::Mlp;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{self, SimRng};
use crate::signal::Constellation;

/// Added inside the logarithm of the cross-entropy.
pub const CE_FLOOR: f64 = 1e-12;

/// Hidden widths of the neural demapper.
pub const NN_HIDDEN: [usize; 2] = [32, 32];

/// Row-major `N x M` matrix of message probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMatrix {
    order: usize,
    values: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn from_rows(order: usize, values: Vec<f64>) -> Result<Self> {
        if order == 0 || !values.len().is_multiple_of(order) {
            return Err(Error::LengthMismatch {
                expected: order,
                found: values.len(),
            });
        }
        for (k, row) in values.chunks_exact(order).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    "probability row",
                    alloc::format!("row {k} is not a distribution"),
                ));
            }
        }
        Ok(Self { order, values })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.order
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.order..(n + 1) * self.order]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.order)
    }

    /// Per-row argmax; ties go to the lowest message index.
    pub fn decide(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }

    /// Per-symbol losses `-ln(p_n[m_n] + 1e-12)` and their mean.
    pub fn ce_loss(&self, messages: &[usize]) -> Result<(Vec<f64>, f64)> {
        if messages.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: messages.len(),
            });
        }
        let mut losses = Vec::with_capacity(messages.len());
        for (row, &m) in self.rows().zip(messages) {
            if m >= self.order {
                return Err(Error::MessageOutOfRange {
                    index: losses.len(),
                    value: m,
                    order: self.order,
                });
            }
            losses.push(-(row[m] + CE_FLOOR).ln());
        }
        let mean = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        Ok((losses, mean))
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax in place.
fn softmax(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Demapper {
    /// Exact posterior under circular Gaussian noise of variance `noise_var`.
    Ml {
        constellation: Constellation,
        noise_var: f64,
    },
    /// `[2, 32, 32, M]` rectifier network with softmax output, over message indices.
    Nn {
        constellation: Constellation,
        widths: Vec<usize>,
        params: Vec<f64>,
    },
}

impl Demapper {
    pub fn ml(constellation: Constellation, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(Error::invalid("noise_var", "must be positive and finite"));
        }
        Ok(Self::Ml {
            constellation,
            noise_var,
        })
    }

    pub fn constellation(&self) -> &Constellation {
        match self {
            Self::Ml { constellation, .. } | Self::Nn { constellation, .. } => constellation,
        }
    }

    pub fn order(&self) -> usize {
        self.constellation().order()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Ml { noise_var, .. } => {
                if !(*noise_var > 0.0) {
                    return Err(Error::invalid("noise_var", "must be positive"));
                }
            }
            Self::Nn {
                constellation,
                widths,
                params,
            } => {
                if widths.len() < 2 || widths[0] != 2 || *widths.last().unwrap() != constellation.order() {
                    return Err(Error::invalid("widths", "must map 2 inputs to M outputs"));
                }
                let expected = Mlp::new(widths).param_count();
                if params.len() != expected {
                    return Err(Error::LengthMismatch {
                        expected,
                        found: params.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Writes the posterior row for `z` into `out` (length M).
    fn row_into(
        &self,
        z: Complex64,
        net: Option<&(Mlp, crate::nn::Workspace)>,
        ws: &mut Option<crate::nn::Workspace>,
        out: &mut [f64],
    ) {
        match self {
            Self::Ml {
                constellation,
                noise_var,
            } => {
                for (m, o) in out.iter_mut().enumerate() {
                    *o = -(z - constellation.point(m)).norm_sqr() / noise_var;
                }
                softmax(out);
            }
            Self::Nn { params, .. } => {
                let (mlp, _) = net.unwrap();
                let ws = ws.as_mut().unwrap();
                let y = mlp.forward(params, &[z.re, z.im], ws);
                out.copy_from_slice(y);
                softmax(out);
            }
        }
    }

    fn network(&self) -> Option<(Mlp, crate::nn::Workspace)> {
        match self {
            Self::Nn { widths, .. } => {
                let mlp = Mlp::new(widths);
                let ws = mlp.workspace();
                Some((mlp, ws))
            }
            _ => None,
        }
    }

    pub fn demap(&self, symbols: &[Complex64]) -> Result<ProbabilityMatrix> {
        self.validate()?;
        crate::error::check_finite("demapper input", symbols)?;
        let m = self.order();
        let net = self.network();
        let mut ws = net.as_ref().map(|(_, w)| w.clone());
        let mut values = vec![0.0; symbols.len() * m];
        for (z, row) in symbols.iter().zip(values.chunks_exact_mut(m)) {
            self.row_into(*z, net.as_ref(), &mut ws, row);
        }
        Ok(ProbabilityMatrix { order: m, values })
    }

    /// Hard decisions without materializing the probability matrix. For the
    /// ML kind this is nearest-point slicing.
    pub fn decide_symbols(&self, symbols: &[Complex64]) -> Result<Vec<usize>> {
        self.validate()?;
        crate::error::check_finite("demapper input", symbols)?;
        match self {
            Self::Ml { constellation, .. } => Ok(symbols.iter().map(|&z| constellation.nearest(z)).collect()),
            Self::Nn { .. } => {
                let net = self.network();
                let mut ws = net.as_ref().map(|(_, w)| w.clone());
                let mut row = vec![0.0; self.order()];
                Ok(symbols
                    .iter()
                    .map(|&z| {
                        self.row_into(z, net.as_ref(), &mut ws, &mut row);
                        argmax(&row)
                    })
                    .collect())
            }
        }
    }

    /// Per-symbol cross-entropy against the transmitted messages.
    pub fn losses(&self, symbols: &[Complex64], messages: &[usize]) -> Result<(Vec<f64>, f64)> {
        self.demap(symbols)?.ce_loss(messages)
    }
}

/// Data-aided complex gain `<s, y> / <s, s>` of received symbols against the
/// transmitted ones.
pub fn gain_sync(received: &[Complex64], sent: &[Complex64]) -> Result<Complex64> {
    fit_gain(received, sent)
}

/// Divides out the data-aided gain.
pub fn equalize(received: &[Complex64], sent: &[Complex64]) -> Result<Vec<Complex64>> {
    let alpha = gain_sync(received, sent)?;
    if !(alpha.norm() > 0.0) {
        return Err(Error::ZeroSignal {
            what: "received symbols",
        });
    }
    Ok(received.iter().map(|z| z / alpha).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Training SNR drawn uniformly in dB per example.
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    /// Held-out comparison SNR.
    pub check_snr_db: f64,
    pub batch: usize,
    /// Steps between held-out checks.
    pub steps_per_round: usize,
    pub max_rounds: usize,
    pub learning_rate: f64,
    pub heldout: usize,
    /// Required `CE(NN) <= (1 + tolerance) * CE(ML)`.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            snr_db_min: 14.0,
            snr_db_max: 22.0,
            check_snr_db: 17.0,
            batch: 256,
            steps_per_round: 1000,
            max_rounds: 40,
            learning_rate: 3e-3,
            heldout: 100_000,
            tolerance: 0.02,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    pub ce_nn: f64,
    pub ce_ml: f64,
}

/// Unit-energy symbols plus circular noise at `snr_db`.
fn noisy_symbols(rng: &mut SimRng, c: &Constellation, n: usize, snr_db: f64) -> (Vec<usize>, Vec<Complex64>) {
    let m = rng::messages(rng, c.order(), n);
    let var = 10f64.powf(-snr_db / 10.0);
    let z = m
        .iter()
        .map(|&k| c.point(k) + rng::complex_gaussian(rng, var))
        .collect();
    (m, z)
}

/// Supervised training of the neural demapper on AWGN-corrupted symbols until
/// its held-out cross-entropy is within `tolerance` of the ML demapper.
pub fn pretrain_demapper(constellation: &Constellation, cfg: &PretrainConfig) -> Result<(Demapper, PretrainReport)> {
    if cfg.batch == 0 || cfg.steps_per_round == 0 || cfg.heldout == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid(
            "pretrain config",
            "sizes and learning rate must be positive",
        ));
    }
    if !(cfg.snr_db_min <= cfg.snr_db_max) {
        return Err(Error::invalid("snr range", "min exceeds max"));
    }
    let order = constellation.order();
    let widths = vec![2, NN_HIDDEN[0], NN_HIDDEN[1], order];
    let mlp = Mlp::new(&widths);
    let mut init = rng::stream(cfg.seed, "demapper-init");
    let mut params = mlp.init(&mut init, false);
    let mut data = rng::stream(cfg.seed, "demapper-train");
    let mut held = rng::stream(cfg.seed, "demapper-heldout");
    let (held_m, held_z) = noisy_symbols(&mut held, constellation, cfg.heldout, cfg.check_snr_db);
    let ml = Demapper::ml(constellation.clone(), 10f64.powf(-cfg.check_snr_db / 10.0))?;
    let (_, ce_ml) = ml.losses(&held_z, &held_m)?;

    let mut state = AdamState::new(params.len());
    let adam = AdamConfig::default();
    let mut ws = mlp.workspace();
    let mut grad = vec![0.0; params.len()];
    let mut probs = vec![0.0; order];
    let mut steps = 0;
    let mut ce_nn = f64::INFINITY;
    for round in 0..cfg.max_rounds {
        // Step decay keeps late rounds from bouncing around the optimum.
        let lr = cfg.learning_rate * 0.5f64.powi((round / 8) as i32);
        for _ in 0..cfg.steps_per_round {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for _ in 0..cfg.batch {
                let snr = if cfg.snr_db_max > cfg.snr_db_min {
                    rand::Rng::random_range(&mut data, cfg.snr_db_min..cfg.snr_db_max)
                } else {
                    cfg.snr_db_min
                };
                let (m, z) = noisy_symbols(&mut data, constellation, 1, snr);
                let y = mlp.forward(&params, &[z[0].re, z[0].im], &mut ws);
                probs.copy_from_slice(y);
                softmax(&mut probs);
                probs[m[0]] -= 1.0;
                probs.iter_mut().for_each(|p| *p /= cfg.batch as f64);
                mlp.backward(&params, &mut ws, &probs, &mut grad, None);
            }
            adam_step(&mut params, &grad, &mut state, lr, &adam)?;
            steps += 1;
        }
        let nn = Demapper::Nn {
            constellation: constellation.clone(),
            widths: widths.clone(),
            params: params.clone(),
        };
        ce_nn = nn.losses(&held_z, &held_m)?.1;
        if ce_nn <= (1.0 + cfg.tolerance) * ce_ml {
            return Ok((nn, PretrainReport { steps, ce_nn, ce_ml }));
        }
    }
    Err(Error::Training(alloc::format!(
        "demapper pretraining stopped after {steps} steps: CE {ce_nn:.5} vs ML {ce_ml:.5} (tolerance {})",
        cfg.tolerance
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c64() -> Constellation {
        Constellation::square_qam(64).unwrap()
    }

    #[test]
    fn decide_cases() {
        let p = ProbabilityMatrix::from_rows(3, vec![0.0, 1.0, 0.0, 0.2, 0.5, 0.3, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])
            .unwrap();
        assert_eq!(p.decide(), vec![1, 1, 0]);
        assert!(ProbabilityMatrix::from_rows(2, vec![0.7, 0.7]).is_err());
    }

    #[test]
    fn ce_cases() {
        let p = ProbabilityMatrix::from_rows(2, vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        let (l, mean) = p.ce_loss(&[0, 1]).unwrap();
        assert!(l[0].abs() < 1e-11);
        assert!((l[1] - core::f64::consts::LN_2).abs() < 1e-11);
        assert!((mean - l[1] / 2.0).abs() < 1e-12);
        let u = ProbabilityMatrix::from_rows(64, vec![1.0 / 64.0; 64]).unwrap();
        assert!((u.ce_loss(&[17]).unwrap().0[0] - 4.158_883_083_359_672).abs() < 1e-9);
        assert!(p.ce_loss(&[0]).is_err());
    }

    #[test]
    fn ml_concentrates_and_is_symmetric() {
        let c = c64();
        let d = Demapper::ml(c.clone(), 1e-4).unwrap();
        let syms: Vec<_> = (0..64).map(|m| c.point(m)).collect();
        let p = d.demap(&syms).unwrap();
        for m in 0..64 {
            assert!(p.row(m)[m] > 1.0 - 1e-9);
        }
        assert_eq!(p.decide(), (0..64).collect::<Vec<_>>());
        let (a, b) = (
            c.point(5),
            c.point(c.nearest(c.point(5) + Complex64::new(2.0 * c.scale(), 0.0))),
        );
        let mid = (a + b) / 2.0;
        let row = Demapper::ml(c.clone(), 0.01).unwrap().demap(&[mid]).unwrap();
        let ia = c.nearest(a);
        let ib = c.nearest(b);
        assert!((row.row(0)[ia] - row.row(0)[ib]).abs() < 1e-12);
        assert!(Demapper::ml(c, 0.0).is_err());
    }

    #[test]
    fn decide_symbols_matches_demap() {
        let c = Constellation::square_qam(16).unwrap();
        let mut r = rng::stream(1, "rx");
        let (_, z) = noisy_symbols(&mut r, &c, 2000, 10.0);
        let d = Demapper::ml(c, 0.1).unwrap();
        assert_eq!(d.decide_symbols(&z).unwrap(), d.demap(&z).unwrap().decide());
    }

    #[test]
    fn gain_sync_removes_complex_gain() {
        let c = c64();
        let m: Vec<usize> = (0..64).collect();
        let s = c.map_messages(&m).unwrap();
        let g = Complex64::from_polar(7.5, 0.4);
        let y: Vec<_> = s.iter().map(|z| z * g).collect();
        assert!((gain_sync(&y, &s).unwrap() - g).norm() < 1e-12);
        let eq = equalize(&y, &s).unwrap();
        assert!(eq.iter().zip(&s).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn pretrain_small_constellation() {
        let c = Constellation::square_qam(16).unwrap();
        let cfg = PretrainConfig {
            snr_db_min: 10.0,
            snr_db_max: 14.0,
            check_snr_db: 12.0,
            heldout: 20_000,
            steps_per_round: 300,
            ..Default::default()
        };
        let (d, report) = pretrain_demapper(&c, &cfg).unwrap();
        assert!(report.ce_nn <= 1.02 * report.ce_ml);
        let clean: Vec<_> = (0..16).map(|m| c.point(m)).collect();
        assert_eq!(d.decide_symbols(&clean).unwrap(), (0..16).collect::<Vec<_>>());
        let (d2, _) = pretrain_demapper(&c, &cfg).unwrap();
        assert_eq!(d, d2);
    }
}
