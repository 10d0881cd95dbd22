//! Gaussian exploration policy and the score-function training loop.
//!
//! The policy perturbs the predistorted waveform as
//! `x~ = sqrt(1 - s2) x + w`, `w ~ CN(0, s2)`. The per-symbol losses fed
//! back from the receiver weight the score `grad log pi` of the samples
//! around each symbol instant, which gives an unbiased-in-the-window
//! estimate of the gradient of the expected loss with respect to the
//! predistorter parameters, without any model of the PA or channel.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::Chain;
use crate::dpd::DpdModel;
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng;
use crate::signal::{mean_power, power_dbm_from_mean_square};
use crate::TrainRecord;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Exploration variance relative to the unit-power waveform.
    pub variance: f64,
    /// Samples on each side of a symbol instant that share its loss.
    pub half_window: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            variance: 0.08,
            half_window: 3,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.variance) {
            return Err(Error::invalid("policy variance", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// `2 sqrt(1 - s2) / s2`; errors for a degenerate policy.
    fn score_gain(&self) -> Result<f64> {
        self.validate()?;
        if self.variance == 0.0 {
            return Err(Error::invalid(
                "policy variance",
                "score is undefined for zero variance",
            ));
        }
        Ok(2.0 * (1.0 - self.variance).sqrt() / self.variance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlTrainConfig {
    pub batch_symbols: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// PA input rms voltage during training.
    pub drive: f64,
    /// Subtract the batch-mean loss before weighting the scores.
    pub baseline: bool,
    /// Symbols in the batch used to freeze the normalization scale after training.
    pub freeze_symbols: usize,
    /// Differentiate through the output power normalization
    /// ([`policy_gradient_estimate_normalized`]) instead of holding it constant.
    pub normalization_gradient: bool,
}

impl Default for RlTrainConfig {
    fn default() -> Self {
        Self {
            batch_symbols: 1024,
            iterations: 2000,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            seed: 0,
            drive: 1.0,
            baseline: false,
            freeze_symbols: 16_384,
            normalization_gradient: true,
        }
    }
}

impl RlTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_symbols == 0 || self.iterations == 0 {
            return Err(Error::invalid(
                "rl config",
                "batch size and iterations must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(self.drive > 0.0) {
            return Err(Error::invalid("drive", "must be positive"));
        }
        Ok(())
    }
}

/// Draws `x~` around `x`.
pub fn policy_sample<R: Rng + ?Sized>(x: &[Complex64], variance: f64, rng: &mut R) -> Result<Vec<Complex64>> {
    if !(0.0..1.0).contains(&variance) {
        return Err(Error::invalid("policy variance", "must lie in [0, 1)"));
    }
    if variance == 0.0 {
        return Ok(x.to_vec());
    }
    let a = (1.0 - variance).sqrt();
    Ok(x.iter().map(|z| z * a + rng::complex_gaussian(rng, variance)).collect())
}

/// `grad log pi(x~_n | x_n)` from the `2 x P` Jacobian of `x_n` (real row
/// first, imaginary row second).
pub fn log_policy_grad(x_tilde: Complex64, x: Complex64, jac: &[f64], policy: &PolicyConfig) -> Result<Vec<f64>> {
    let k = policy.score_gain()?;
    if !jac.len().is_multiple_of(2) {
        return Err(Error::invalid("jacobian", "must have two rows"));
    }
    let p = jac.len() / 2;
    let e = x_tilde - x * (1.0 - policy.variance).sqrt();
    Ok((0..p).map(|i| k * (e.re * jac[i] + e.im * jac[p + i])).collect())
}

/// Per-sample complex weights `c_k` such that the estimate is
/// `sum_k Re(conj(c_k) dx_k/dtheta)`: the windowed losses folded onto sample
/// indices, times the policy residual and the score gain.
fn sample_weights(
    losses: &[f64],
    x_tilde: &[Complex64],
    x: &[Complex64],
    u: &[Complex64],
    oversampling: usize,
    policy: &PolicyConfig,
) -> Result<Vec<Complex64>> {
    let k = policy.score_gain()?;
    let total = losses.len() * oversampling;
    for len in [x_tilde.len(), x.len(), u.len()] {
        if len != total {
            return Err(Error::LengthMismatch {
                expected: total,
                found: len,
            });
        }
    }
    let mut weight = vec![0.0; total];
    let g = policy.half_window as isize;
    for (n, &l) in losses.iter().enumerate() {
        let centre = (n * oversampling) as isize;
        for idx in centre - g..=centre + g {
            if idx >= 0 && (idx as usize) < total {
                weight[idx as usize] += l;
            }
        }
    }
    let a = (1.0 - policy.variance).sqrt();
    let norm = k / losses.len() as f64;
    Ok(weight
        .iter()
        .zip(x_tilde.iter().zip(x))
        .map(|(&w, (xt, xv))| (xt - xv * a) * (w * norm))
        .collect())
}

fn accumulate(model: &DpdModel, u: &[Complex64], scale: f64, weights: &[Complex64]) -> Vec<f64> {
    let mut grad = vec![0.0; model.param_count()];
    let mut scratch = model.scratch();
    for (idx, &c) in weights.iter().enumerate() {
        if c != Complex64::new(0.0, 0.0) {
            model.accumulate_vjp(u, idx, scale, c, &mut scratch, &mut grad);
        }
    }
    grad
}

/// Score-function estimate `(1/N) sum_n l_n sum_{|g|<=G} grad log pi` at the
/// samples `n R + g`. `scale` is the normalization applied to produce `x`
/// and is held constant.
#[allow(clippy::too_many_arguments)]
pub fn policy_gradient_estimate(
    losses: &[f64],
    x_tilde: &[Complex64],
    x: &[Complex64],
    u: &[Complex64],
    model: &DpdModel,
    scale: f64,
    oversampling: usize,
    policy: &PolicyConfig,
) -> Result<Vec<f64>> {
    let weights = sample_weights(losses, x_tilde, x, u, oversampling, policy)?;
    Ok(accumulate(model, u, scale, &weights))
}

/// As [`policy_gradient_estimate`], but differentiating through the batch
/// power normalization `x = s(theta) f(theta)` with `s = sqrt(P_u / P_f)`.
///
/// Since `dx_k = s df_k - x_k Re(sum_j conj(x_j) s df_j) / sum_j |x_j|^2`,
/// this amounts to removing from the weights their projection onto `x`.
/// Without it, components that only rescale the output are cancelled by the
/// normalization at the next forward pass but still steer per-coordinate
/// optimizers such as Adam, which drifts the model towards peak expansion.
#[allow(clippy::too_many_arguments)]
pub fn policy_gradient_estimate_normalized(
    losses: &[f64],
    x_tilde: &[Complex64],
    x: &[Complex64],
    u: &[Complex64],
    model: &DpdModel,
    scale: f64,
    oversampling: usize,
    policy: &PolicyConfig,
) -> Result<Vec<f64>> {
    let mut weights = sample_weights(losses, x_tilde, x, u, oversampling, policy)?;
    let energy: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    if !(energy > 0.0) {
        return Err(Error::ZeroSignal {
            what: "predistorter output",
        });
    }
    let along: f64 = weights.iter().zip(x).map(|(c, xv)| (c.conj() * xv).re).sum::<f64>() / energy;
    for (c, xv) in weights.iter_mut().zip(x) {
        *c -= xv * along;
    }
    Ok(accumulate(model, u, scale, &weights))
}

/// Everything produced by one forward pass of a training iteration.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub messages: Vec<usize>,
    pub u: Vec<Complex64>,
    pub x: Vec<Complex64>,
    pub x_tilde: Vec<Complex64>,
    pub scale: f64,
    pub pa_out: Vec<Complex64>,
    pub losses: Vec<f64>,
    pub mean_loss: f64,
    pub decisions: Vec<usize>,
}

/// Transmit, explore, amplify, add channel noise, receive and score one batch.
pub fn rollout<R: Rng + ?Sized>(
    chain: &Chain,
    model: &DpdModel,
    policy: &PolicyConfig,
    drive: f64,
    symbols: usize,
    rng: &mut R,
) -> Result<Rollout> {
    let tx = chain.transmit(rng, symbols)?;
    let out = model.forward(&tx.u)?;
    let x_tilde = policy_sample(&out.samples, policy.variance, rng)?;
    let pa_in: Vec<Complex64> = x_tilde.iter().map(|z| z * drive).collect();
    let pa_out = chain.amplify(&pa_in, rng)?;
    let mut y = pa_out.clone();
    chain.add_channel_noise(&mut y, rng);
    let rx = chain.receive(&y, &tx.symbols)?;
    let probs = chain.demapper.demap(&rx)?;
    let (losses, mean_loss) = probs.ce_loss(&tx.messages)?;
    Ok(Rollout {
        messages: tx.messages,
        u: tx.u,
        x: out.samples,
        x_tilde,
        scale: out.scale,
        pa_out,
        losses,
        mean_loss,
        decisions: probs.decide(),
    })
}

fn diverged(iteration: usize, reason: alloc::string::String, last_good: &DpdModel) -> Error {
    Error::Diverged {
        iteration,
        reason,
        last_good: Box::new(last_good.clone()),
    }
}

/// Trains `model` with the score-function estimator. `observer` sees every
/// record together with the updated parameters (for logging and
/// checkpointing). The returned model has the policy removed and its
/// normalization scale frozen.
pub fn rl_train(
    chain: &Chain,
    model: &DpdModel,
    policy: &PolicyConfig,
    cfg: &RlTrainConfig,
    mut observer: impl FnMut(&TrainRecord, &DpdModel),
) -> Result<(DpdModel, Vec<TrainRecord>)> {
    policy.validate()?;
    policy.score_gain()?;
    cfg.validate()?;
    model.validate()?;
    let mut current = model.clone();
    current.frozen_scale = None;
    let mut state = AdamState::new(current.param_count());
    let mut records = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut r = rng::substream(cfg.seed, "train", it as u64);
        let ro = match rollout(chain, &current, policy, cfg.drive, cfg.batch_symbols, &mut r) {
            Ok(ro) => ro,
            Err(e @ (Error::NonFinite { .. } | Error::ZeroSignal { .. })) => {
                return Err(diverged(it, alloc::format!("{e}"), &current));
            }
            Err(e) => return Err(e),
        };
        if !ro.mean_loss.is_finite() {
            return Err(diverged(it, "non-finite loss".into(), &current));
        }
        let weights: Vec<f64> = if cfg.baseline {
            ro.losses.iter().map(|l| l - ro.mean_loss).collect()
        } else {
            ro.losses.clone()
        };
        let estimate = if cfg.normalization_gradient {
            policy_gradient_estimate_normalized
        } else {
            policy_gradient_estimate
        };
        let grad = estimate(
            &weights,
            &ro.x_tilde,
            &ro.x,
            &ro.u,
            &current,
            ro.scale,
            chain.config.oversampling,
            policy,
        )?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(diverged(it, "non-finite gradient".into(), &current));
        }
        let last_good = current.clone();
        adam_step(&mut current.params, &grad, &mut state, cfg.learning_rate, &cfg.adam)?;
        if current.params.iter().any(|p| !p.is_finite()) {
            return Err(diverged(it, "non-finite parameters".into(), &last_good));
        }
        let errors = ro.decisions.iter().zip(&ro.messages).filter(|(a, b)| a != b).count();
        let record = TrainRecord {
            iteration: it,
            loss: ro.mean_loss,
            grad_norm,
            power_dbm: power_dbm_from_mean_square(mean_power(&ro.pa_out)),
            ser: Some(errors as f64 / ro.messages.len() as f64),
            nmse_db: None,
            acpr_dbc: None,
        };
        observer(&record, &current);
        records.push(record);
    }
    // Remove the policy: evaluate deterministically with a frozen scale.
    chain.freeze_scale(&mut current, cfg.seed, cfg.freeze_symbols)?;
    Ok((current, records))
}
