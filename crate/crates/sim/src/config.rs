//! Experiment configuration: defaults, file loading, overrides and hashing.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use symdpd_core::chain::ChainConfig;
use symdpd_core::ila::IlaConfig;
use symdpd_core::policy::{PolicyConfig, RlTrainConfig};
use symdpd_core::GmpConfig;

/// A configuration field that failed validation.
#[derive(Debug, thiserror::Error)]
#[error("config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

fn bad(field: &'static str, reason: impl Into<String>) -> anyhow::Error {
    ConfigError {
        field,
        reason: reason.into(),
    }
    .into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PaSelection {
    /// The synthetic reference PA, identified from the named seed.
    Reference { seed: u64 },
    /// A PA document written by `fit-pa`.
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DpdChoice {
    Gmp,
    R2tdnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Trainer {
    Rl,
    Ila,
}

impl Trainer {
    pub fn name(self) -> &'static str {
        match self {
            Trainer::Rl => "rl",
            Trainer::Ila => "ila",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DemapperChoice {
    /// Maximum-likelihood demapper with the training-time noise variance.
    Ml,
    /// Pretrained network, frozen.
    Nn,
}

/// Everything that determines a run. Unspecified fields take the reference
/// setup (M=64, R=4, N=1024, G=3, sigma_pi^2=0.08, sigma_ch=0.3).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub order: usize,
    pub oversampling: usize,
    pub symbol_rate_hz: f64,
    pub roll_off: f64,
    pub span_symbols: usize,
    /// Messages per training batch (N).
    pub batch_symbols: usize,
    /// Training iterations (N_B).
    pub iterations: usize,
    /// Half window of samples sharing a symbol's loss (G).
    pub half_window: usize,
    pub policy_variance: f64,
    pub channel_noise_std: f64,
    pub learning_rate: f64,
    pub baseline: bool,
    pub normalization_gradient: bool,
    pub pa: PaSelection,
    /// DAC full scale in volts; 0 disables the clip.
    pub pa_input_limit: f64,
    pub dpd: DpdChoice,
    pub trainer: Trainer,
    pub demapper: DemapperChoice,
    /// Feedback ADC rate for ILA; the chain rate means full-rate capture.
    pub adc_rate_hz: f64,
    pub ila_iterations: usize,
    pub ila_ridge: f64,
    pub ila_blocks: usize,
    pub ila_block_symbols: usize,
    /// Output power whose no-DPD drive is used during training.
    pub train_power_dbm: f64,
    /// Point where NMSE, ACPR and the error spectrum are reported.
    pub operating_point_dbm: f64,
    pub sweep_dbm: Vec<f64>,
    /// Trainers compared by the `sweep` command (no DPD is always included).
    pub sweep_trainers: Vec<Trainer>,
    pub eval_symbols: usize,
    pub eval_block_symbols: usize,
    /// Whether PA measurement noise is present during evaluation.
    pub eval_pa_noise: bool,
    pub linearity_symbols: usize,
    /// Write a DPD checkpoint every this many RL iterations (0: final only).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            order: 64,
            oversampling: 4,
            symbol_rate_hz: 50e6,
            roll_off: 0.1,
            span_symbols: 96,
            batch_symbols: 1024,
            iterations: 2000,
            half_window: 3,
            policy_variance: 0.08,
            channel_noise_std: 0.3,
            learning_rate: 1e-3,
            baseline: false,
            normalization_gradient: true,
            pa: PaSelection::Reference { seed: 0 },
            pa_input_limit: symdpd_core::chain::DEFAULT_PA_INPUT_LIMIT_V,
            dpd: DpdChoice::Gmp,
            trainer: Trainer::Rl,
            demapper: DemapperChoice::Ml,
            adc_rate_hz: 200e6,
            ila_iterations: 3,
            ila_ridge: IlaConfig::default().ridge,
            ila_blocks: 8,
            ila_block_symbols: 2048,
            train_power_dbm: 32.2,
            operating_point_dbm: 30.2,
            sweep_dbm: vec![25.2, 26.2, 27.2, 28.2, 29.2, 30.2, 31.2, 32.2],
            sweep_trainers: vec![Trainer::Ila, Trainer::Rl],
            eval_symbols: 1_000_000,
            eval_block_symbols: 4096,
            eval_pa_noise: true,
            linearity_symbols: 16_384,
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

/// Envelope normalizer for GMP predistorters (PA output peaks are a few
/// times the unit-power rms).
pub const DPD_ENVELOPE_SCALE: f64 = 3.0;
/// Input memory of the network predistorter, as the PA's.
pub const R2TDNN_MEMORY: usize = 3;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_symbols == 0 {
            return Err(bad("batch_symbols", "must be positive"));
        }
        if self.iterations == 0 {
            return Err(bad("iterations", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.policy_variance) {
            return Err(bad("policy_variance", "must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(bad("learning_rate", "must be positive"));
        }
        if !(self.pa_input_limit >= 0.0) {
            return Err(bad("pa_input_limit", "must be non-negative (0 disables)"));
        }
        if !(self.adc_rate_hz > 0.0 && self.adc_rate_hz <= self.sample_rate() * (1.0 + 1e-12)) {
            return Err(bad(
                "adc_rate_hz",
                format!("must lie in (0, {}] Hz", self.sample_rate()),
            ));
        }
        if self.sweep_dbm.is_empty() || self.sweep_dbm.iter().any(|p| !p.is_finite()) {
            return Err(bad("sweep_dbm", "must be a non-empty list of finite powers"));
        }
        if self.eval_symbols == 0 || self.eval_block_symbols == 0 {
            return Err(bad("eval_symbols", "evaluation symbol counts must be positive"));
        }
        if self.ila_iterations == 0 || self.ila_blocks == 0 || self.ila_block_symbols == 0 {
            return Err(bad("ila_iterations", "ILA iteration and block counts must be positive"));
        }
        if let PaSelection::File { path } = &self.pa {
            if !path.is_file() {
                return Err(bad("pa.path", format!("no PA file at {}", path.display())));
            }
        }
        self.chain_config()
            .validate()
            .map_err(|e| bad("chain", e.to_string()))?;
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate_hz * self.oversampling as f64
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            order: self.order,
            oversampling: self.oversampling,
            symbol_rate: self.symbol_rate_hz,
            roll_off: self.roll_off,
            span_symbols: self.span_symbols,
            channel_noise_std: self.channel_noise_std,
            pa_noise: true,
            pa_input_limit: (self.pa_input_limit > 0.0).then_some(self.pa_input_limit),
        }
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig {
            variance: self.policy_variance,
            half_window: self.half_window,
        }
    }

    pub fn dpd_gmp(&self) -> GmpConfig {
        GmpConfig::default().with_envelope_scale(DPD_ENVELOPE_SCALE)
    }

    pub fn rl_config(&self, drive: f64) -> RlTrainConfig {
        RlTrainConfig {
            batch_symbols: self.batch_symbols,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            seed: self.seed,
            drive,
            baseline: self.baseline,
            normalization_gradient: self.normalization_gradient,
            ..Default::default()
        }
    }

    pub fn ila_config(&self, drive: f64) -> IlaConfig {
        IlaConfig {
            iterations: self.ila_iterations,
            blocks: self.ila_blocks,
            block_symbols: self.ila_block_symbols,
            ridge: self.ila_ridge,
            drive,
            seed: self.seed,
            ..Default::default()
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Loads a TOML config, or the `config` member of a JSON manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            let mut v: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if let Some(inner) = v.get_mut("config") {
                v = inner.take();
            }
            serde_json::from_value(v).with_context(|| format!("config in {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    /// Applies `key=value` overrides; dotted keys reach into tables and
    /// values are TOML literals (bare words are taken as strings). Setting a
    /// `kind` switches variant, clearing the other fields of its table.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut root = toml::Table::try_from(self).context("serializing config")?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .with_context(|| format!("override `{item}` is not key=value"))?;
            let value = parse_literal(raw.trim());
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let last = parts.pop().expect("split yields one part");
            let mut table = &mut root;
            for part in parts {
                table = table
                    .entry(part)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .with_context(|| format!("override `{key}`: `{part}` is not a table"))?;
            }
            if last == "kind" && table.get("kind") != Some(&value) {
                table.clear();
            }
            table.insert(last.to_string(), value);
        }
        root.try_into::<Self>().context("applying overrides")
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = ExperimentConfig::default();
        assert_eq!(
            (c.order, c.oversampling, c.batch_symbols, c.half_window),
            (64, 4, 1024, 3)
        );
        assert_eq!((c.policy_variance, c.channel_noise_std), (0.08, 0.3));
        c.validate().unwrap();
        let empty: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(empty, c);
    }

    #[test]
    fn overrides_and_hash() {
        let c = ExperimentConfig::default();
        let o = c
            .with_overrides(&[
                "seed=7".into(),
                "trainer=ila".into(),
                "pa.seed=3".into(),
                "sweep_dbm=[30.0]".into(),
            ])
            .unwrap();
        assert_eq!(o.seed, 7);
        assert_eq!(o.trainer, Trainer::Ila);
        assert_eq!(o.pa, PaSelection::Reference { seed: 3 });
        assert_eq!(o.sweep_dbm, vec![30.0]);
        assert_ne!(o.hash(), c.hash());
        assert_eq!(c.hash(), ExperimentConfig::default().hash());
        let f = c
            .with_overrides(&["pa.kind=file".into(), "pa.path=\"x.json\"".into()])
            .unwrap();
        assert_eq!(f.pa, PaSelection::File { path: "x.json".into() });
        assert!(c.with_overrides(&["no_such_field=1".into()]).is_err());
        assert!(c.with_overrides(&["seed".into()]).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let c = ExperimentConfig {
            pa: PaSelection::File {
                path: "/nonexistent/pa.json".into(),
            },
            ..Default::default()
        };
        let err = c.validate().unwrap_err();
        assert_eq!(err.downcast_ref::<ConfigError>().unwrap().field, "pa.path");
        let c = ExperimentConfig {
            adc_rate_hz: 220e6,
            ..Default::default()
        };
        assert_eq!(
            c.validate().unwrap_err().downcast_ref::<ConfigError>().unwrap().field,
            "adc_rate_hz"
        );
    }
}
