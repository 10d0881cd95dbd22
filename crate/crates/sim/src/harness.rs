//! Staged experiment runs in a run directory.
//!
//! A run directory holds `manifest.json` (config, hash, stages), the PA model,
//! optional pretrained demapper, DPD checkpoints with their training logs, and
//! result tables. A failing stage leaves a `FAILED` marker with the error.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use symdpd_core::chain::{training_noise_var, DriveSearch};
use symdpd_core::ila::{ila_train, FeedbackAdc};
use symdpd_core::pa::make_reference_pa_with_report;
use symdpd_core::policy::rl_train;
use symdpd_core::receiver::{pretrain_demapper, PretrainConfig};
use symdpd_core::spectrum::error_spectrum;
use symdpd_core::{rng, Chain, Constellation, Demapper, DpdModel, PaModel, TrainRecord};

use crate::config::{DemapperChoice, DpdChoice, ExperimentConfig, PaSelection, Trainer, R2TDNN_MEMORY};
use crate::formats::{
    read_document, read_json, write_csv, write_json, DemapperCheckpoint, DpdCheckpoint, LinearityRow, Manifest,
    PaDocument, PaMetadata, RecordWriter, SpectrumRow, StageRecord, SweepRow,
};
use crate::sweep::sweep_rows;

/// Environment variable naming the directory that holds hashed run directories.
pub const RUN_ROOT_ENV: &str = "SYMDPD_RUN_ROOT";
pub const DEFAULT_RUN_ROOT: &str = "runs";
/// Hex digits of the config hash used to name a run directory.
pub const RUN_DIR_HASH_LEN: usize = 16;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_FILE: &str = "FAILED";
pub const PA_FILE: &str = "pa.json";
pub const DEMAPPER_FILE: &str = "demapper.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const LINEARITY_FILE: &str = "linearity.csv";
pub const SPECTRUM_FILE: &str = "spectrum.csv";

/// What predistorts the signal in an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    None,
    Rl,
    Ila,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::None => "none",
            Scheme::Rl => "rl",
            Scheme::Ila => "ila",
        }
    }

    pub fn trainer(self) -> Option<Trainer> {
        match self {
            Scheme::None => None,
            Scheme::Rl => Some(Trainer::Rl),
            Scheme::Ila => Some(Trainer::Ila),
        }
    }
}

impl From<Trainer> for Scheme {
    fn from(t: Trainer) -> Self {
        match t {
            Trainer::Rl => Scheme::Rl,
            Trainer::Ila => Scheme::Ila,
        }
    }
}

/// Result tables of one scheme.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub sweep: Vec<SweepRow>,
    pub linearity: Vec<LinearityRow>,
    pub spectrum: Vec<SpectrumRow>,
}

impl Evaluation {
    fn extend(&mut self, other: Evaluation) {
        self.sweep.extend(other.sweep);
        self.linearity.extend(other.linearity);
        self.spectrum.extend(other.spectrum);
    }

    fn write(&self, dir: &Path, suffix: &str) -> Result<Vec<String>> {
        let names = [SWEEP_FILE, LINEARITY_FILE, SPECTRUM_FILE].map(|f| match suffix {
            "" => f.to_string(),
            s => f.replace(".csv", &format!("_{s}.csv")),
        });
        write_csv(&dir.join(&names[0]), &self.sweep)?;
        write_csv(&dir.join(&names[1]), &self.linearity)?;
        write_csv(&dir.join(&names[2]), &self.spectrum)?;
        Ok(names.to_vec())
    }
}

pub fn default_run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT), PathBuf::from)
}

pub fn dpd_file(trainer: Trainer) -> String {
    format!("dpd_{}.json", trainer.name())
}

pub fn log_file(trainer: Trainer) -> String {
    format!("train_{}.jsonl", trainer.name())
}

pub struct Harness {
    config: ExperimentConfig,
    hash: String,
    run_dir: PathBuf,
    manifest: Manifest,
}

impl Harness {
    /// Validates the config and opens (or creates) its run directory. An
    /// existing directory must belong to the same config.
    pub fn open(config: ExperimentConfig, run_dir: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        let run_dir = run_dir.unwrap_or_else(|| default_run_root().join(&hash[..RUN_DIR_HASH_LEN]));
        fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
        let manifest_path = run_dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.is_file() {
            let m: Manifest = read_json(&manifest_path)?;
            if m.config_hash != hash {
                bail!(
                    "{} belongs to config {}, not {hash}; choose another --run-dir",
                    run_dir.display(),
                    m.config_hash
                );
            }
            m
        } else {
            Manifest::new(&config)
        };
        let h = Self {
            config,
            hash,
            run_dir,
            manifest,
        };
        h.save_manifest()?;
        Ok(h)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn save_manifest(&self) -> Result<()> {
        write_json(&self.run_dir.join(MANIFEST_FILE), &self.manifest)
    }

    /// Runs one stage, recording it in the manifest; failures leave `FAILED`.
    fn stage<T>(&mut self, name: &str, body: impl FnOnce(&mut Self) -> Result<(T, Vec<String>)>) -> Result<T> {
        let outcome = body(self);
        let (status, outputs) = match &outcome {
            Ok((_, outputs)) => ("ok".to_string(), outputs.clone()),
            Err(e) => {
                fs::write(self.run_dir.join(FAILED_FILE), format!("stage {name}: {e:#}\n"))?;
                (format!("failed: {e:#}"), Vec::new())
            }
        };
        let record = StageRecord {
            name: name.into(),
            status,
            outputs,
        };
        match self.manifest.stages.iter_mut().find(|s| s.name == name) {
            Some(s) => *s = record,
            None => self.manifest.stages.push(record),
        }
        self.save_manifest()?;
        let (value, _) = outcome.with_context(|| format!("stage {name}"))?;
        let failed = self.run_dir.join(FAILED_FILE);
        if failed.is_file() && self.manifest.stages.iter().all(|s| s.status == "ok") {
            fs::remove_file(failed)?;
        }
        Ok(value)
    }

    /// Identifies the reference PA (or validates a PA file) and stores it in
    /// the run directory.
    pub fn fit_pa(&mut self) -> Result<PaDocument> {
        self.stage("fit-pa", |h| {
            let doc = match &h.config.pa {
                PaSelection::Reference { seed } => {
                    let (model, nmse) = make_reference_pa_with_report(*seed)?;
                    PaDocument::new(
                        model,
                        PaMetadata {
                            source: "reference".into(),
                            seed: *seed,
                            fit_nmse_db: Some(nmse),
                        },
                    )
                }
                PaSelection::File { path } => {
                    let doc: PaDocument = read_document(path).context("config field `pa.path`")?;
                    doc.model.validate()?;
                    doc
                }
            };
            write_json(&h.run_dir.join(PA_FILE), &doc)?;
            Ok((doc, vec![PA_FILE.into()]))
        })
    }

    /// The PA of this run, identified on first use.
    pub fn pa(&mut self) -> Result<PaModel> {
        let path = self.run_dir.join(PA_FILE);
        if path.is_file() {
            let doc: PaDocument = read_document(&path)?;
            return Ok(doc.model);
        }
        Ok(self.fit_pa()?.model)
    }

    pub fn constellation(&self) -> Result<Constellation> {
        Ok(Constellation::square_qam(self.config.order)?)
    }

    pub fn pretrain_demapper(&mut self) -> Result<DemapperCheckpoint> {
        self.stage("pretrain-demapper", |h| {
            let cfg = PretrainConfig {
                seed: h.config.seed,
                ..Default::default()
            };
            let (demapper, report) = pretrain_demapper(&h.constellation()?, &cfg)?;
            let ck = DemapperCheckpoint::new(demapper, report, h.config.seed, &h.hash);
            write_json(&h.run_dir.join(DEMAPPER_FILE), &ck)?;
            Ok((ck, vec![DEMAPPER_FILE.into()]))
        })
    }

    /// Demapper used at `power_dbm`: the ML demapper with the noise variance
    /// seen there under the given policy variance, or the pretrained network.
    pub fn demapper(&mut self, policy_variance: f64, power_dbm: f64) -> Result<Demapper> {
        match self.config.demapper {
            DemapperChoice::Ml => {
                let c = &self.config;
                let var = training_noise_var(policy_variance, c.oversampling, c.channel_noise_std, power_dbm);
                Ok(Demapper::ml(self.constellation()?, var)?)
            }
            DemapperChoice::Nn => {
                let path = self.run_dir.join(DEMAPPER_FILE);
                if path.is_file() {
                    Ok(read_document::<DemapperCheckpoint>(&path)?.demapper)
                } else {
                    Ok(self.pretrain_demapper()?.demapper)
                }
            }
        }
    }

    pub fn chain(&self, pa: PaModel, demapper: Demapper, pa_noise: bool) -> Result<Chain> {
        let mut cfg = self.config.chain_config();
        cfg.pa_noise = pa_noise;
        Ok(Chain::new(cfg, pa, demapper)?)
    }

    /// Chain used for training and the drive giving the training power
    /// without predistortion.
    pub fn training_setup(&mut self) -> Result<(Chain, DriveSearch)> {
        let pa = self.pa()?;
        let demapper = self.demapper(self.config.policy_variance, self.config.train_power_dbm)?;
        let chain = self.chain(pa, demapper, true)?;
        let search = chain.find_drive(None, self.config.train_power_dbm, self.config.seed)?;
        if !search.converged {
            bail!(
                "config field `train_power_dbm`: {} dBm is not reachable (best {:.2} dBm)",
                self.config.train_power_dbm,
                search.achieved_dbm
            );
        }
        Ok((chain, search))
    }

    pub fn initial_dpd(&self) -> Result<DpdModel> {
        Ok(match self.config.dpd {
            DpdChoice::Gmp => DpdModel::identity_gmp(self.config.dpd_gmp())?,
            DpdChoice::R2tdnn => DpdModel::r2tdnn(R2TDNN_MEMORY, &mut rng::stream(self.config.seed, "dpd-init")),
        })
    }

    /// Trains a predistorter, writing its log, periodic checkpoints (RL) and
    /// the final checkpoint.
    pub fn train(&mut self, trainer: Trainer) -> Result<(DpdModel, Vec<TrainRecord>)> {
        self.stage(&format!("train-{}", trainer.name()), |h| {
            let (chain, search) = h.training_setup()?;
            let initial = h.initial_dpd()?;
            let cfg = &h.config;
            let mut outputs = vec![log_file(trainer), dpd_file(trainer)];
            let mut log = RecordWriter::create(&h.run_dir.join(log_file(trainer)))?;
            let (model, records) = match trainer {
                Trainer::Rl => {
                    let ck_dir = h.run_dir.join("checkpoints");
                    if cfg.checkpoint_every > 0 {
                        fs::create_dir_all(&ck_dir)?;
                    }
                    let mut io_error: Option<anyhow::Error> = None;
                    let result = rl_train(
                        &chain,
                        &initial,
                        &cfg.policy(),
                        &cfg.rl_config(search.drive),
                        |rec, model| {
                            if io_error.is_some() {
                                return;
                            }
                            let done = rec.iteration + 1;
                            let mut step = || -> Result<()> {
                                log.write(rec)?;
                                if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations
                                {
                                    let name = format!("rl_{done:06}.json");
                                    let ck = DpdCheckpoint::new(model, "rl", done, cfg.seed, &h.hash);
                                    write_json(&ck_dir.join(&name), &ck)?;
                                    outputs.push(format!("checkpoints/{name}"));
                                }
                                Ok(())
                            };
                            io_error = step().err();
                        },
                    );
                    if let Some(e) = io_error {
                        return Err(e);
                    }
                    result?
                }
                Trainer::Ila => {
                    let adc = FeedbackAdc::new(cfg.adc_rate_hz)?;
                    let out = ila_train(&chain, &initial, &adc, &cfg.ila_config(search.drive))?;
                    for rec in &out.1 {
                        log.write(rec)?;
                    }
                    out
                }
            };
            log.finish()?;
            let ck = DpdCheckpoint::new(&model, trainer.name(), records.len(), cfg.seed, &h.hash);
            write_json(&h.run_dir.join(dpd_file(trainer)), &ck)?;
            Ok(((model, records), outputs))
        })
    }

    /// The trained predistorter of `trainer` from this run directory.
    pub fn trained_dpd(&self, trainer: Trainer) -> Result<DpdModel> {
        let path = self.run_dir.join(dpd_file(trainer));
        if !path.is_file() {
            bail!(
                "no {} predistorter in {}; run `train --trainer {}` first",
                trainer.name(),
                self.run_dir.display(),
                trainer.name()
            );
        }
        Ok(read_document::<DpdCheckpoint>(&path)?.model)
    }

    fn evaluate_scheme(&mut self, scheme: Scheme) -> Result<Evaluation> {
        let dpd = scheme.trainer().map(|t| self.trained_dpd(t)).transpose()?;
        let pa = self.pa()?;
        let demapper = self.demapper(0.0, self.config.operating_point_dbm)?;
        let chain = self.chain(pa, demapper, self.config.eval_pa_noise)?;
        let c = &self.config;
        let dpd = dpd.as_ref();
        let sweep = sweep_rows(
            &chain,
            scheme.name(),
            dpd,
            &c.sweep_dbm,
            c.eval_symbols,
            c.eval_block_symbols,
            c.seed,
        )?;

        let op = chain.find_drive(dpd, c.operating_point_dbm, c.seed)?;
        let lin = chain.linearity(dpd, op.drive, c.linearity_symbols, c.seed)?;
        let linearity = vec![LinearityRow {
            scheme: scheme.name().into(),
            p_out_dbm: lin.power_dbm,
            nmse_db: lin.nmse_db,
            acpr_dbc: lin.acpr_dbc,
        }];

        let mut r = rng::stream(c.seed, "spectrum");
        let tx = chain.transmit(&mut r, c.linearity_symbols)?;
        let x = chain.pa_input(&tx.u, dpd, op.drive)?;
        let y = chain.amplify(&x, &mut r)?;
        let est = error_spectrum(&y, &tx.u, chain.sample_rate())?;
        let spectrum = est
            .freqs_hz
            .iter()
            .zip(&est.psd_db)
            .map(|(&freq_hz, &psd_db)| SpectrumRow {
                scheme: scheme.name().into(),
                freq_hz,
                psd_db,
            })
            .collect();
        Ok(Evaluation {
            sweep,
            linearity,
            spectrum,
        })
    }

    /// SER sweep, linearity and error spectrum of one scheme, written as
    /// `*_<scheme>.csv`.
    pub fn evaluate(&mut self, scheme: Scheme) -> Result<Evaluation> {
        self.stage(&format!("evaluate-{}", scheme.name()), |h| {
            let eval = h.evaluate_scheme(scheme)?;
            let outputs = eval.write(&h.run_dir, scheme.name())?;
            Ok((eval, outputs))
        })
    }

    /// No DPD plus every configured trainer (trained here if missing), written
    /// as combined tables.
    pub fn sweep(&mut self) -> Result<Evaluation> {
        let trainers = self.config.sweep_trainers.clone();
        for &t in &trainers {
            if !self.run_dir.join(dpd_file(t)).is_file() {
                self.train(t)?;
            }
        }
        self.stage("sweep", |h| {
            let mut all = Evaluation::default();
            for scheme in std::iter::once(Scheme::None).chain(trainers.iter().map(|&t| t.into())) {
                all.extend(h.evaluate_scheme(scheme)?);
            }
            let outputs = all.write(&h.run_dir, "")?;
            Ok((all, outputs))
        })
    }
}
