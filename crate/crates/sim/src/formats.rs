//! On-disk documents: PA models, checkpoints, training logs, manifests and
//! result tables. JSON documents carry a `format` tag and a version.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use symdpd_core::receiver::PretrainReport;
use symdpd_core::{Demapper, DpdKind, DpdModel, PaModel, TrainRecord};

use crate::config::ExperimentConfig;

pub const FORMAT_VERSION: u32 = 1;
pub const PA_FORMAT: &str = "symdpd-pa";
pub const DPD_FORMAT: &str = "symdpd-dpd";
pub const DEMAPPER_FORMAT: &str = "symdpd-demapper";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaMetadata {
    /// How the model was obtained, e.g. `reference`.
    pub source: String,
    pub seed: u64,
    /// Identification NMSE against the measured output, dB.
    pub fit_nmse_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaDocument {
    pub format: String,
    pub version: u32,
    pub metadata: PaMetadata,
    pub model: PaModel,
}

impl PaDocument {
    pub fn new(model: PaModel, metadata: PaMetadata) -> Self {
        Self {
            format: PA_FORMAT.into(),
            version: FORMAT_VERSION,
            metadata,
            model,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpdCheckpoint {
    pub format: String,
    pub version: u32,
    /// `gmp` or `r2tdnn`.
    pub kind: String,
    /// Number of real parameters.
    pub k1: usize,
    pub layer_widths: Vec<usize>,
    pub trainer: String,
    /// Training iterations completed.
    pub iteration: usize,
    pub seed: u64,
    pub config_hash: String,
    pub model: DpdModel,
}

impl DpdCheckpoint {
    pub fn new(model: &DpdModel, trainer: &str, iteration: usize, seed: u64, config_hash: &str) -> Self {
        let kind = match model.kind {
            DpdKind::Gmp { .. } => "gmp",
            DpdKind::R2tdnn { .. } => "r2tdnn",
        };
        Self {
            format: DPD_FORMAT.into(),
            version: FORMAT_VERSION,
            kind: kind.into(),
            k1: model.param_count(),
            layer_widths: model.layer_widths(),
            trainer: trainer.into(),
            iteration,
            seed,
            config_hash: config_hash.into(),
            model: model.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemapperCheckpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub report: PretrainReport,
    pub demapper: Demapper,
}

impl DemapperCheckpoint {
    pub fn new(demapper: Demapper, report: PretrainReport, seed: u64, config_hash: &str) -> Self {
        Self {
            format: DEMAPPER_FORMAT.into(),
            version: FORMAT_VERSION,
            seed,
            config_hash: config_hash.into(),
            report,
            demapper,
        }
    }
}

/// Documents that carry a format tag checked on load.
pub trait Tagged {
    const FORMAT: &'static str;
    fn tag(&self) -> (&str, u32);
}

macro_rules! tagged {
    ($t:ty, $f:expr) => {
        impl Tagged for $t {
            const FORMAT: &'static str = $f;
            fn tag(&self) -> (&str, u32) {
                (&self.format, self.version)
            }
        }
    };
}
tagged!(PaDocument, PA_FORMAT);
tagged!(DpdCheckpoint, DPD_FORMAT);
tagged!(DemapperCheckpoint, DEMAPPER_FORMAT);

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    serde_json::from_reader(r).with_context(|| format!("parsing {}", path.display()))
}

/// Reads a tagged document, rejecting other formats and newer versions.
pub fn read_document<T: DeserializeOwned + Tagged>(path: &Path) -> Result<T> {
    let doc: T = read_json(path)?;
    let (format, version) = doc.tag();
    if format != T::FORMAT {
        bail!(
            "{}: expected a `{}` document, found `{format}`",
            path.display(),
            T::FORMAT
        );
    }
    if version > FORMAT_VERSION {
        bail!(
            "{}: format version {version} is newer than supported {FORMAT_VERSION}",
            path.display()
        );
    }
    Ok(doc)
}

/// Appends training records, one JSON object per line.
pub struct RecordWriter {
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
        })
    }

    pub fn write(&mut self, record: &TrainRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_records(path: &Path) -> Result<Vec<TrainRecord>> {
    let r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            config: config.clone(),
            config_hash: config.hash(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            stages: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: String,
    pub target_dbm: f64,
    pub p_out_dbm: f64,
    pub drive: f64,
    pub ser: f64,
    pub errors: usize,
    pub symbols: usize,
    pub theory_ser: f64,
    /// The drive search did not reach the target within tolerance.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityRow {
    pub scheme: String,
    pub p_out_dbm: f64,
    pub nmse_db: f64,
    pub acpr_dbc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub scheme: String,
    pub freq_hz: f64,
    pub psd_db: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().map(|row| Ok(row?)).collect()
}
