use std::fs;
use std::path::Path;
use std::process::Command;

use symdpd::config::{DpdChoice, ExperimentConfig};
use symdpd::formats::{read_csv, read_document, read_records, DpdCheckpoint, SweepRow};
use symdpd::harness::{dpd_file, Harness, Scheme, FAILED_FILE, LINEARITY_FILE, SPECTRUM_FILE, SWEEP_FILE};
use symdpd::{PaSelection, Trainer};
use symdpd_core::chain::POWER_TOLERANCE_DB;

fn small() -> ExperimentConfig {
    ExperimentConfig {
        iterations: 12,
        batch_symbols: 256,
        ila_iterations: 2,
        ila_blocks: 2,
        ila_block_symbols: 1024,
        sweep_dbm: vec![28.2, 31.2],
        eval_symbols: 6000,
        eval_block_symbols: 2048,
        linearity_symbols: 4096,
        checkpoint_every: 5,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn sweep_outputs_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        Harness::open(small(), Some(dir.to_path_buf()))
            .unwrap()
            .sweep()
            .unwrap();
    }
    for f in [
        SWEEP_FILE,
        LINEARITY_FILE,
        SPECTRUM_FILE,
        "dpd_rl.json",
        "dpd_ila.json",
        "train_rl.jsonl",
    ] {
        let (x, y) = (fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        assert!(!x.is_empty() && x == y, "{f} differs");
    }
    let rows: Vec<SweepRow> = read_csv(&a.path().join(SWEEP_FILE)).unwrap();
    let schemes: Vec<&str> = rows.iter().map(|r| r.scheme.as_str()).collect();
    assert_eq!(schemes, ["none", "none", "ila", "ila", "rl", "rl"]);
    assert!(!a.path().join(FAILED_FILE).exists());
}

#[test]
fn rl_writes_log_and_periodic_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = Harness::open(small(), Some(dir.path().to_path_buf())).unwrap();
    let (model, records) = h.train(Trainer::Rl).unwrap();
    assert_eq!(records.len(), 12);
    assert_eq!(read_records(&dir.path().join("train_rl.jsonl")).unwrap(), records);
    let ck: DpdCheckpoint = read_document(&dir.path().join(dpd_file(Trainer::Rl))).unwrap();
    assert_eq!(ck.model, model);
    assert_eq!(
        (ck.kind.as_str(), ck.iteration, ck.k1),
        ("gmp", 12, model.param_count())
    );
    assert!(model.frozen_scale.is_some());
    let mut cks: Vec<_> = fs::read_dir(dir.path().join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    cks.sort();
    assert_eq!(cks, ["rl_000005.json", "rl_000010.json"]);
}

#[test]
fn r2tdnn_checkpoint_records_layers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        dpd: DpdChoice::R2tdnn,
        iterations: 3,
        ..small()
    };
    let mut h = Harness::open(cfg, Some(dir.path().to_path_buf())).unwrap();
    let ck_layers = |t| {
        read_document::<DpdCheckpoint>(&dir.path().join(dpd_file(t)))
            .unwrap()
            .layer_widths
    };
    h.train(Trainer::Rl).unwrap();
    assert_eq!(ck_layers(Trainer::Rl).len(), 4);
}

#[test]
fn evaluating_untrained_scheme_leaves_failed_marker() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = Harness::open(small(), Some(dir.path().to_path_buf())).unwrap();
    let err = h.evaluate(Scheme::Rl).unwrap_err();
    assert!(format!("{err:#}").contains("train --trainer rl"), "{err:#}");
    let marker = fs::read_to_string(dir.path().join(FAILED_FILE)).unwrap();
    assert!(marker.starts_with("stage evaluate-rl"), "{marker}");
    let stage = h.manifest().stages.iter().find(|s| s.name == "evaluate-rl").unwrap();
    assert!(stage.status.starts_with("failed"));
}

#[test]
fn run_directory_rejects_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    Harness::open(small(), Some(dir.path().to_path_buf())).unwrap();
    let other = ExperimentConfig { seed: 12, ..small() };
    assert!(Harness::open(other, Some(dir.path().to_path_buf())).is_err());
    assert!(Harness::open(small(), Some(dir.path().to_path_buf())).is_ok());
}

/// Block-to-block power spread of 8192 64-QAM symbols is about 0.02 dB rms.
const MEASURED_POWER_TOL_DB: f64 = 0.15;

#[test]
fn drive_search_hits_target_for_trained_predistorters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        sweep_dbm: vec![25.2, 29.2, 32.2],
        eval_symbols: 8192,
        ..small()
    };
    let mut h = Harness::open(cfg.clone(), Some(dir.path().to_path_buf())).unwrap();
    let (dpd, _) = h.train(Trainer::Ila).unwrap();
    let (chain, train) = h.training_setup().unwrap();
    assert!((train.achieved_dbm - cfg.train_power_dbm).abs() <= POWER_TOLERANCE_DB);
    for &target in &cfg.sweep_dbm {
        let s = chain.find_drive(Some(&dpd), target, cfg.seed).unwrap();
        assert!(
            s.converged && (s.achieved_dbm - target).abs() <= POWER_TOLERANCE_DB,
            "{target}: {s:?}"
        );
    }
    for scheme in [Scheme::None, Scheme::Ila] {
        for row in h.evaluate(scheme).unwrap().sweep {
            assert!(!row.flagged);
            assert!(
                (row.p_out_dbm - row.target_dbm).abs() <= MEASURED_POWER_TOL_DB,
                "{} {}: {}",
                row.scheme,
                row.target_dbm,
                row.p_out_dbm
            );
        }
    }
}

#[test]
fn unreachable_power_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        sweep_dbm: vec![45.0],
        eval_symbols: 2048,
        ..small()
    };
    let rows = Harness::open(cfg, Some(dir.path().to_path_buf()))
        .unwrap()
        .evaluate(Scheme::None)
        .unwrap()
        .sweep;
    assert!(rows[0].flagged);
    assert!(rows[0].p_out_dbm < 44.0);
}

fn cli(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_symdpd"))
        .args(args)
        .env("SYMDPD_RUN_ROOT", dir)
        .output()
        .unwrap()
}

#[test]
fn cli_reports_missing_pa_file_by_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        dir.path(),
        &[
            "evaluate",
            "--scheme",
            "none",
            "--set",
            "pa.kind=file",
            "--set",
            "pa.path=/nonexistent/pa.json",
        ],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`pa.path`"), "{err}");
}

#[test]
fn cli_reads_toml_and_uses_hashed_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(
        &cfg_path,
        "seed = 4\nsweep_dbm = [30.2]\neval_symbols = 2048\n[pa]\nkind = \"reference\"\nseed = 2\n",
    )
    .unwrap();
    let out = cli(dir.path(), &["fit-pa", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    assert_eq!(cfg.pa, PaSelection::Reference { seed: 2 });
    let run = dir.path().join(&cfg.hash()[..16]);
    assert!(run.join("pa.json").is_file());

    // A manifest reproduces the config, and the PA file can be reused.
    let pa = run.join("pa.json");
    let out = cli(
        dir.path(),
        &[
            "evaluate",
            "--scheme",
            "none",
            "--config",
            run.join("manifest.json").to_str().unwrap(),
            "--set",
            "pa.kind=file",
            "--set",
            &format!("pa.path=\"{}\"", pa.display()),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("none"));
}
