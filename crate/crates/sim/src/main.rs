use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use symdpd::config::ExperimentConfig;
use symdpd::formats::{LinearityRow, SweepRow};
use symdpd::harness::{Harness, Scheme};
use symdpd::Trainer;

#[derive(Parser)]
#[command(
    name = "symdpd",
    version,
    about = "Symbol-based over-the-air DPD training experiments"
)]
struct Cli {
    /// TOML config, or a run's manifest.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set seed=3 --set pa.seed=1`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run directory (default: $SYMDPD_RUN_ROOT/<config hash>).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identify the reference PA (or check a PA file) into the run directory.
    FitPa,
    /// Train the neural demapper on AWGN.
    PretrainDemapper,
    /// Train a predistorter.
    Train {
        #[arg(long, value_enum)]
        trainer: Option<Trainer>,
    },
    /// SER sweep, linearity and error spectrum of one scheme.
    Evaluate {
        #[arg(long, value_enum, default_value = "rl")]
        scheme: Scheme,
    },
    /// Train missing predistorters and compare all schemes.
    Sweep,
    /// Print the effective config as TOML.
    ShowConfig,
}

fn print_eval(sweep: &[SweepRow], linearity: &[LinearityRow]) {
    println!("scheme  target_dbm  p_out_dbm  drive     ser        theory     flag");
    for r in sweep {
        println!(
            "{:<7} {:>10.2} {:>10.3} {:>8.4}  {:<10.3e} {:<10.3e} {}",
            r.scheme,
            r.target_dbm,
            r.p_out_dbm,
            r.drive,
            r.ser,
            r.theory_ser,
            if r.flagged { "!" } else { "" }
        );
    }
    for l in linearity {
        println!(
            "{}: {:.2} dBm  NMSE {:.2} dB  ACPR {:.2} dBc",
            l.scheme, l.p_out_dbm, l.nmse_db, l.acpr_dbc
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let config = base.with_overrides(&cli.overrides)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", toml::to_string(&config)?);
        println!("# hash = {}", config.hash());
        return Ok(());
    }
    let mut h = Harness::open(config, cli.run_dir)?;
    eprintln!("run directory {}", h.run_dir().display());
    match cli.command {
        Command::FitPa => {
            let doc = h.fit_pa()?;
            match doc.metadata.fit_nmse_db {
                Some(n) => println!("PA ({}) identified, NMSE {n:.2} dB", doc.metadata.source),
                None => println!("PA ({}) loaded", doc.metadata.source),
            }
        }
        Command::PretrainDemapper => {
            let ck = h.pretrain_demapper()?;
            println!(
                "demapper: {} steps, CE {:.4} (ML {:.4})",
                ck.report.steps, ck.report.ce_nn, ck.report.ce_ml
            );
        }
        Command::Train { trainer } => {
            let trainer = trainer.unwrap_or(h.config().trainer);
            let (_, records) = h.train(trainer)?;
            if let Some(last) = records.last() {
                println!(
                    "{}: {} records, final loss {:.5}, {:.2} dBm",
                    trainer.name(),
                    records.len(),
                    last.loss,
                    last.power_dbm
                );
            }
        }
        Command::Evaluate { scheme } => {
            let e = h.evaluate(scheme)?;
            print_eval(&e.sweep, &e.linearity);
        }
        Command::Sweep => {
            let e = h.sweep()?;
            print_eval(&e.sweep, &e.linearity);
        }
        Command::ShowConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
