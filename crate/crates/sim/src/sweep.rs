//! Parallel SER evaluation over output-power targets.
//!
//! Every block draws from its own sub-stream of the evaluation seed and the
//! per-block counts are merged in block order, so results do not depend on
//! the thread count.

use anyhow::Result;
use rayon::prelude::*;
use symdpd_core::chain::BlockStats;
use symdpd_core::{rng, Chain, DpdModel};

use crate::formats::SweepRow;

/// Block sizes covering `total` symbols, the last one possibly short.
pub fn block_sizes(total: usize, block: usize) -> Vec<usize> {
    let block = block.max(1);
    (0..total.div_ceil(block))
        .map(|b| block.min(total - b * block))
        .collect()
}

/// SER over `total` symbols at a fixed drive.
pub fn evaluate_parallel(
    chain: &Chain,
    dpd: Option<&DpdModel>,
    drive: f64,
    total: usize,
    block: usize,
    seed: u64,
) -> Result<BlockStats> {
    let stats = block_sizes(total, block)
        .into_par_iter()
        .enumerate()
        .map(|(b, n)| {
            let mut r = rng::substream(seed, "eval", b as u64);
            chain.evaluate_block(dpd, drive, n, &mut r)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(stats.into_iter().fold(BlockStats::default(), BlockStats::merge))
}

/// One row per target: bisect the drive onto the target output power, then
/// count symbol errors there. Rows whose search did not converge are flagged.
pub fn sweep_rows(
    chain: &Chain,
    scheme: &str,
    dpd: Option<&DpdModel>,
    targets: &[f64],
    total: usize,
    block: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    targets
        .par_iter()
        .map(|&target| {
            let search = chain.find_drive(dpd, target, seed)?;
            let stats = evaluate_parallel(chain, dpd, search.drive, total, block, seed)?;
            let p_out = stats.power_dbm();
            Ok(SweepRow {
                scheme: scheme.into(),
                target_dbm: target,
                p_out_dbm: p_out,
                drive: search.drive,
                ser: stats.ser(),
                errors: stats.errors,
                symbols: stats.symbols,
                theory_ser: chain.theoretical_ser(p_out)?,
                flagged: !search.converged,
            })
        })
        .collect()
}
