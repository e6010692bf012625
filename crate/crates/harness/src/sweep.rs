//! Seeded Monte-Carlo BER sweeps.
//!
//! Block `i` of a point draws its bits and noise from `mix(point_seed, 2i)`
//! and `mix(point_seed, 2i + 1)`. Blocks are simulated in fixed-size rounds
//! and the stopping rule is checked between rounds, so the set of simulated
//! blocks (and every error count) is independent of the worker count.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use eqz_core::mix_seed;
use eqz_core::turbo::{transmit_coded_block, turbo_equalize};
use eqz_core::txchain::{gray_map, random_bits, ChannelModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{EqualizerSpec, Mode};
use crate::experiment::{domain, point_seed, Equalizer, Experiment};

/// Column order of the BER CSV.
pub const BER_CSV_HEADER: &str = "ebn0_db,bits,errors,ber,equalizer,channel,M,mode,seed_digest,wall_ms";

/// One measured point of one equalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct BerRecord {
    pub ebn0_db: f64,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    pub equalizer: String,
    pub channel: String,
    pub modulation: usize,
    pub mode: Mode,
    pub seed_digest: String,
    pub wall_ms: u64,
    pub blocks: u64,
    /// Stopped on the bit budget before reaching `min_errors`.
    pub max_bits_reached: bool,
    /// Turbo mode: post-decoder errors after each round.
    pub iteration_errors: Vec<u64>,
}

impl BerRecord {
    /// Standard error of the BER estimate, `sqrt(p(1-p)/bits)`.
    pub fn std_error(&self) -> f64 {
        (self.ber * (1.0 - self.ber) / self.bits as f64).sqrt()
    }

    /// Whether the point met the error threshold (not cut by the bit budget).
    pub fn is_reportable(&self) -> bool {
        !self.max_bits_reached
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    ebn0_db: f64,
    bits: u64,
    errors: u64,
    ber: f64,
    equalizer: String,
    channel: String,
    #[serde(rename = "M")]
    m: usize,
    mode: Mode,
    seed_digest: String,
    wall_ms: u64,
}

pub fn write_ber_csv(records: &[BerRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in records {
        w.serialize(CsvRow {
            ebn0_db: r.ebn0_db,
            bits: r.bits,
            errors: r.errors,
            ber: r.ber,
            equalizer: r.equalizer.clone(),
            channel: r.channel.clone(),
            m: r.modulation,
            mode: r.mode,
            seed_digest: r.seed_digest.clone(),
            wall_ms: r.wall_ms,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a BER CSV back. Columns not in the file (block count, flags,
/// per-round errors) come back empty.
pub fn read_ber_csv(path: &Path) -> Result<Vec<BerRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(
        header.join(",") == BER_CSV_HEADER,
        "{}: unexpected header {:?}",
        path.display(),
        header.join(",")
    );
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: CsvRow = row.with_context(|| format!("in {}", path.display()))?;
        out.push(BerRecord {
            ebn0_db: row.ebn0_db,
            bits: row.bits,
            errors: row.errors,
            ber: row.ber,
            equalizer: row.equalizer,
            channel: row.channel,
            modulation: row.m,
            mode: row.mode,
            seed_digest: row.seed_digest,
            wall_ms: row.wall_ms,
            blocks: 0,
            max_bits_reached: false,
            iteration_errors: Vec::new(),
        });
    }
    Ok(out)
}

/// Per-round turbo errors as a long-format CSV.
pub fn write_iteration_csv(records: &[BerRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["ebn0_db", "equalizer", "iteration", "bits", "errors", "ber"])?;
    for r in records {
        for (i, &e) in r.iteration_errors.iter().enumerate() {
            w.write_record([
                r.ebn0_db.to_string(),
                r.equalizer.clone(),
                (i + 1).to_string(),
                r.bits.to_string(),
                e.to_string(),
                format!("{:e}", e as f64 / r.bits as f64),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
struct BlockStats {
    bits: u64,
    errors: u64,
    iteration_errors: Vec<u64>,
}

fn count_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

fn simulate_block(
    exp: &Experiment,
    eq: &Equalizer,
    ch: &ChannelModel,
    bit_seed: u64,
    noise_seed: u64,
) -> Result<BlockStats> {
    let c = &exp.constellation;
    match exp.config.mode {
        Mode::Uncoded => {
            let bits = random_bits(exp.config.stopping.block_symbols * c.bits_per_symbol(), bit_seed);
            let block = gray_map(&bits, c)?;
            let z = ch.transmit(&block.symbols, noise_seed);
            let llrs = eq.llrs(&z, c)?;
            let errors = llrs
                .iter()
                .zip(&bits)
                .filter(|(l, &b)| ((**l < 0.0) as u8) != b)
                .count() as u64;
            Ok(BlockStats {
                bits: bits.len() as u64,
                errors,
                iteration_errors: Vec::new(),
            })
        }
        Mode::Turbo => {
            let code = exp.code.as_ref().expect("turbo experiments carry a code");
            let settings = exp.config.turbo.as_ref().expect("validated");
            let (first, bank) = eq.turbo_first();
            let cfg = settings.config(first, exp.geometry);
            let tx = transmit_coded_block(code, ch, c, cfg.interleaver_seed, bit_seed, noise_seed)?;
            let out = turbo_equalize(&tx.z, code, ch, c, bank, &cfg)?;
            Ok(BlockStats {
                bits: tx.info_bits.len() as u64,
                errors: count_errors(&out.decoded_bits, &tx.info_bits),
                iteration_errors: out
                    .iterations
                    .iter()
                    .map(|r| count_errors(&r.info_bits, &tx.info_bits))
                    .collect(),
            })
        }
    }
}

/// Simulates one equalizer at one point until the stopping rule triggers.
pub fn run_point(
    exp: &Experiment,
    spec: &EqualizerSpec,
    eq: &Equalizer,
    ebn0_db: f64,
    pool: &rayon::ThreadPool,
) -> Result<BerRecord> {
    let start = Instant::now();
    let stop = &exp.config.stopping;
    let ch = exp.channel_at(ebn0_db)?;
    let seed = point_seed(exp.master_seed, domain::SWEEP, ebn0_db);
    let mut digest = Sha256::new();
    digest.update(seed.to_le_bytes());
    let mut total = BlockStats::default();
    let mut blocks = 0u64;
    loop {
        let round: Vec<u64> = (blocks..blocks + stop.round_blocks as u64).collect();
        let stats: Vec<BlockStats> = pool.install(|| {
            round
                .par_iter()
                .map(|&i| simulate_block(exp, eq, &ch, mix_seed(seed, 2 * i), mix_seed(seed, 2 * i + 1)))
                .collect::<Result<_>>()
        })?;
        for (i, s) in round.iter().zip(stats) {
            digest.update(mix_seed(seed, 2 * i).to_le_bytes());
            total.bits += s.bits;
            total.errors += s.errors;
            if total.iteration_errors.len() < s.iteration_errors.len() {
                total.iteration_errors.resize(s.iteration_errors.len(), 0);
            }
            for (t, e) in total.iteration_errors.iter_mut().zip(&s.iteration_errors) {
                *t += e;
            }
        }
        blocks += round.len() as u64;
        let enough = total.errors >= stop.min_errors && blocks >= stop.min_blocks;
        if enough || total.bits >= stop.max_bits {
            break;
        }
    }
    let hash = digest.finalize();
    let seed_digest: String = hash[..8].iter().map(|b| format!("{b:02x}")).collect();
    Ok(BerRecord {
        ebn0_db,
        bits: total.bits,
        errors: total.errors,
        ber: total.errors as f64 / total.bits as f64,
        equalizer: spec.label(),
        channel: exp.channel_label(),
        modulation: exp.constellation.order(),
        mode: exp.config.mode,
        seed_digest,
        wall_ms: start.elapsed().as_millis() as u64,
        blocks,
        max_bits_reached: total.errors < stop.min_errors,
        iteration_errors: total.iteration_errors,
    })
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")
}

/// Runs every equalizer over its grid. Records come out grouped by
/// equalizer in config order, points in grid order.
pub fn run_sweep(exp: &Experiment, workers: usize) -> Result<Vec<BerRecord>> {
    let pool = thread_pool(workers)?;
    let mut records = Vec::new();
    for spec in &exp.config.equalizers {
        for ebn0_db in exp.grid(spec) {
            let eq = exp.prepare(spec, ebn0_db)?;
            records.push(run_point(exp, spec, &eq, ebn0_db, &pool)?);
        }
    }
    Ok(records)
}
