//! Derived tables: dB gain versus complexity, and output-LLR histograms.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use eqz_core::eqznet::{init_random, lmmse_operation_count, operation_count, Architecture};
use eqz_core::txchain::{gray_map, random_bits};
use eqz_core::{mix_seed, LLR_CLAMP};

use crate::config::EqualizerSpec;
use crate::experiment::{domain, point_seed, Experiment};
use crate::sweep::BerRecord;

/// Eb/N0 at which a curve crosses `target`, interpolating `log10(BER)`
/// linearly in dB between the two bracketing points. `None` when the target
/// is outside the measured range. Points with zero errors are ignored.
pub fn crossing_db(points: &[(f64, f64)], target: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|&(_, b)| b > 0.0).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let t = target.log10();
    for w in pts.windows(2) {
        let ((x0, b0), (x1, b1)) = (w[0], w[1]);
        let (l0, l1) = (b0.log10(), b1.log10());
        if (l0 - t) * (l1 - t) <= 0.0 && l0 != l1 {
            return Some(x0 + (t - l0) / (l1 - l0) * (x1 - x0));
        }
        if l0 == t {
            return Some(x0);
        }
    }
    match pts.as_slice() {
        [.., (x, b)] if b.log10() == t => Some(*x),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub equalizer: String,
    pub ebn0_at_target: Option<f64>,
    pub gain_db: Option<f64>,
    pub complexity_factor: Option<f64>,
    /// `ok`, `out_of_range` (this curve misses the target) or
    /// `no_reference` (the reference curve does).
    pub status: &'static str,
}

/// MAC ratio of an architecture over LMMSE on the same frame.
pub fn complexity_factor(architecture: Architecture, n1: usize, n2: usize) -> Result<f64> {
    let p = init_random(architecture, n1, n2, 0)?;
    Ok(operation_count(&p) as f64 / lmmse_operation_count(&p) as f64)
}

/// Gain of every curve over `reference` at `target_ber`. Curves that do
/// not cross the target are flagged rather than extrapolated.
pub fn emit_gain_table(
    records: &[BerRecord],
    target_ber: f64,
    reference: &str,
    architectures: &BTreeMap<String, Architecture>,
    (n1, n2): (usize, usize),
) -> Result<Vec<GainRow>> {
    let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in records {
        match curves.iter_mut().find(|(l, _)| *l == r.equalizer) {
            Some((_, pts)) => pts.push((r.ebn0_db, r.ber)),
            None => curves.push((r.equalizer.clone(), vec![(r.ebn0_db, r.ber)])),
        }
    }
    let reference_db = curves
        .iter()
        .find(|(l, _)| l == reference)
        .and_then(|(_, pts)| crossing_db(pts, target_ber));
    let mut rows = Vec::new();
    for (label, pts) in &curves {
        let at = crossing_db(pts, target_ber);
        let complexity_factor = if label == reference {
            Some(1.0)
        } else {
            match architectures.get(label) {
                Some(a) => Some(complexity_factor(*a, n1, n2)?),
                None => None,
            }
        };
        let (gain_db, status) = match (at, reference_db) {
            (Some(a), Some(r)) => (Some(r - a), "ok"),
            (None, _) => (None, "out_of_range"),
            (Some(_), None) => (None, "no_reference"),
        };
        rows.push(GainRow {
            equalizer: label.clone(),
            ebn0_at_target: at,
            gain_db,
            complexity_factor,
            status,
        });
    }
    Ok(rows)
}

pub fn write_gain_csv(rows: &[GainRow], target_ber: f64, path: &Path) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["equalizer", "target_ber", "ebn0_db_at_target", "gain_db", "complexity_factor", "status"])?;
    for r in rows {
        w.write_record([
            r.equalizer.clone(),
            format!("{target_ber:e}"),
            opt(r.ebn0_at_target),
            opt(r.gain_db),
            opt(r.complexity_factor),
            r.status.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const HIST_BIN_WIDTH: f64 = 0.5;
pub const HIST_BINS: usize = (2.0 * LLR_CLAMP / HIST_BIN_WIDTH) as usize;

/// Output LLR counts over `[-40, 40]` in bins of 0.5, split by the true bit.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrHistogram {
    pub equalizer: String,
    /// `counts[b][i]`: LLRs of transmitted bit `b` falling into bin `i`.
    pub counts: [Vec<u64>; 2],
}

impl LlrHistogram {
    pub fn new(equalizer: impl Into<String>) -> Self {
        Self {
            equalizer: equalizer.into(),
            counts: [vec![0; HIST_BINS], vec![0; HIST_BINS]],
        }
    }

    pub fn bin_of(llr: f64) -> usize {
        let i = ((llr + LLR_CLAMP) / HIST_BIN_WIDTH).floor();
        (i.max(0.0) as usize).min(HIST_BINS - 1)
    }

    pub fn bin_lower_edge(i: usize) -> f64 {
        -LLR_CLAMP + i as f64 * HIST_BIN_WIDTH
    }

    pub fn add(&mut self, llr: f64, bit: u8) {
        self.counts[bit as usize][Self::bin_of(llr)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Fraction of LLRs with `|L| < threshold`; `threshold` is rounded to
    /// the bin grid.
    pub fn mass_below(&self, threshold: f64) -> f64 {
        let lo = Self::bin_of(-threshold);
        let hi = Self::bin_of(threshold);
        let inside: u64 = self.counts.iter().map(|c| c[lo..hi].iter().sum::<u64>()).sum();
        inside as f64 / self.total() as f64
    }
}

/// LLR histograms of every equalizer in the experiment at one point, on a
/// common set of test blocks.
pub fn emit_llr_histogram(exp: &Experiment, ebn0_db: f64, symbols: usize) -> Result<Vec<LlrHistogram>> {
    let c = &exp.constellation;
    let ch = exp.channel_at(ebn0_db)?;
    let seed = point_seed(exp.master_seed, domain::HISTOGRAM, ebn0_db);
    let block_symbols = exp.config.stopping.block_symbols;
    let mut blocks = Vec::new();
    let mut done = 0;
    let mut i = 0u64;
    while done < symbols {
        let len = block_symbols.min(symbols - done);
        let bits = random_bits(len * c.bits_per_symbol(), mix_seed(seed, 2 * i));
        let z = ch.transmit(&gray_map(&bits, c)?.symbols, mix_seed(seed, 2 * i + 1));
        blocks.push((bits, z));
        done += len;
        i += 1;
    }
    let mut out = Vec::new();
    for spec in &exp.config.equalizers {
        let eq = exp.prepare(spec, ebn0_db)?;
        let mut h = LlrHistogram::new(spec.label());
        for (bits, z) in &blocks {
            for (&l, &b) in eq.llrs(z, c)?.iter().zip(bits) {
                h.add(l, b);
            }
        }
        out.push(h);
    }
    Ok(out)
}

pub fn write_histogram_csv(hists: &[LlrHistogram], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["equalizer", "bit", "bin_lo", "bin_hi", "count"])?;
    for h in hists {
        for (bit, counts) in h.counts.iter().enumerate() {
            for (i, n) in counts.iter().enumerate() {
                let lo = LlrHistogram::bin_lower_edge(i);
                w.write_record([
                    h.equalizer.clone(),
                    bit.to_string(),
                    lo.to_string(),
                    (lo + HIST_BIN_WIDTH).to_string(),
                    n.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Complexity factor of an equalizer spec, when it is a network.
pub fn spec_complexity(spec: &EqualizerSpec, n1: usize, n2: usize) -> Result<Option<f64>> {
    Ok(match spec {
        EqualizerSpec::EqznetTrain { architecture, .. } => Some(complexity_factor(*architecture, n1, n2)?),
        EqualizerSpec::Lmmse { .. } => Some(1.0),
        _ => None,
    })
}
