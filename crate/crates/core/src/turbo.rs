//! Turbo equalization: a soft-in soft-out equalizer and the LDPC decoder
//! exchange extrinsic LLRs. The first round may use a trained EqzNet bank,
//! later rounds a conventional equalizer fed with decoder priors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bcjr::{build_trellis, map_extrinsic};
use crate::eqznet::EqzNetBank;
use crate::ldpc::{decode, LdpcCode};
use crate::lmmse::{demap_gaussian, design_filter_with_symbol_variance, dot};
use crate::txchain::{fill_frame, gray_map, random_bits, ChannelModel, PamConstellation};
use crate::{clamp_llr, Error, Result};

/// The shipped rate-8/9 code (n = 1998, k = 1776, column weight 3).
pub const STANDARD_CODE_ALIST: &str = include_str!("../codes/peg_1998_1776.alist");
/// PEG parameters that regenerate [`STANDARD_CODE_ALIST`].
pub const STANDARD_CODE_PEG: (usize, usize, usize, u64) = (1998, 222, 3, 2024);

pub fn standard_code() -> LdpcCode {
    LdpcCode::from_alist(STANDARD_CODE_ALIST).expect("shipped code parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirstEqualizer {
    Eqznet,
    Lmmse,
    Bcjr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConventionalEqualizer {
    Lmmse,
    Bcjr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurboConfig {
    pub iterations: usize,
    pub first_iteration_equalizer: FirstEqualizer,
    pub subsequent_equalizer: ConventionalEqualizer,
    pub decoder_iterations: usize,
    /// `None` disables interleaving.
    pub interleaver_seed: Option<u64>,
    /// Freeze the decision once the decoder returns a valid codeword; the
    /// remaining rounds repeat it. Without this, saturated extrinsics of an
    /// early-converged decoder can re-inject errors through cancellation.
    pub early_stop: bool,
    /// LMMSE window; EqzNet banks carry their own.
    pub n1: usize,
    pub n2: usize,
}

impl Default for TurboConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            first_iteration_equalizer: FirstEqualizer::Eqznet,
            subsequent_equalizer: ConventionalEqualizer::Lmmse,
            decoder_iterations: 50,
            interleaver_seed: Some(1),
            early_stop: true,
            n1: 7,
            n2: 7,
        }
    }
}

impl TurboConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("turbo iterations must be at least 1".into()));
        }
        if self.decoder_iterations == 0 {
            return Err(Error::Config("decoder iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Bit permutation applied between encoder and mapper:
/// `interleaved[i] = codeword[perm[i]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn new(len: usize, seed: Option<u64>) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        if let Some(s) = seed {
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
        }
        Self { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn interleave<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.perm.iter().map(|&p| x[p]).collect()
    }

    pub fn deinterleave<T: Copy + Default>(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); y.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = y[i];
        }
        out
    }
}

/// One coded block on its way through the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedBlock {
    pub info_bits: Vec<u8>,
    pub codeword: Vec<u8>,
    pub z: Vec<f64>,
}

/// Encodes random information bits, interleaves, maps and transmits.
pub fn transmit_coded_block(
    code: &LdpcCode,
    channel: &ChannelModel,
    constellation: &PamConstellation,
    interleaver_seed: Option<u64>,
    bit_seed: u64,
    noise_seed: u64,
) -> Result<CodedBlock> {
    let info_bits = random_bits(code.k(), bit_seed);
    let codeword = code.encode(&info_bits)?;
    let tx_bits = Interleaver::new(code.n(), interleaver_seed).interleave(&codeword);
    let block = gray_map(&tx_bits, constellation)?;
    let z = channel.transmit(&block.symbols, noise_seed);
    Ok(CodedBlock { info_bits, codeword, z })
}

/// Symbol mean and variance from per-bit priors of one symbol.
fn symbol_moments(constellation: &PamConstellation, priors: &[f64]) -> (f64, f64) {
    let m = constellation.order();
    let mut logp = vec![0.0; m];
    for (i, lp) in logp.iter_mut().enumerate() {
        for (b, &l) in priors.iter().enumerate() {
            *lp += if constellation.bit(i, b) == 0 { l / 2.0 } else { -l / 2.0 };
        }
    }
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut norm, mut mean, mut second) = (0.0, 0.0, 0.0);
    for (i, &lp) in logp.iter().enumerate() {
        let p = (lp - max).exp();
        let x = constellation.level(i);
        norm += p;
        mean += p * x;
        second += p * x * x;
    }
    let mean = mean / norm;
    (mean, (second / norm - mean * mean).max(0.0))
}

/// SIC estimates `x̂_n` and the common gain `A = h_nᵀ f`.
pub(crate) fn sic_estimates(
    z: &[f64],
    channel: &ChannelModel,
    constellation: &PamConstellation,
    priors: &[f64],
    n1: usize,
    n2: usize,
) -> Result<(Vec<f64>, f64, f64)> {
    let q = constellation.bits_per_symbol();
    if priors.len() != z.len() * q {
        return Err(Error::LengthMismatch {
            expected: z.len() * q,
            actual: priors.len(),
        });
    }
    let (means, vars): (Vec<f64>, Vec<f64>) = priors
        .chunks_exact(q)
        .map(|p| symbol_moments(constellation, p))
        .unzip();
    let avg_var = if vars.is_empty() {
        1.0
    } else {
        vars.iter().sum::<f64>() / vars.len() as f64
    };
    let filter = design_filter_with_symbol_variance(channel, n1, n2, avg_var)?;
    let gain = filter.gain();
    let taps = channel.taps();
    let len = n1 + n2 + 1;
    let mut residual = vec![0.0; len];
    let mut est = Vec::with_capacity(z.len());
    for n in 0..z.len() {
        for (s, r) in residual.iter_mut().enumerate() {
            let t = n as isize - n2 as isize + s as isize;
            if t < 0 || t >= z.len() as isize {
                *r = 0.0;
                continue;
            }
            let t = t as usize;
            let mut isi = 0.0;
            for (i, &h) in taps.iter().enumerate() {
                if i > t || t - i == n {
                    continue;
                }
                isi += h * means[t - i];
            }
            *r = z[t] - isi;
        }
        est.push(dot(filter.taps(), &residual));
    }
    Ok((est, gain, filter.reliability_constant()))
}

/// Soft-interference-cancelling LMMSE equalizer returning extrinsic LLRs,
/// one per code bit in transmission order.
pub fn lmmse_with_priors(
    z: &[f64],
    channel: &ChannelModel,
    constellation: &PamConstellation,
    priors: &[f64],
    n1: usize,
    n2: usize,
) -> Result<Vec<f64>> {
    let (est, gain, c) = sic_estimates(z, channel, constellation, priors, n1, n2)?;
    if c <= 0.0 {
        return Err(Error::InvalidFilter(c));
    }
    let q = constellation.bits_per_symbol();
    let mut out = vec![0.0; z.len() * q];
    if q == 1 {
        // 2·A·x̂ / (A(1 − A)) = 2x̂ / C, the plain LMMSE LLR when priors vanish
        for (o, &e) in out.iter_mut().zip(&est) {
            *o = clamp_llr(2.0 * e / c);
        }
    } else {
        let variance = gain * c;
        for ((o, p), &e) in out.chunks_exact_mut(q).zip(priors.chunks_exact(q)).zip(&est) {
            demap_gaussian(e, gain, variance, constellation, Some(p), o);
        }
    }
    Ok(out)
}

/// Per-symbol EqzNet LLRs, `q` per symbol.
pub fn eqznet_llrs(z: &[f64], bank: &EqzNetBank) -> Vec<f64> {
    let (n1, n2) = bank.geometry();
    let q = bank.bits_per_symbol();
    let mut frame = vec![0.0; n1 + n2 + 1];
    let mut out = vec![0.0; z.len() * q];
    for (n, o) in out.chunks_exact_mut(q).enumerate() {
        fill_frame(z, n, n1, n2, &mut frame);
        bank.forward_samples_into(&frame, o);
        o.iter_mut().for_each(|v| *v = clamp_llr(*v));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationResult {
    /// Decoded information bits after this round.
    pub info_bits: Vec<u8>,
    pub decoder_converged: bool,
    pub decoder_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurboOutput {
    pub decoded_bits: Vec<u8>,
    pub iterations: Vec<IterationResult>,
}

/// Runs `config.iterations` equalizer/decoder rounds on one received block.
pub fn turbo_equalize(
    z: &[f64],
    code: &LdpcCode,
    channel: &ChannelModel,
    constellation: &PamConstellation,
    eqznet: Option<&EqzNetBank>,
    config: &TurboConfig,
) -> Result<TurboOutput> {
    config.validate()?;
    let q = constellation.bits_per_symbol();
    if code.n() % q != 0 || z.len() * q != code.n() {
        return Err(Error::LengthMismatch {
            expected: code.n().div_ceil(q),
            actual: z.len(),
        });
    }
    if config.first_iteration_equalizer == FirstEqualizer::Eqznet {
        let bank = eqznet.ok_or_else(|| Error::Config("EqzNet first iteration requested but no bank supplied".into()))?;
        if bank.bits_per_symbol() != q {
            return Err(Error::Config(format!(
                "EqzNet bank emits {} LLRs per symbol, constellation needs {q}",
                bank.bits_per_symbol()
            )));
        }
    }
    let uses_bcjr = config.first_iteration_equalizer == FirstEqualizer::Bcjr
        || (config.iterations > 1 && config.subsequent_equalizer == ConventionalEqualizer::Bcjr);
    let trellis = if uses_bcjr {
        Some(build_trellis(channel, constellation)?)
    } else {
        None
    };
    let interleaver = Interleaver::new(code.n(), config.interleaver_seed);
    let mut priors = vec![0.0; code.n()];
    let mut rounds = Vec::with_capacity(config.iterations);
    let mut decoded = Vec::new();
    for it in 0..config.iterations {
        let conventional = |eq: ConventionalEqualizer, priors: &[f64]| -> Result<Vec<f64>> {
            match eq {
                ConventionalEqualizer::Lmmse => {
                    lmmse_with_priors(z, channel, constellation, priors, config.n1, config.n2)
                }
                ConventionalEqualizer::Bcjr => {
                    map_extrinsic(z, trellis.as_ref().expect("trellis built"), channel.noise_variance(), priors)
                }
            }
        };
        let eq_llrs = if it == 0 {
            match config.first_iteration_equalizer {
                FirstEqualizer::Eqznet => eqznet_llrs(z, eqznet.expect("checked above")),
                FirstEqualizer::Lmmse => conventional(ConventionalEqualizer::Lmmse, &priors)?,
                FirstEqualizer::Bcjr => conventional(ConventionalEqualizer::Bcjr, &priors)?,
            }
        } else {
            conventional(config.subsequent_equalizer, &priors)?
        };
        let out = decode(code, &interleaver.deinterleave(&eq_llrs), config.decoder_iterations)?;
        decoded = code.extract_info(&out.hard_bits);
        rounds.push(IterationResult {
            info_bits: decoded.clone(),
            decoder_converged: out.converged,
            decoder_iterations: out.iterations,
        });
        if config.early_stop && out.converged {
            while rounds.len() < config.iterations {
                let last = rounds.last().expect("one round done").clone();
                rounds.push(IterationResult {
                    decoder_iterations: 0,
                    ..last
                });
            }
            break;
        }
        let ext: Vec<f64> = out.extrinsic.iter().map(|&l| clamp_llr(l)).collect();
        priors = interleaver.interleave(&ext);
    }
    Ok(TurboOutput {
        decoded_bits: decoded,
        iterations: rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmmse::{design_filter, llr};
    use crate::txchain::extract_frame;

    fn small_code() -> LdpcCode {
        LdpcCode::peg(240, 40, 3, 3).unwrap()
    }

    #[test]
    fn interleaver_round_trip() {
        let il = Interleaver::new(50, Some(9));
        let x: Vec<usize> = (0..50).collect();
        let y = il.interleave(&x);
        assert_ne!(x, y);
        assert_eq!(il.deinterleave(&y), x);
        assert_eq!(Interleaver::new(5, None).interleave(&x[..5]), x[..5].to_vec());
    }

    #[test]
    fn zero_priors_reduce_to_plain_lmmse() {
        let ch = ChannelModel::preset("h_A", 0.05).unwrap();
        let c = PamConstellation::new(2).unwrap();
        let z = ch.transmit(&gray_map(&random_bits(200, 1), &c).unwrap().symbols, 2);
        let out = lmmse_with_priors(&z, &ch, &c, &vec![0.0; 200], 5, 5).unwrap();
        let f = design_filter(&ch, 5, 5).unwrap();
        for (n, &o) in out.iter().enumerate() {
            assert_eq!(o, clamp_llr(llr(&f, &extract_frame(&z, n, 5, 5)).unwrap()));
        }
    }

    #[test]
    fn perfect_priors_cancel_all_isi() {
        let ch = ChannelModel::preset("h_B", 1e-10).unwrap();
        for order in [2, 4] {
            let c = PamConstellation::new(order).unwrap();
            let bits = random_bits(120, 5);
            let block = gray_map(&bits, &c).unwrap();
            let z = ch.convolve(&block.symbols);
            let priors: Vec<f64> = bits.iter().map(|&b| if b == 0 { 40.0 } else { -40.0 }).collect();
            let (est, gain, _) = sic_estimates(&z, &ch, &c, &priors, 4, 4).unwrap();
            // the last M_h symbols lose part of their energy past the block end
            let interior = block.symbols.len() - ch.memory();
            for (e, x) in est.iter().zip(&block.symbols).take(interior) {
                assert!((e / gain - x).abs() < 1e-6, "order {order} est {e} gain {gain} x {x}");
            }
        }
    }

    #[test]
    fn centre_prior_does_not_leak_on_memoryless_channel() {
        let ch = ChannelModel::new(vec![1.0], 0.3).unwrap();
        for order in [2, 4] {
            let c = PamConstellation::new(order).unwrap();
            let q = c.bits_per_symbol();
            let z = ch.transmit(&gray_map(&random_bits(40 * q, 3), &c).unwrap().symbols, 4);
            let zero = lmmse_with_priors(&z, &ch, &c, &vec![0.0; 40 * q], 2, 2).unwrap();
            // prior on bit 0 of every symbol only; other bits keep zero prior
            let priors: Vec<f64> = (0..40 * q).map(|i| if i % q == 0 { 3.5 } else { 0.0 }).collect();
            let with = lmmse_with_priors(&z, &ch, &c, &priors, 2, 2).unwrap();
            for i in (0..40 * q).step_by(q) {
                assert_eq!(zero[i], with[i]);
            }
        }
    }

    #[test]
    fn single_round_matches_serial_pipeline() {
        let code = small_code();
        let c = PamConstellation::new(2).unwrap();
        let ch = ChannelModel::preset("h_A", 0.08).unwrap();
        let blk = transmit_coded_block(&code, &ch, &c, Some(4), 1, 2).unwrap();
        let cfg = TurboConfig {
            iterations: 1,
            first_iteration_equalizer: FirstEqualizer::Lmmse,
            interleaver_seed: Some(4),
            ..TurboConfig::default()
        };
        let out = turbo_equalize(&blk.z, &code, &ch, &c, None, &cfg).unwrap();
        let f = design_filter(&ch, 7, 7).unwrap();
        let llrs: Vec<f64> = (0..blk.z.len())
            .map(|n| clamp_llr(llr(&f, &extract_frame(&blk.z, n, 7, 7)).unwrap()))
            .collect();
        let il = Interleaver::new(code.n(), Some(4));
        let serial = decode(&code, &il.deinterleave(&llrs), 50).unwrap();
        assert_eq!(out.decoded_bits, code.extract_info(&serial.hard_bits));
        assert_eq!(out.iterations.len(), 1);
    }

    #[test]
    fn noiseless_blocks_decode_cleanly() {
        let code = small_code();
        let ch = ChannelModel::preset("h_A", 1e-6).unwrap();
        for order in [2, 4] {
            let c = PamConstellation::new(order).unwrap();
            for (first, next) in [
                (FirstEqualizer::Lmmse, ConventionalEqualizer::Lmmse),
                (FirstEqualizer::Bcjr, ConventionalEqualizer::Bcjr),
                (FirstEqualizer::Lmmse, ConventionalEqualizer::Bcjr),
            ] {
                let cfg = TurboConfig {
                    first_iteration_equalizer: first,
                    subsequent_equalizer: next,
                    ..TurboConfig::default()
                };
                let blk = transmit_coded_block(&code, &ch, &c, cfg.interleaver_seed, 7, 8).unwrap();
                let out = turbo_equalize(&blk.z, &code, &ch, &c, None, &cfg).unwrap();
                assert_eq!(out.decoded_bits, blk.info_bits);
            }
        }
    }

    #[test]
    fn configuration_errors() {
        let code = small_code();
        let c = PamConstellation::new(2).unwrap();
        let ch = ChannelModel::preset("h_A", 0.1).unwrap();
        let z = vec![0.0; code.n()];
        assert!(matches!(
            turbo_equalize(&z, &code, &ch, &c, None, &TurboConfig::default()),
            Err(Error::Config(_))
        ));
        let cfg = TurboConfig {
            iterations: 0,
            ..TurboConfig::default()
        };
        assert!(turbo_equalize(&z, &code, &ch, &c, None, &cfg).is_err());
        let cfg = TurboConfig {
            first_iteration_equalizer: FirstEqualizer::Lmmse,
            ..TurboConfig::default()
        };
        assert!(turbo_equalize(&z[1..], &code, &ch, &c, None, &cfg).is_err());
    }

    #[test]
    fn shipped_code_shape() {
        let code = standard_code();
        assert_eq!((code.n(), code.k(), code.m()), (1998, 1776, 222));
    }
}
